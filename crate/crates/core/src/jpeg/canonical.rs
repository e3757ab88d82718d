//! Canonical (table-stripped) streams and their restoration.
//!
//! A canonical stream keeps only `SOI`, `SOF0`, `SOS`, the entropy-coded data
//! with its restart markers, and `EOI`. Everything that is identical across a
//! corpus encoded under one [`CodecProfile`] (JFIF header, quantization and
//! Huffman tables, restart interval) lives in a [`TableSet`] that is stored
//! once and spliced back in by [`restore`].

use std::path::Path;

use super::bits::BitWriter;
use super::decode::{CodingTables, FrameHeader, ScanDecoder, ScanHeader};
use super::encode::{app0_segment, dht_segment, dqt_segment, dri_segment, encode_block};
use super::huffman::HuffmanEncoder;
use super::segment::{parse_segments, SegmentKind};
use super::tables::{scale_quant_table, HuffmanSpec, CHROMA_QUANT_BASE, LUMA_QUANT_BASE};
use super::{CodecProfile, JpegError, Result, EOI, RST0, SOF0, SOI, SOS};

/// Magic bytes opening a table-set sidecar file.
pub const TABLESET_MAGIC: &[u8; 8] = b"CLMTBL01";

/// Upper bound on the MCU count accepted from a generated frame header.
const MAX_MCUS: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalStream {
    pub bytes: Vec<u8>,
    /// Offset of the 0xFF of every restart marker in `bytes`, ascending.
    pub mcu_offsets: Vec<usize>,
    pub width: u32,
    pub height: u32,
    pub profile: CodecProfile,
}

impl CanonicalStream {
    pub fn mcu_count(&self) -> u32 {
        let (c, r) = super::mcu_grid(self.width, self.height);
        c * r
    }

    /// Offset of the first entropy-coded byte (just past the SOS segment).
    pub fn entropy_start(&self) -> usize {
        // SOI + SOF0 + SOS, each length-prefixed after the SOI
        let mut pos = 2;
        for _ in 0..2 {
            let len = u16::from_be_bytes([self.bytes[pos + 2], self.bytes[pos + 3]]) as usize;
            pos += 2 + len;
        }
        pos
    }
}

/// The segments stripped from every file of one profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSet {
    pub profile: CodecProfile,
    /// APPn, COM and DQT segments, placed before the frame header.
    pub pre_frame: Vec<u8>,
    /// DHT and DRI segments, placed between the frame and scan headers.
    pub post_frame: Vec<u8>,
}

impl TableSet {
    /// The tables written by [`super::encode_image`] for `profile`.
    pub fn for_profile(profile: &CodecProfile) -> Result<Self> {
        profile.validate()?;
        let mut pre = Vec::new();
        app0_segment(&mut pre);
        dqt_segment(&mut pre, 0, &scale_quant_table(&LUMA_QUANT_BASE, profile.quality));
        dqt_segment(&mut pre, 1, &scale_quant_table(&CHROMA_QUANT_BASE, profile.quality));
        let mut post = Vec::new();
        dht_segment(&mut post, 0x00, &HuffmanSpec::luma_dc());
        dht_segment(&mut post, 0x10, &HuffmanSpec::luma_ac());
        dht_segment(&mut post, 0x01, &HuffmanSpec::chroma_dc());
        dht_segment(&mut post, 0x11, &HuffmanSpec::chroma_ac());
        dri_segment(&mut post, profile.restart_interval_mcus);
        Ok(Self {
            profile: *profile,
            pre_frame: pre,
            post_frame: post,
        })
    }

    /// All removed bytes in file order.
    pub fn removed_bytes(&self) -> Vec<u8> {
        [self.pre_frame.as_slice(), self.post_frame.as_slice()].concat()
    }

    fn coding_tables(&self) -> Result<CodingTables> {
        let body = self.removed_bytes();
        coding_tables_of(&body)
    }

    /// Sidecar layout: 8-byte magic, 8-byte profile hash, then the removed
    /// segment bytes exactly as they appear in a full file.
    pub fn to_sidecar(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pre_frame.len() + self.post_frame.len());
        out.extend_from_slice(TABLESET_MAGIC);
        out.extend_from_slice(&hash_bytes(&self.profile.hash()));
        out.extend_from_slice(&self.pre_frame);
        out.extend_from_slice(&self.post_frame);
        out
    }

    pub fn from_sidecar(data: &[u8]) -> Result<Self> {
        if data.len() < 16 || &data[..8] != TABLESET_MAGIC {
            return Err(JpegError::TableSet("bad magic".into()));
        }
        let body = &data[16..];
        let (pre, post) = split_tables(body)?;
        let tables = coding_tables_of(body)?;
        let profile = profile_of(&tables)?;
        if data[8..16] != hash_bytes(&profile.hash()) {
            return Err(JpegError::TableSet("profile hash mismatch".into()));
        }
        Ok(Self {
            profile,
            pre_frame: pre,
            post_frame: post,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_sidecar())
    }

    pub fn load(path: &Path) -> std::result::Result<Self, crate::Error> {
        let data = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_sidecar(&data)?)
    }
}

fn hash_bytes(hex: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap_or(0);
    }
    out
}

/// Wraps bare table segments in SOI/EOI so the segment parser can walk them.
fn wrapped(body: &[u8]) -> Vec<u8> {
    [&[0xFF, SOI][..], body, &[0xFF, EOI][..]].concat()
}

fn split_tables(body: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    let file = wrapped(body);
    let segs = parse_segments(&file).map_err(|e| JpegError::TableSet(e.to_string()))?;
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    for s in &segs[1..segs.len() - 1] {
        match s.kind {
            SegmentKind::App(_) | SegmentKind::Com | SegmentKind::Dqt => {
                pre.extend_from_slice(s.bytes)
            }
            SegmentKind::Dht | SegmentKind::Dri => post.extend_from_slice(s.bytes),
            k => return Err(JpegError::TableSet(format!("unexpected {k} segment"))),
        }
    }
    Ok((pre, post))
}

fn coding_tables_of(body: &[u8]) -> Result<CodingTables> {
    let file = wrapped(body);
    let segs = parse_segments(&file).map_err(|e| JpegError::TableSet(e.to_string()))?;
    let mut t = CodingTables::default();
    for s in &segs {
        t.absorb(s)?;
    }
    Ok(t)
}

/// Recovers the profile whose standard tables match `t`.
fn profile_of(t: &CodingTables) -> Result<CodecProfile> {
    let standard = [
        (&t.dc[0], HuffmanSpec::luma_dc()),
        (&t.ac[0], HuffmanSpec::luma_ac()),
        (&t.dc[1], HuffmanSpec::chroma_dc()),
        (&t.ac[1], HuffmanSpec::chroma_ac()),
    ];
    if standard.iter().any(|(got, want)| got.as_ref() != Some(want)) {
        return Err(JpegError::Unsupported(
            "custom or missing Huffman tables".into(),
        ));
    }
    let (Some(luma), Some(chroma)) = (t.quant[0], t.quant[1]) else {
        return Err(JpegError::Unsupported("missing quantization tables".into()));
    };
    let quality = (1..=100u8)
        .find(|&q| {
            scale_quant_table(&LUMA_QUANT_BASE, q) == luma
                && scale_quant_table(&CHROMA_QUANT_BASE, q) == chroma
        })
        .ok_or_else(|| JpegError::Unsupported("non-standard quantization tables".into()))?;
    if t.restart_interval == 0 {
        return Err(JpegError::Unsupported("no restart interval".into()));
    }
    Ok(CodecProfile {
        quality,
        restart_interval_mcus: t.restart_interval,
        ..CodecProfile::default()
    })
}

/// Strips tables and headers from a baseline 4:2:0 file.
pub fn canonicalize(file: &[u8]) -> Result<(CanonicalStream, TableSet)> {
    let segs = parse_segments(file)?;
    let mut bytes = Vec::with_capacity(file.len());
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut tables = CodingTables::default();
    let mut mcu_offsets = Vec::new();
    let mut frame: Option<FrameHeader> = None;
    let mut scans = 0;
    for s in &segs {
        match s.kind {
            SegmentKind::Soi | SegmentKind::Eoi | SegmentKind::EntropyData => {
                bytes.extend_from_slice(s.bytes)
            }
            SegmentKind::Rst(_) => {
                mcu_offsets.push(bytes.len());
                bytes.extend_from_slice(s.bytes);
            }
            SegmentKind::Sof0 => {
                if frame.is_some() {
                    return Err(JpegError::Unsupported("multiple frames".into()));
                }
                let f = FrameHeader::parse(s.payload(), s.offset)?;
                if !f.is_420() {
                    return Err(JpegError::Unsupported("chroma layout other than 4:2:0".into()));
                }
                frame = Some(f);
                bytes.extend_from_slice(s.bytes);
            }
            SegmentKind::Sos => {
                scans += 1;
                if scans > 1 {
                    return Err(JpegError::Unsupported("multiple scans".into()));
                }
                let f = frame
                    .as_ref()
                    .ok_or_else(|| JpegError::malformed(s.offset, "SOS before SOF"))?;
                let scan = ScanHeader::parse(s.payload(), f, s.offset)?;
                if scan.components.len() != 3 {
                    return Err(JpegError::Unsupported("non-interleaved scan".into()));
                }
                bytes.extend_from_slice(s.bytes);
            }
            SegmentKind::Sof(n) => {
                return Err(JpegError::Unsupported(format!(
                    "SOF{n} frame (progressive, lossless or arithmetic coding)"
                )))
            }
            SegmentKind::App(_) | SegmentKind::Com | SegmentKind::Dqt => {
                tables.absorb(s)?;
                pre.extend_from_slice(s.bytes);
            }
            SegmentKind::Dht | SegmentKind::Dri => {
                if frame.is_none() {
                    // keep restore's fixed placement byte-faithful
                    return Err(JpegError::Unsupported(format!("{} before frame header", s.kind)));
                }
                tables.absorb(s)?;
                post.extend_from_slice(s.bytes);
            }
            SegmentKind::Other(c) => {
                return Err(JpegError::Unsupported(format!("marker FF{c:02X}")));
            }
        }
    }
    let frame = frame.ok_or_else(|| JpegError::malformed(0, "no frame header"))?;
    let profile = profile_of(&tables)?;
    let stream = CanonicalStream {
        bytes,
        mcu_offsets,
        width: frame.width,
        height: frame.height,
        profile,
    };
    let intervals = stream.mcu_count().div_ceil(u32::from(profile.restart_interval_mcus));
    if stream.mcu_offsets.len() as u32 + 1 != intervals {
        return Err(JpegError::malformed(
            0,
            format!(
                "{} restart markers for {} intervals",
                stream.mcu_offsets.len(),
                intervals
            ),
        ));
    }
    Ok((
        stream,
        TableSet {
            profile,
            pre_frame: pre,
            post_frame: post,
        },
    ))
}

/// Byte offset of a prompt covering `floor(ratio * mcus)` complete MCUs:
/// just past the restart marker that closes the last of them. Zero when no
/// MCU is covered, the whole stream when all are.
pub fn prefix_at_ratio(stream: &CanonicalStream, ratio: f64) -> usize {
    let r = if ratio.is_nan() { 0.0 } else { ratio.clamp(0.0, 1.0) };
    let n = stream.mcu_count();
    let k = ((r * f64::from(n)).floor() as u32).min(n);
    let intervals = k / u32::from(stream.profile.restart_interval_mcus);
    if intervals == 0 {
        0
    } else if k >= n || intervals as usize > stream.mcu_offsets.len() {
        stream.bytes.len()
    } else {
        stream.mcu_offsets[intervals as usize - 1] + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SalvageStatus {
    /// Every interval well formed, correctly delimited, terminated by EOI.
    Clean,
    /// Some intervals were dropped and replaced with mid-gray MCUs, or bytes
    /// after the final interval were discarded.
    Salvaged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restored {
    pub bytes: Vec<u8>,
    pub status: SalvageStatus,
    /// MCUs taken from the input.
    pub kept_mcus: u32,
    pub total_mcus: u32,
}

/// Re-inserts `tables` into a canonical stream.
pub fn restore(stream: &CanonicalStream, tables: &TableSet) -> Result<Vec<u8>> {
    if stream.profile != tables.profile {
        return Err(JpegError::TableSet(format!(
            "stream profile {:?} does not match tables {:?}",
            stream.profile, tables.profile
        )));
    }
    let r = restore_generated(&stream.bytes, tables)?;
    if r.status != SalvageStatus::Clean {
        return Err(JpegError::malformed(0, "canonical stream is not well formed"));
    }
    Ok(r.bytes)
}

fn read_header_segment(bytes: &[u8], pos: usize, marker: u8) -> Result<(&[u8], usize)> {
    let bad = |why: &str| JpegError::Unrecoverable(format!("header at byte {pos}: {why}"));
    if bytes.get(pos) != Some(&0xFF) || bytes.get(pos + 1) != Some(&marker) {
        return Err(bad(&format!("expected marker FF{marker:02X}")));
    }
    let len = bytes
        .get(pos + 2..pos + 4)
        .map(|l| u16::from_be_bytes([l[0], l[1]]) as usize)
        .ok_or_else(|| bad("truncated"))?;
    let end = pos + 2 + len;
    if len < 2 || end > bytes.len() {
        return Err(bad("truncated"));
    }
    Ok((&bytes[pos + 4..end], end))
}

/// Splits entropy data into (interval bytes, terminating marker) pairs. The
/// marker is `None` when the data ends without one.
fn split_intervals(data: &[u8]) -> Vec<(&[u8], Option<u8>, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < data.len() {
        if data[i] == 0xFF {
            match data.get(i + 1) {
                Some(0x00) => {
                    i += 2;
                    continue;
                }
                Some(&m) => {
                    out.push((&data[start..i], Some(m), i + 2));
                    if !(0xD0..=0xD7).contains(&m) {
                        return out;
                    }
                    i += 2;
                    start = i;
                    continue;
                }
                None => break,
            }
        }
        i += 1;
    }
    out.push((&data[start..], None, data.len()));
    out
}

/// Restores model-generated bytes, salvaging the longest well-formed prefix.
///
/// The frame and scan headers must parse; every interval after them is kept
/// while it decodes to exactly its MCUs and is closed by the expected marker
/// (`RSTn` in sequence, `EOI` after the last). Missing intervals are filled
/// with mid-gray MCUs.
pub fn restore_generated(bytes: &[u8], tables: &TableSet) -> Result<Restored> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err(JpegError::Unrecoverable("missing SOI".into()));
    }
    let (sof, pos) = read_header_segment(bytes, 2, SOF0)?;
    let sof_bytes = &bytes[2..pos];
    let frame = FrameHeader::parse(sof, 2).map_err(|e| JpegError::Unrecoverable(e.to_string()))?;
    if !frame.is_420() {
        return Err(JpegError::Unrecoverable("frame is not 4:2:0".into()));
    }
    let (sos, entropy_start) = read_header_segment(bytes, pos, SOS)?;
    let sos_bytes = &bytes[pos..entropy_start];
    let scan = ScanHeader::parse(sos, &frame, pos)
        .map_err(|e| JpegError::Unrecoverable(e.to_string()))?;
    if scan.components.len() != 3 {
        return Err(JpegError::Unrecoverable("non-interleaved scan".into()));
    }
    let coding = tables.coding_tables()?;
    let decoder = ScanDecoder::new(&frame, &scan, &coding)
        .map_err(|e| JpegError::Unrecoverable(e.to_string()))?;
    let total = decoder.mcu_count();
    if total > MAX_MCUS {
        return Err(JpegError::Unrecoverable(format!("{total} MCUs exceeds limit")));
    }
    let ri = u32::from(tables.profile.restart_interval_mcus);
    let n_intervals = total.div_ceil(ri);
    let intervals = split_intervals(&bytes[entropy_start..]);

    let mut out = Vec::with_capacity(bytes.len() + tables.pre_frame.len() + tables.post_frame.len());
    out.extend_from_slice(&[0xFF, SOI]);
    out.extend_from_slice(&tables.pre_frame);
    out.extend_from_slice(sof_bytes);
    out.extend_from_slice(&tables.post_frame);
    out.extend_from_slice(sos_bytes);

    let mut kept = 0u32;
    let mut consumed_to = entropy_start;
    for (idx, &(data, marker, end)) in intervals.iter().enumerate().take(n_intervals as usize) {
        let idx = idx as u32;
        let last = idx + 1 == n_intervals;
        let expected = if last { EOI } else { RST0 + (idx % 8) as u8 };
        if marker != Some(expected) {
            break;
        }
        let n = ri.min(total - idx * ri);
        if decoder.check_interval(data, n).is_err() {
            break;
        }
        out.extend_from_slice(data);
        if !last {
            out.extend_from_slice(&[0xFF, expected]);
        }
        kept += 1;
        consumed_to = entropy_start + end;
    }
    if kept == 0 {
        return Err(JpegError::Unrecoverable("no well-formed MCU interval".into()));
    }
    if kept < n_intervals {
        let gray = gray_interval_bytes(tables, &frame, ri)?;
        for idx in kept..n_intervals {
            let n = ri.min(total - idx * ri);
            if n == ri {
                out.extend_from_slice(&gray);
            } else {
                out.extend_from_slice(&gray_interval_bytes(tables, &frame, n)?);
            }
            if idx + 1 < n_intervals {
                out.extend_from_slice(&[0xFF, RST0 + (idx % 8) as u8]);
            }
        }
    }
    out.extend_from_slice(&[0xFF, EOI]);
    let status = if kept == n_intervals && consumed_to == bytes.len() {
        SalvageStatus::Clean
    } else {
        SalvageStatus::Salvaged
    };
    Ok(Restored {
        bytes: out,
        status,
        kept_mcus: (kept * ri).min(total),
        total_mcus: total,
    })
}

/// Entropy bytes of `n` MCUs whose coefficients are all zero (mid-gray).
fn gray_interval_bytes(tables: &TableSet, frame: &FrameHeader, n: u32) -> Result<Vec<u8>> {
    let coding = tables.coding_tables()?;
    let spec = |s: &Option<HuffmanSpec>| {
        s.as_ref()
            .map(HuffmanEncoder::new)
            .ok_or_else(|| JpegError::TableSet("missing Huffman table".into()))
    };
    let (dc0, ac0, dc1, ac1) = (
        spec(&coding.dc[0])?,
        spec(&coding.ac[0])?,
        spec(&coding.dc[1])?,
        spec(&coding.ac[1])?,
    );
    let zero = [0i32; 64];
    let mut w = BitWriter::new();
    let mut preds = [0i32; 3];
    for _ in 0..n {
        for (ci, c) in frame.components.iter().enumerate() {
            let (dc, ac) = if ci == 0 { (&dc0, &ac0) } else { (&dc1, &ac1) };
            for _ in 0..(c.h * c.v) {
                encode_block(&mut w, &zero, &mut preds[ci], dc, ac);
            }
        }
    }
    w.flush();
    Ok(w.into_bytes())
}
