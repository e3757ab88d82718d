//! Strict baseline decoder.
//!
//! Every restart interval must decode to exactly its MCU count with only
//! 1-bit fill left over, so a successful decode doubles as a well-formedness
//! check. Chroma is upsampled by replication, which keeps each MCU's pixels a
//! function of that MCU's coefficients alone.

use std::sync::OnceLock;

use super::bits::{BitError, BitReader};
use super::huffman::{extend, HuffmanDecoder, HuffmanError};
use super::segment::{parse_segments, Segment, SegmentKind};
use super::tables::{HuffmanSpec, ZIGZAG};
use super::{JpegError, Result};
use crate::image::RgbImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: u8,
    pub h: u8,
    pub v: u8,
    pub quant_table: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameHeader {
    pub width: u32,
    pub height: u32,
    pub components: Vec<Component>,
}

impl FrameHeader {
    pub fn parse(payload: &[u8], offset: usize) -> Result<Self> {
        if payload.len() < 6 {
            return Err(JpegError::malformed(offset, "SOF0 too short"));
        }
        if payload[0] != 8 {
            return Err(JpegError::Unsupported(format!("{}-bit precision", payload[0])));
        }
        let height = u32::from(u16::from_be_bytes([payload[1], payload[2]]));
        let width = u32::from(u16::from_be_bytes([payload[3], payload[4]]));
        let n = payload[5] as usize;
        if width == 0 || height == 0 {
            return Err(JpegError::Unsupported("zero frame dimension".into()));
        }
        if !(n == 1 || n == 3) || payload.len() != 6 + 3 * n {
            return Err(JpegError::Unsupported(format!("{n} components")));
        }
        let components = payload[6..]
            .chunks_exact(3)
            .map(|c| Component {
                id: c[0],
                h: c[1] >> 4,
                v: c[1] & 15,
                quant_table: c[2],
            })
            .collect::<Vec<_>>();
        for c in &components {
            if !(1..=2).contains(&c.h) || !(1..=2).contains(&c.v) || c.quant_table > 3 {
                return Err(JpegError::Unsupported(format!(
                    "component {} sampling {}x{} table {}",
                    c.id, c.h, c.v, c.quant_table
                )));
            }
        }
        Ok(Self {
            width,
            height,
            components,
        })
    }

    pub fn hmax(&self) -> u8 {
        self.components.iter().map(|c| c.h).max().unwrap_or(1)
    }

    pub fn vmax(&self) -> u8 {
        self.components.iter().map(|c| c.v).max().unwrap_or(1)
    }

    /// MCU grid of an interleaved scan.
    pub fn mcu_grid(&self) -> (u32, u32) {
        let (mw, mh) = (8 * u32::from(self.hmax()), 8 * u32::from(self.vmax()));
        (self.width.div_ceil(mw), self.height.div_ceil(mh))
    }

    /// True for the 3-component layout with 2x2 luma and 1x1 chroma sampling.
    pub fn is_420(&self) -> bool {
        self.components.len() == 3
            && self.components[0].h == 2
            && self.components[0].v == 2
            && self.components[1..].iter().all(|c| c.h == 1 && c.v == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanHeader {
    /// (frame component index, dc table, ac table)
    pub components: Vec<(usize, u8, u8)>,
}

impl ScanHeader {
    pub fn parse(payload: &[u8], frame: &FrameHeader, offset: usize) -> Result<Self> {
        let n = payload.first().copied().unwrap_or(0) as usize;
        if n == 0 || payload.len() != 4 + 2 * n {
            return Err(JpegError::malformed(offset, "SOS length"));
        }
        let mut components = Vec::with_capacity(n);
        for c in payload[1..1 + 2 * n].chunks_exact(2) {
            let idx = frame
                .components
                .iter()
                .position(|fc| fc.id == c[0])
                .ok_or_else(|| JpegError::malformed(offset, format!("scan component {}", c[0])))?;
            let (td, ta) = (c[1] >> 4, c[1] & 15);
            if td > 3 || ta > 3 {
                return Err(JpegError::malformed(offset, "huffman table id"));
            }
            components.push((idx, td, ta));
        }
        let tail = &payload[1 + 2 * n..];
        if tail != [0, 63, 0] {
            return Err(JpegError::Unsupported(format!(
                "spectral selection {}..{} / approximation {:#x}",
                tail[0], tail[1], tail[2]
            )));
        }
        Ok(Self { components })
    }
}

/// Quantization and Huffman tables accumulated while walking a stream.
#[derive(Debug, Clone, Default)]
pub struct CodingTables {
    /// Natural order.
    pub quant: [Option<[u16; 64]>; 4],
    pub dc: [Option<HuffmanSpec>; 4],
    pub ac: [Option<HuffmanSpec>; 4],
    pub restart_interval: u16,
}

impl CodingTables {
    /// Feeds one DQT, DHT or DRI segment; other kinds are ignored.
    pub fn absorb(&mut self, seg: &Segment<'_>) -> Result<()> {
        let p = seg.payload();
        match seg.kind {
            SegmentKind::Dqt => {
                let mut p = p;
                while !p.is_empty() {
                    let (pq, tq) = (p[0] >> 4, (p[0] & 15) as usize);
                    if tq > 3 {
                        return Err(JpegError::malformed(seg.offset, "DQT id"));
                    }
                    let mut t = [0u16; 64];
                    let width = if pq == 0 { 1 } else { 2 };
                    for (k, &n) in ZIGZAG.iter().enumerate() {
                        t[n] = if width == 1 {
                            u16::from(p[1 + k])
                        } else {
                            u16::from_be_bytes([p[1 + 2 * k], p[2 + 2 * k]])
                        };
                    }
                    if t.contains(&0) {
                        return Err(JpegError::malformed(seg.offset, "zero quantizer"));
                    }
                    self.quant[tq] = Some(t);
                    p = &p[1 + 64 * width..];
                }
            }
            SegmentKind::Dht => {
                let mut p = p;
                while !p.is_empty() {
                    let (class, id) = (p[0] >> 4, (p[0] & 15) as usize);
                    if class > 1 || id > 3 {
                        return Err(JpegError::malformed(seg.offset, "DHT class/id"));
                    }
                    let mut counts = [0u8; 16];
                    counts.copy_from_slice(&p[1..17]);
                    let n: usize = counts.iter().map(|&c| c as usize).sum();
                    let spec = HuffmanSpec {
                        counts,
                        symbols: p[17..17 + n].to_vec(),
                    };
                    if class == 0 {
                        self.dc[id] = Some(spec);
                    } else {
                        self.ac[id] = Some(spec);
                    }
                    p = &p[17 + n..];
                }
            }
            SegmentKind::Dri => {
                self.restart_interval = u16::from_be_bytes([p[0], p[1]]);
            }
            _ => {}
        }
        Ok(())
    }
}

/// Why an MCU failed to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McuError {
    Exhausted,
    BadStuffing,
    InvalidCode,
    CoefficientOverrun,
    /// Bits left after the interval's last MCU are more than fill, or not all ones.
    TrailingData,
}

impl From<HuffmanError> for McuError {
    fn from(e: HuffmanError) -> Self {
        match e {
            HuffmanError::Bits(BitError::Exhausted) => McuError::Exhausted,
            HuffmanError::Bits(BitError::BadStuffing) => McuError::BadStuffing,
            HuffmanError::InvalidCode => McuError::InvalidCode,
        }
    }
}

impl From<BitError> for McuError {
    fn from(e: BitError) -> Self {
        HuffmanError::Bits(e).into()
    }
}

/// Block layout of one MCU: (scan component slot, block x, block y) offsets.
#[derive(Debug, Clone)]
struct McuLayout {
    blocks: Vec<(usize, u32, u32)>,
}

/// Entropy decoder bound to a frame, scan and table set.
#[derive(Debug, Clone)]
pub struct ScanDecoder {
    frame: FrameHeader,
    scan: ScanHeader,
    dc: Vec<HuffmanDecoder>,
    ac: Vec<HuffmanDecoder>,
    quant: Vec<[u16; 64]>,
    layout: McuLayout,
    /// MCU grid of this scan.
    grid: (u32, u32),
}

impl ScanDecoder {
    pub fn new(frame: &FrameHeader, scan: &ScanHeader, tables: &CodingTables) -> Result<Self> {
        let mut dc = Vec::new();
        let mut ac = Vec::new();
        let mut quant = Vec::new();
        for &(ci, td, ta) in &scan.components {
            let missing = |what: &str| JpegError::malformed(0, format!("missing {what} table"));
            dc.push(HuffmanDecoder::new(
                tables.dc[td as usize].as_ref().ok_or_else(|| missing("DC"))?,
            ));
            ac.push(HuffmanDecoder::new(
                tables.ac[ta as usize].as_ref().ok_or_else(|| missing("AC"))?,
            ));
            let tq = frame.components[ci].quant_table as usize;
            quant.push(tables.quant[tq].ok_or_else(|| missing("quantization"))?);
        }
        let (layout, grid) = if scan.components.len() == 1 {
            let c = &frame.components[scan.components[0].0];
            let (hmax, vmax) = (u32::from(frame.hmax()), u32::from(frame.vmax()));
            let cw = (frame.width * u32::from(c.h)).div_ceil(hmax);
            let ch = (frame.height * u32::from(c.v)).div_ceil(vmax);
            (
                McuLayout {
                    blocks: vec![(0, 0, 0)],
                },
                (cw.div_ceil(8), ch.div_ceil(8)),
            )
        } else {
            let mut blocks = Vec::new();
            for (slot, &(ci, _, _)) in scan.components.iter().enumerate() {
                let c = &frame.components[ci];
                for by in 0..u32::from(c.v) {
                    for bx in 0..u32::from(c.h) {
                        blocks.push((slot, bx, by));
                    }
                }
            }
            (McuLayout { blocks }, frame.mcu_grid())
        };
        Ok(Self {
            frame: frame.clone(),
            scan: scan.clone(),
            dc,
            ac,
            quant,
            layout,
            grid,
        })
    }

    pub fn mcu_count(&self) -> u32 {
        self.grid.0 * self.grid.1
    }

    pub fn grid(&self) -> (u32, u32) {
        self.grid
    }

    fn decode_block(
        &self,
        r: &mut BitReader<'_>,
        slot: usize,
        pred: &mut i32,
    ) -> Result<[i32; 64], McuError> {
        let mut block = [0i32; 64];
        let cat = u32::from(self.dc[slot].decode(r)?);
        if cat > 11 {
            return Err(McuError::InvalidCode);
        }
        let diff = extend(r.bits(cat)?, cat);
        *pred += diff;
        block[0] = *pred;
        let mut k = 1;
        while k < 64 {
            let rs = self.ac[slot].decode(r)?;
            let (run, size) = (u32::from(rs >> 4), u32::from(rs & 15));
            if size == 0 {
                if run == 15 {
                    k += 16;
                    if k > 64 {
                        return Err(McuError::CoefficientOverrun);
                    }
                    continue;
                }
                break;
            }
            k += run as usize;
            if k > 63 {
                return Err(McuError::CoefficientOverrun);
            }
            block[ZIGZAG[k]] = extend(r.bits(size)?, size);
            k += 1;
        }
        Ok(block)
    }

    /// Decodes one restart interval holding `n_mcus` MCUs from its stuffed
    /// bytes, returning quantized coefficient blocks in MCU order.
    pub fn decode_interval(
        &self,
        data: &[u8],
        n_mcus: u32,
    ) -> Result<Vec<[i32; 64]>, McuError> {
        let mut r = BitReader::new(data)?;
        let mut preds = vec![0i32; self.scan.components.len()];
        let mut out = Vec::with_capacity(n_mcus as usize * self.layout.blocks.len());
        for _ in 0..n_mcus {
            for &(slot, _, _) in &self.layout.blocks {
                out.push(self.decode_block(&mut r, slot, &mut preds[slot])?);
            }
        }
        let (fill, n) = r.remaining_bits();
        if n >= 8 || fill != (1 << n) - 1 {
            return Err(McuError::TrailingData);
        }
        Ok(out)
    }

    /// Well-formedness of one interval.
    pub fn check_interval(&self, data: &[u8], n_mcus: u32) -> Result<(), McuError> {
        self.decode_interval(data, n_mcus).map(|_| ())
    }

    fn place(&self, planes: &mut [Plane], mcu: u32, blocks: &[[i32; 64]]) {
        let (cols, _) = self.grid;
        let (mx, my) = (mcu % cols, mcu / cols);
        for (&(slot, bx, by), coefs) in self.layout.blocks.iter().zip(blocks) {
            let ci = self.scan.components[slot].0;
            let c = &self.frame.components[ci];
            let (x0, y0) = if self.scan.components.len() == 1 {
                (mx * 8, my * 8)
            } else {
                ((mx * u32::from(c.h) + bx) * 8, (my * u32::from(c.v) + by) * 8)
            };
            let samples = idct_block(coefs, &self.quant[slot]);
            planes[ci].put_block(x0, y0, &samples);
        }
    }
}

/// One decoded component at its own sampling resolution, padded to whole
/// blocks of the MCU grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<u8>,
}

impl Plane {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            samples: vec![128; width as usize * height as usize],
        }
    }

    fn put_block(&mut self, x0: u32, y0: u32, s: &[u8; 64]) {
        for r in 0..8 {
            let y = y0 + r;
            if y >= self.height {
                break;
            }
            for c in 0..8 {
                let x = x0 + c;
                if x < self.width {
                    self.samples[(y * self.width + x) as usize] = s[(r * 8 + c) as usize];
                }
            }
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.samples[(y * self.width + x) as usize]
    }
}

fn idct_table() -> &'static [[f32; 8]; 8] {
    static T: OnceLock<[[f32; 8]; 8]> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = [[0f32; 8]; 8];
        for (u, row) in t.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = (cu / 2.0
                    * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos())
                    as f32;
            }
        }
        t
    })
}

fn idct_block(coefs: &[i32; 64], quant: &[u16; 64]) -> [u8; 64] {
    let t = idct_table();
    let mut deq = [0f32; 64];
    for i in 0..64 {
        deq[i] = (coefs[i] * i32::from(quant[i])) as f32;
    }
    // rows: tmp[v][x] = sum_u deq[v][u] t[u][x]
    let mut tmp = [0f32; 64];
    for v in 0..8 {
        for x in 0..8 {
            let mut s = 0f32;
            for u in 0..8 {
                s += deq[v * 8 + u] * t[u][x];
            }
            tmp[v * 8 + x] = s;
        }
    }
    let mut out = [0u8; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0f32;
            for v in 0..8 {
                s += tmp[v * 8 + x] * t[v][y];
            }
            out[y * 8 + x] = (s.round() + 128.0).clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedImage {
    pub frame: FrameHeader,
    /// Component planes at sampled resolution, padded to whole MCUs.
    pub planes: Vec<Plane>,
    pub rgb: RgbImage,
}

impl DecodedImage {
    /// Pixels of MCU `index` (row-major in the interleaved MCU grid).
    pub fn mcu_pixels(&self, index: u32) -> Vec<u8> {
        let (cols, _) = self.frame.mcu_grid();
        let (mw, mh) = (8 * u32::from(self.frame.hmax()), 8 * u32::from(self.frame.vmax()));
        let (x0, y0) = ((index % cols) * mw, (index / cols) * mh);
        let mut out = Vec::with_capacity((mw * mh * 3) as usize);
        for y in y0..(y0 + mh).min(self.rgb.height()) {
            for x in x0..(x0 + mw).min(self.rgb.width()) {
                out.extend_from_slice(&self.rgb.pixel(x, y));
            }
        }
        out
    }
}

/// Decodes a complete baseline JPEG file.
pub fn decode(file: &[u8]) -> Result<DecodedImage> {
    let segs = parse_segments(file)?;
    let mut tables = CodingTables::default();
    let mut frame: Option<FrameHeader> = None;
    let mut planes: Vec<Plane> = Vec::new();
    let mut i = 0;
    while i < segs.len() {
        let seg = &segs[i];
        match seg.kind {
            SegmentKind::Sof0 => {
                if frame.is_some() {
                    return Err(JpegError::malformed(seg.offset, "second frame"));
                }
                let f = FrameHeader::parse(seg.payload(), seg.offset)?;
                let (cols, rows) = f.mcu_grid();
                planes = f
                    .components
                    .iter()
                    .map(|c| {
                        Plane::new(cols * u32::from(c.h) * 8, rows * u32::from(c.v) * 8)
                    })
                    .collect();
                frame = Some(f);
            }
            SegmentKind::Sof(n) => {
                return Err(JpegError::Unsupported(format!("SOF{n} frame")));
            }
            SegmentKind::Sos => {
                let f = frame
                    .as_ref()
                    .ok_or_else(|| JpegError::malformed(seg.offset, "SOS before SOF"))?;
                let scan = ScanHeader::parse(seg.payload(), f, seg.offset)?;
                let dec = ScanDecoder::new(f, &scan, &tables)?;
                i = decode_scan(&dec, &segs, i + 1, tables.restart_interval, &mut planes)?;
                continue;
            }
            _ => tables.absorb(seg)?,
        }
        i += 1;
    }
    let frame = frame.ok_or_else(|| JpegError::malformed(0, "no frame"))?;
    let rgb = to_rgb(&frame, &planes);
    Ok(DecodedImage { frame, planes, rgb })
}

/// Decodes the entropy segments following an SOS at `segs[start]`; returns the
/// index of the first segment after the scan.
fn decode_scan(
    dec: &ScanDecoder,
    segs: &[Segment<'_>],
    start: usize,
    restart_interval: u16,
    planes: &mut [Plane],
) -> Result<usize> {
    let total = dec.mcu_count();
    let per = if restart_interval == 0 {
        total
    } else {
        u32::from(restart_interval)
    };
    let mut mcu = 0u32;
    let mut i = start;
    let mut expected_rst = 0u8;
    while mcu < total {
        let seg = segs
            .get(i)
            .ok_or_else(|| JpegError::malformed(0, "scan ended early"))?;
        if seg.kind != SegmentKind::EntropyData {
            return Err(JpegError::malformed(seg.offset, "expected entropy data"));
        }
        let n = per.min(total - mcu);
        let blocks = dec.decode_interval(seg.bytes, n).map_err(|e| {
            JpegError::malformed(seg.offset, format!("MCU {mcu}: {e:?}"))
        })?;
        let per_mcu = blocks.len() / n as usize;
        for (k, chunk) in blocks.chunks_exact(per_mcu).enumerate() {
            dec.place(planes, mcu + k as u32, chunk);
        }
        mcu += n;
        i += 1;
        if mcu < total {
            match segs.get(i).map(|s| s.kind) {
                Some(SegmentKind::Rst(k)) if k == expected_rst => {
                    expected_rst = (expected_rst + 1) & 7;
                    i += 1;
                }
                _ => {
                    return Err(JpegError::malformed(
                        segs.get(i).map_or(0, |s| s.offset),
                        format!("expected RST{expected_rst}"),
                    ))
                }
            }
        }
    }
    Ok(i)
}

fn to_rgb(frame: &FrameHeader, planes: &[Plane]) -> RgbImage {
    let (hmax, vmax) = (u32::from(frame.hmax()), u32::from(frame.vmax()));
    let sample = |ci: usize, x: u32, y: u32| {
        let c = &frame.components[ci];
        let sx = x * u32::from(c.h) / hmax;
        let sy = y * u32::from(c.v) / vmax;
        f32::from(planes[ci].at(sx, sy))
    };
    RgbImage::from_fn(frame.width, frame.height, |x, y| {
        if planes.len() == 1 {
            let g = planes[0].at(x, y);
            return [g, g, g];
        }
        let yy = sample(0, x, y);
        let cb = sample(1, x, y) - 128.0;
        let cr = sample(2, x, y) - 128.0;
        let clamp = |v: f32| v.round().clamp(0.0, 255.0) as u8;
        [
            clamp(yy + 1.402 * cr),
            clamp(yy - 0.344_136 * cb - 0.714_136 * cr),
            clamp(yy + 1.772 * cb),
        ]
    })
}
