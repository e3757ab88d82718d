//! Lossless partition of a JPEG file into marker segments and entropy spans.

use std::fmt;

use super::{JpegError, Result, COM, DHT, DQT, DRI, EOI, RST0, SOF0, SOI, SOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Soi,
    App(u8),
    Com,
    Dqt,
    Dht,
    Sof0,
    /// Any other start-of-frame (progressive, lossless, arithmetic...).
    Sof(u8),
    Dri,
    Sos,
    Rst(u8),
    Eoi,
    EntropyData,
    /// A marker with a length field that has no dedicated kind.
    Other(u8),
}

impl SegmentKind {
    fn from_marker(code: u8) -> Self {
        match code {
            SOI => Self::Soi,
            EOI => Self::Eoi,
            SOF0 => Self::Sof0,
            0xC1..=0xCF if code != DHT && code != 0xC8 && code != 0xCC => Self::Sof(code - 0xC0),
            DHT => Self::Dht,
            DQT => Self::Dqt,
            DRI => Self::Dri,
            SOS => Self::Sos,
            COM => Self::Com,
            0xE0..=0xEF => Self::App(code - 0xE0),
            0xD0..=0xD7 => Self::Rst(code - RST0),
            _ => Self::Other(code),
        }
    }

    pub fn marker_code(&self) -> Option<u8> {
        Some(match *self {
            Self::Soi => SOI,
            Self::App(n) => 0xE0 + n,
            Self::Com => COM,
            Self::Dqt => DQT,
            Self::Dht => DHT,
            Self::Sof0 => SOF0,
            Self::Sof(n) => 0xC0 + n,
            Self::Dri => DRI,
            Self::Sos => SOS,
            Self::Rst(n) => RST0 + n,
            Self::Eoi => EOI,
            Self::Other(c) => c,
            Self::EntropyData => return None,
        })
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Soi => write!(f, "SOI"),
            Self::App(n) => write!(f, "APP{n}"),
            Self::Com => write!(f, "COM"),
            Self::Dqt => write!(f, "DQT"),
            Self::Dht => write!(f, "DHT"),
            Self::Sof0 => write!(f, "SOF0"),
            Self::Sof(n) => write!(f, "SOF{n}"),
            Self::Dri => write!(f, "DRI"),
            Self::Sos => write!(f, "SOS"),
            Self::Rst(n) => write!(f, "RST{n}"),
            Self::Eoi => write!(f, "EOI"),
            Self::EntropyData => write!(f, "entropy"),
            Self::Other(c) => write!(f, "FF{c:02X}"),
        }
    }
}

/// One contiguous span of the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment<'a> {
    pub kind: SegmentKind,
    pub offset: usize,
    /// Every byte of the span, including the marker and length field.
    pub bytes: &'a [u8],
}

impl<'a> Segment<'a> {
    /// Bytes after the marker and length field (the whole span for entropy data).
    pub fn payload(&self) -> &'a [u8] {
        match self.kind {
            SegmentKind::EntropyData => self.bytes,
            SegmentKind::Soi | SegmentKind::Eoi | SegmentKind::Rst(_) => &[],
            _ => {
                let start = self.marker_start() + 4;
                &self.bytes[start.min(self.bytes.len())..]
            }
        }
    }

    /// Offset of the 0xFF introducing the marker (after any fill bytes).
    fn marker_start(&self) -> usize {
        self.bytes.iter().take_while(|&&b| b == 0xFF).count().saturating_sub(1)
    }
}

fn has_length(code: u8) -> bool {
    !matches!(code, SOI | EOI | 0x01 | 0xD0..=0xD7)
}

fn check_payload(kind: SegmentKind, payload: &[u8], offset: usize) -> Result<()> {
    let bad = |why: &str| Err(JpegError::malformed(offset, format!("{kind}: {why}")));
    match kind {
        SegmentKind::Dqt => {
            let mut p = payload;
            while !p.is_empty() {
                let n = if p[0] >> 4 == 0 { 65 } else { 129 };
                if p.len() < n {
                    return bad("table length does not match segment length");
                }
                p = &p[n..];
            }
        }
        SegmentKind::Dht => {
            let mut p = payload;
            while !p.is_empty() {
                if p.len() < 17 {
                    return bad("truncated table header");
                }
                let n: usize = p[1..17].iter().map(|&c| c as usize).sum();
                if p.len() < 17 + n {
                    return bad("symbol count does not match segment length");
                }
                p = &p[17 + n..];
            }
        }
        SegmentKind::Sof0 | SegmentKind::Sof(_) => {
            if payload.len() < 6 || payload.len() != 6 + 3 * payload[5] as usize {
                return bad("component count does not match segment length");
            }
        }
        SegmentKind::Sos => {
            if payload.is_empty() || payload.len() != 4 + 2 * payload[0] as usize {
                return bad("component count does not match segment length");
            }
        }
        SegmentKind::Dri => {
            if payload.len() != 2 {
                return bad("length must be 4");
            }
        }
        _ => {}
    }
    Ok(())
}

/// Splits `file` into segments whose concatenation is exactly `file`.
pub fn parse_segments(file: &[u8]) -> Result<Vec<Segment<'_>>> {
    if file.len() < 2 || file[0] != 0xFF || file[1] != SOI {
        return Err(JpegError::malformed(0, "missing SOI"));
    }
    let mut segs = vec![Segment {
        kind: SegmentKind::Soi,
        offset: 0,
        bytes: &file[..2],
    }];
    let mut pos = 2;
    let mut in_scan = false;
    loop {
        if in_scan {
            // entropy-coded data until a marker that is neither stuffing nor RSTn
            let start = pos;
            while pos < file.len() {
                if file[pos] == 0xFF {
                    match file.get(pos + 1) {
                        Some(0x00) => pos += 2,
                        Some(_) => break,
                        None => return Err(JpegError::malformed(pos, "truncated entropy data")),
                    }
                } else {
                    pos += 1;
                }
            }
            if pos > start {
                segs.push(Segment {
                    kind: SegmentKind::EntropyData,
                    offset: start,
                    bytes: &file[start..pos],
                });
            }
            if pos >= file.len() {
                return Err(JpegError::malformed(pos, "missing EOI"));
            }
            let code = file[pos + 1];
            if (0xD0..=0xD7).contains(&code) {
                segs.push(Segment {
                    kind: SegmentKind::Rst(code - RST0),
                    offset: pos,
                    bytes: &file[pos..pos + 2],
                });
                pos += 2;
                continue;
            }
            in_scan = false;
        }
        if pos >= file.len() {
            return Err(JpegError::malformed(pos, "missing EOI"));
        }
        let start = pos;
        if file[pos] != 0xFF {
            return Err(JpegError::malformed(pos, "expected marker"));
        }
        while file.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        let Some(&code) = file.get(pos + 1) else {
            return Err(JpegError::malformed(pos, "truncated marker"));
        };
        if code == 0x00 {
            return Err(JpegError::malformed(pos, "stuffed byte outside entropy data"));
        }
        let kind = SegmentKind::from_marker(code);
        let end = if has_length(code) {
            let Some(len) = file.get(pos + 2..pos + 4) else {
                return Err(JpegError::malformed(pos, format!("{kind}: truncated length")));
            };
            let len = u16::from_be_bytes([len[0], len[1]]) as usize;
            if len < 2 {
                return Err(JpegError::malformed(pos, format!("{kind}: length {len} < 2")));
            }
            let end = pos + 2 + len;
            if end > file.len() {
                return Err(JpegError::malformed(pos, format!("{kind}: truncated payload")));
            }
            check_payload(kind, &file[pos + 4..end], pos)?;
            end
        } else {
            pos + 2
        };
        if matches!(kind, SegmentKind::Soi) {
            return Err(JpegError::malformed(pos, "SOI inside stream"));
        }
        segs.push(Segment {
            kind,
            offset: start,
            bytes: &file[start..end],
        });
        pos = end;
        match kind {
            SegmentKind::Eoi => {
                if pos != file.len() {
                    return Err(JpegError::malformed(pos, "data after EOI"));
                }
                return Ok(segs);
            }
            SegmentKind::Sos => in_scan = true,
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_stream() {
        let f = [0xFF, 0xD8, 0xFF, 0xD9];
        let segs = parse_segments(&f).unwrap();
        let kinds: Vec<_> = segs.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, vec![SegmentKind::Soi, SegmentKind::Eoi]);
    }

    #[test]
    fn missing_soi_or_eoi() {
        assert!(parse_segments(&[0xFF, 0xD9]).is_err());
        assert!(parse_segments(&[0xFF, 0xD8]).is_err());
        assert!(parse_segments(&[]).is_err());
    }

    #[test]
    fn truncated_dqt() {
        let mut f = vec![0xFF, 0xD8, 0xFF, 0xDB, 0x00, 0x43, 0x00];
        f.extend(std::iter::repeat_n(1u8, 20));
        let err = parse_segments(&f).unwrap_err();
        assert!(matches!(err, JpegError::Malformed { .. }), "{err}");
    }

    #[test]
    fn length_swallowing_a_marker_is_rejected() {
        // DRI claiming 6 bytes swallows the EOI that follows its real payload
        let f = [0xFF, 0xD8, 0xFF, 0xDD, 0x00, 0x06, 0x00, 0x01, 0xFF, 0xD9];
        assert!(parse_segments(&f).is_err());
    }

    #[test]
    fn classifies_markers() {
        assert_eq!(SegmentKind::from_marker(0xC2), SegmentKind::Sof(2));
        assert_eq!(SegmentKind::from_marker(0xC4), SegmentKind::Dht);
        assert_eq!(SegmentKind::from_marker(0xCC), SegmentKind::Other(0xCC));
        assert_eq!(SegmentKind::from_marker(0xE1), SegmentKind::App(1));
        assert_eq!(SegmentKind::from_marker(0xD3), SegmentKind::Rst(3));
        for code in 0x01..=0xFEu8 {
            let k = SegmentKind::from_marker(code);
            assert_eq!(k.marker_code(), Some(code));
        }
    }
}
