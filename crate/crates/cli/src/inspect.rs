//! `codeclm inspect`: segment table and per-interval byte map of a JPEG file.

use std::fmt::Write as _;
use std::path::Path;

use codeclm::jpeg::decode::FrameHeader;
use codeclm::jpeg::{parse_segments, SegmentKind};
use codeclm::Error;

use crate::CliError;

pub fn run(path: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let report = describe(&bytes).map_err(|e| Error::format(path, e))?;
    print!("{report}");
    Ok(())
}

/// Renders the report; the error is a reason suitable for a format error.
pub fn describe(bytes: &[u8]) -> Result<String, String> {
    let segs = parse_segments(bytes).map_err(|e| e.to_string())?;
    let mut out = String::new();
    let mut frame = None;
    let mut restart_interval = None;
    let mut rst = 0usize;
    let mut intervals: Vec<usize> = Vec::new();
    let mut entropy = 0usize;
    let mut has_tables = false;

    writeln!(out, "{:>8}  {:<8}  {:>6}", "offset", "segment", "bytes").unwrap();
    for s in &segs {
        match s.kind {
            SegmentKind::EntropyData => {
                entropy += s.bytes.len();
                intervals.push(s.bytes.len());
                continue;
            }
            SegmentKind::Rst(_) => {
                rst += 1;
                continue;
            }
            SegmentKind::Sof0 => {
                frame = Some(FrameHeader::parse(s.payload(), s.offset).map_err(|e| e.to_string())?);
            }
            SegmentKind::Dri => {
                let p = s.payload();
                if p.len() >= 2 {
                    restart_interval = Some(u16::from_be_bytes([p[0], p[1]]));
                }
            }
            SegmentKind::Dqt | SegmentKind::Dht => has_tables = true,
            _ => {}
        }
        writeln!(out, "{:>8}  {:<8}  {:>6}", s.offset, s.kind.to_string(), s.bytes.len()).unwrap();
    }

    writeln!(out).unwrap();
    writeln!(
        out,
        "form             {}",
        if has_tables { "full file" } else { "canonical stream (tables stripped)" }
    )
    .unwrap();
    let Some(frame) = frame else {
        writeln!(out, "frame            none").unwrap();
        return Ok(out);
    };
    let (cols, rows) = frame.mcu_grid();
    // canonical streams carry no DRI; they always restart after every MCU
    let ri = restart_interval.unwrap_or(if has_tables { 0 } else { 1 });
    writeln!(out, "frame            {}x{}, {} components", frame.width, frame.height, frame.components.len()).unwrap();
    writeln!(out, "mcus             {} ({cols} x {rows})", cols * rows).unwrap();
    writeln!(out, "restart interval {ri}").unwrap();
    writeln!(out, "restart markers  {rst}").unwrap();
    writeln!(out, "entropy bytes    {entropy}").unwrap();

    if ri == 1 && !intervals.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "entropy bytes per MCU, {cols} per row:").unwrap();
        for row in intervals.chunks(cols as usize) {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>4}")).collect();
            writeln!(out, "{}", cells.join("")).unwrap();
        }
    }
    Ok(out)
}
