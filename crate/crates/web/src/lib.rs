//! Browser bindings for the codec and tokenizer. Every export takes and
//! returns plain bytes, numbers or JSON text, so the same functions run in
//! native tests.

use codeclm::bpe::{train_bpe, BpeTrainConfig, BpeVocab, FIRST_MERGE};
use codeclm::image::RgbImage;
use codeclm::jpeg::{
    canonicalize, encode_image, parse_segments, prefix_at_ratio, restore_generated, CodecProfile,
    SalvageStatus, SegmentKind, MCU_SIZE,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Encodes canvas pixels (RGBA, row major) as a baseline 4:2:0 JPEG with a
/// restart marker after every MCU. Sizes that are not multiples of 16 are
/// padded by edge replication.
#[wasm_bindgen]
pub fn encode(rgba: &[u8], width: u32, height: u32, quality: u8) -> Res<Vec<u8>> {
    let n = width as usize * height as usize;
    if width == 0 || height == 0 || rgba.len() != n * 4 {
        return Err(format!("expected {n} RGBA pixels, got {} bytes", rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let img = RgbImage::new(width, height, rgb).map_err(err)?.pad_to_multiple(MCU_SIZE);
    encode_image(&img, &CodecProfile::with_quality(quality)).map_err(err)
}

#[derive(Serialize)]
struct SegmentRow {
    offset: usize,
    kind: String,
    len: usize,
}

#[derive(Serialize)]
struct Inspection {
    file_bytes: usize,
    canonical_bytes: usize,
    width: u32,
    height: u32,
    mcu_cols: u32,
    mcu_rows: u32,
    /// Marker segments; entropy spans and restart markers are folded into `mcu_bytes`.
    segments: Vec<SegmentRow>,
    restart_markers: usize,
    /// Entropy-coded bytes of each MCU, row by row.
    mcu_bytes: Vec<usize>,
}

/// Segment table and per-MCU byte counts of a file, as JSON.
#[wasm_bindgen]
pub fn inspect(jpeg: &[u8]) -> Res<String> {
    let (stream, _) = canonicalize(jpeg).map_err(err)?;
    let segs = parse_segments(jpeg).map_err(err)?;
    let mut segments = Vec::new();
    let mut mcu_bytes = Vec::new();
    let mut restart_markers = 0;
    for s in &segs {
        match s.kind {
            SegmentKind::EntropyData => mcu_bytes.push(s.bytes.len()),
            SegmentKind::Rst(_) => restart_markers += 1,
            k => segments.push(SegmentRow {
                offset: s.offset,
                kind: k.to_string(),
                len: s.bytes.len(),
            }),
        }
    }
    let (mcu_cols, mcu_rows) = codeclm::jpeg::mcu_grid(stream.width, stream.height);
    let report = Inspection {
        file_bytes: jpeg.len(),
        canonical_bytes: stream.bytes.len(),
        width: stream.width,
        height: stream.height,
        mcu_cols,
        mcu_rows,
        segments,
        restart_markers,
        mcu_bytes,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// A file rebuilt from a damaged or truncated stream.
#[wasm_bindgen]
pub struct Salvage {
    bytes: Vec<u8>,
    clean: bool,
    kept_mcus: u32,
    total_mcus: u32,
}

#[wasm_bindgen]
impl Salvage {
    /// The restored JPEG file.
    pub fn bytes(&self) -> Vec<u8> {
        self.bytes.clone()
    }
    pub fn clean(&self) -> bool {
        self.clean
    }
    pub fn kept_mcus(&self) -> u32 {
        self.kept_mcus
    }
    pub fn total_mcus(&self) -> u32 {
        self.total_mcus
    }
}

/// Keeps the MCUs covered by `ratio`, optionally appends `noise` bytes of
/// junk from a fixed generator, then restores the result. Whatever cannot
/// be decoded is filled with mid-gray.
#[wasm_bindgen]
pub fn truncate_and_salvage(jpeg: &[u8], ratio: f64, noise: usize, seed: u32) -> Res<Salvage> {
    let (stream, tables) = canonicalize(jpeg).map_err(err)?;
    let cut = prefix_at_ratio(&stream, ratio).max(stream.entropy_start());
    let mut bytes = stream.bytes[..cut].to_vec();
    // xorshift keeps the demo free of an RNG dependency
    let mut x = seed.max(1);
    for _ in 0..noise {
        x ^= x << 13;
        x ^= x >> 17;
        x ^= x << 5;
        bytes.push(x as u8);
    }
    let r = restore_generated(&bytes, &tables).map_err(err)?;
    Ok(Salvage {
        bytes: r.bytes,
        clean: r.status == SalvageStatus::Clean,
        kept_mcus: r.kept_mcus,
        total_mcus: r.total_mcus,
    })
}

#[derive(Serialize)]
struct Tokenization {
    canonical_bytes: usize,
    vocab_size: usize,
    tokens: usize,
    bytes_per_token: f64,
    /// Leading tokens as (id, hex of the bytes it stands for).
    head: Vec<(u32, String)>,
    /// The most used merges as (id, hex, count).
    top_merges: Vec<(u32, String, usize)>,
}

/// Learns `merges` byte-pair merges from the file's own canonical stream
/// and reports how it tokenizes, as JSON.
#[wasm_bindgen]
pub fn tokenize(jpeg: &[u8], merges: usize, head: usize) -> Res<String> {
    let (stream, _) = canonicalize(jpeg).map_err(err)?;
    let cfg = BpeTrainConfig {
        target_vocab: FIRST_MERGE as usize + merges,
        min_count: 2,
    };
    let vocab = train_bpe([stream.bytes.as_slice()], &cfg, &stream.profile.hash()).map_err(err)?;
    let ids = vocab.encode(&stream.bytes, true, true);
    let hex = |v: &BpeVocab, id: u32| -> String {
        match v.expansion(id) {
            Ok(b) if !b.is_empty() => b.iter().map(|x| format!("{x:02X}")).collect(),
            _ => if id == codeclm::bpe::BOS { "BOS" } else { "EOS" }.to_string(),
        }
    };
    let mut counts = vec![0usize; vocab.size()];
    for &t in &ids {
        counts[t as usize] += 1;
    }
    let mut top: Vec<(u32, String, usize)> = (FIRST_MERGE..vocab.size() as u32)
        .filter(|&id| counts[id as usize] > 0)
        .map(|id| (id, hex(&vocab, id), counts[id as usize]))
        .collect();
    top.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    top.truncate(12);
    let report = Tokenization {
        canonical_bytes: stream.bytes.len(),
        vocab_size: vocab.size(),
        tokens: ids.len(),
        bytes_per_token: stream.bytes.len() as f64 / (ids.len() - 2).max(1) as f64,
        head: ids.iter().take(head).map(|&t| (t, hex(&vocab, t))).collect(),
        top_merges: top,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}
