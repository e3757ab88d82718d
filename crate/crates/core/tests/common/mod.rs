#![allow(dead_code)]

use std::path::PathBuf;

use codeclm::bpe::{BpeVocab, TokenId};
use codeclm::corpus::TokenStore;
use codeclm::image::RgbImage;
use codeclm::jpeg::{canonicalize, encode_image, CodecProfile};
use codeclm::lm::{ModelConfig, Params};
use codeclm::train::{fit, TrainConfig, Trainer};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/pillow").join(name)
}

pub fn gradient_image(w: u32, h: u32, shift: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        [
            (x * 4 + shift) as u8,
            (y * 4) as u8,
            ((x + y) * 2 + 3 * shift) as u8,
        ]
    })
}

/// Canonical stream of a small synthetic image.
pub fn canonical_bytes(img: &RgbImage) -> Vec<u8> {
    let file = encode_image(img, &CodecProfile::default()).unwrap();
    canonicalize(&file).unwrap().0.bytes
}

pub fn small_model(vocab_size: usize, max_context: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        dim: 32,
        n_layers: 1,
        n_heads: 2,
        ffn_multiplier: 2,
        max_context,
        seed: 1,
        ..ModelConfig::default()
    }
}

/// Trains `cfg` on one tokenized document until it memorizes it.
pub fn overfit(doc: &[TokenId], vocab: &BpeVocab, cfg: &ModelConfig, steps: u64) -> Params<f32> {
    let store = TokenStore::from_documents([doc.to_vec()], vocab, doc.len()).unwrap();
    let tc = TrainConfig {
        peak_lr: 1e-2,
        warmup_steps: 10,
        total_steps: steps,
        batch_size: 1,
        checkpoint_every: 0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(tc, cfg, &store).unwrap();
    fit(&mut t, None, |_| Ok(())).unwrap().checkpoint.state.params
}
