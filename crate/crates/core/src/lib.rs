//! Generative modeling of images as canonical JPEG byte streams.
//!
//! Images are encoded under one fixed [`jpeg::CodecProfile`], stripped of
//! their shared tables, tokenized with byte-pair encoding, and modeled by a
//! decoder-only transformer. Sampled token streams are detokenized, have the
//! tables spliced back in, and are salvaged when the entropy data is damaged.

pub mod bpe;
pub mod corpus;
pub mod desk;
pub mod error;
pub mod eval;
pub mod image;
pub mod jpeg;
pub mod lm;
pub mod sample;
pub mod train;
pub mod util;

pub use error::{Error, Result};
