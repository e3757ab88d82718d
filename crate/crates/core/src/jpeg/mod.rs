//! Baseline-sequential JPEG: deterministic encoding under a fixed profile,
//! segment parsing, canonicalization (table stripping), restoration with
//! salvage of damaged entropy data, and a reference decoder.

mod bits;
pub mod canonical;
pub mod decode;
pub mod encode;
mod huffman;
pub mod segment;
pub mod tables;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::{
    canonicalize, prefix_at_ratio, restore, restore_generated, CanonicalStream, Restored,
    SalvageStatus, TableSet,
};
pub use decode::{decode, DecodedImage};
pub use encode::encode_image;
pub use segment::{parse_segments, Segment, SegmentKind};

pub const SOI: u8 = 0xD8;
pub const EOI: u8 = 0xD9;
pub const SOF0: u8 = 0xC0;
pub const DHT: u8 = 0xC4;
pub const DQT: u8 = 0xDB;
pub const DRI: u8 = 0xDD;
pub const SOS: u8 = 0xDA;
pub const COM: u8 = 0xFE;
pub const RST0: u8 = 0xD0;
pub const APP0: u8 = 0xE0;

/// MCU edge length in pixels under 4:2:0.
pub const MCU_SIZE: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JpegError {
    #[error("image dimensions {width}x{height} are not positive multiples of 16")]
    Dimension { width: u32, height: u32 },
    #[error("malformed stream at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported stream: {0}")]
    Unsupported(String),
    #[error("unrecoverable stream: {0}")]
    Unrecoverable(String),
    #[error("invalid codec profile: {0}")]
    Profile(String),
    #[error("table set: {0}")]
    TableSet(String),
}

impl JpegError {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        JpegError::Malformed {
            offset,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = JpegError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ChromaSubsampling {
    #[default]
    #[serde(rename = "4:2:0")]
    S420,
}

/// Fixed encoding parameters that define the canonical byte form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecProfile {
    pub quality: u8,
    pub chroma_subsampling: ChromaSubsampling,
    pub restart_interval_mcus: u16,
    pub progressive: bool,
}

impl Default for CodecProfile {
    fn default() -> Self {
        Self {
            quality: 25,
            chroma_subsampling: ChromaSubsampling::S420,
            restart_interval_mcus: 1,
            progressive: false,
        }
    }
}

impl CodecProfile {
    pub fn with_quality(quality: u8) -> Self {
        Self {
            quality,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.quality) {
            return Err(JpegError::Profile(format!(
                "quality {} outside 1..=100",
                self.quality
            )));
        }
        if self.restart_interval_mcus == 0 {
            return Err(JpegError::Profile("restart interval must be positive".into()));
        }
        if self.progressive {
            return Err(JpegError::Profile("only baseline sequential is supported".into()));
        }
        Ok(())
    }

    /// Quality 25, 4:2:0, one MCU per restart interval.
    pub fn is_blessed(&self) -> bool {
        *self == Self::default()
    }

    /// Stable identifier of the profile, used to tie tables, vocabularies and
    /// corpora together.
    pub fn hash(&self) -> String {
        crate::util::digest_hex(
            format!(
                "jpeg;q={};sub=420;ri={};prog={}",
                self.quality, self.restart_interval_mcus, self.progressive as u8
            )
            .as_bytes(),
        )
    }
}

/// MCU grid of a 4:2:0 frame.
pub fn mcu_grid(width: u32, height: u32) -> (u32, u32) {
    (width.div_ceil(MCU_SIZE), height.div_ceil(MCU_SIZE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile() {
        let p = CodecProfile::default();
        assert_eq!(p.quality, 25);
        assert_eq!(p.restart_interval_mcus, 1);
        assert!(!p.progressive);
        assert!(p.is_blessed());
        p.validate().unwrap();
    }

    #[test]
    fn profile_validation() {
        let mut p = CodecProfile::default();
        p.progressive = true;
        assert!(p.validate().is_err());
        assert!(CodecProfile::with_quality(0).validate().is_err());
        let p = CodecProfile {
            restart_interval_mcus: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn profile_hash_distinguishes_quality() {
        assert_ne!(
            CodecProfile::with_quality(25).hash(),
            CodecProfile::with_quality(26).hash()
        );
        assert_eq!(CodecProfile::default().hash(), CodecProfile::default().hash());
    }

    #[test]
    fn profile_toml_roundtrip() {
        let p = CodecProfile::default();
        let s = toml::to_string(&p).unwrap();
        assert!(s.contains("4:2:0"));
        let back: CodecProfile = toml::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
