//! The run configuration file: every tunable of every stage in one TOML
//! document. Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use codeclm::bpe::BpeTrainConfig;
use codeclm::corpus::Chunking;
use codeclm::desk::CropConfig;
use codeclm::jpeg::CodecProfile;
use codeclm::lm::ModelConfig;
use codeclm::sample::SampleConfig;
use codeclm::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root of every artifact a run writes.
    pub work: PathBuf,
    /// Training images.
    pub images: PathBuf,
    /// Held-out images.
    pub heldout: PathBuf,
    /// Photographs that desk corpora are cropped from.
    pub photos: PathBuf,
    /// Table-set sidecar; built from the profile when absent.
    pub tables: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work: "runs/desk".into(),
            images: "runs/desk/images/train".into(),
            heldout: "runs/desk/images/heldout".into(),
            photos: "data/photos".into(),
            tables: None,
        }
    }
}

impl Paths {
    pub fn streams(&self) -> PathBuf {
        self.work.join("streams")
    }
    pub fn vocab(&self) -> PathBuf {
        self.work.join("vocab.txt")
    }
    pub fn store(&self) -> PathBuf {
        self.work.join("store")
    }
    pub fn heldout_store(&self) -> PathBuf {
        self.work.join("heldout_store")
    }
    pub fn train(&self) -> PathBuf {
        self.work.join("train")
    }
    pub fn samples(&self) -> PathBuf {
        self.work.join("samples")
    }
    pub fn completions(&self) -> PathBuf {
        self.work.join("completions")
    }
    pub fn eval(&self) -> PathBuf {
        self.work.join("eval")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub context_len: usize,
    pub chunking: Chunking,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            context_len: 1024,
            chunking: Chunking::Packed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskConfig {
    pub crops: CropConfig,
    /// Crops written to the held-out directory, cut from `heldout_photos`.
    pub heldout_count: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            crops: CropConfig::default(),
            heldout_count: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    /// Images per set for Fréchet statistics; 0 uses every image.
    pub frechet_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            frechet_n: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub paths: Paths,
    pub profile: CodecProfile,
    pub bpe: BpeTrainConfig,
    pub corpus: CorpusConfig,
    pub desk: DeskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    /// Photo stems kept out of the training crops.
    pub heldout_photos: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threads: 0,
            paths: Paths::default(),
            profile: CodecProfile::default(),
            bpe: BpeTrainConfig::default(),
            corpus: CorpusConfig::default(),
            desk: DeskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
            heldout_photos: vec!["chelsea".into()],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| codeclm::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| codeclm::Error::format(path, e.to_string()).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the fully resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| codeclm::Error::io(dir, e))?;
        let p = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&p, self.to_toml()).map_err(|e| codeclm::Error::io(&p, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = toml::from_str("[model]\ndim = 64\n[train]\ntotal_steps = 5\n").unwrap();
        assert_eq!(c.model.dim, 64);
        assert_eq!(c.model.n_layers, ModelConfig::default().n_layers);
        assert_eq!(c.train.total_steps, 5);
        let c: RunConfig = toml::from_str("[corpus]\nchunking = \"aligned\"\n").unwrap();
        assert_eq!(c.corpus.chunking, Chunking::Aligned);
        assert_eq!(c.corpus.context_len, 1024);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\ndimm = 64\n").is_err());
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }
}
