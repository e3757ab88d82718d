//! AdamW training with linear warmup and cosine decay, global-norm clipping,
//! binary checkpoints and a JSON-lines metrics log.
//!
//! # Checkpoint layout
//!
//! ```text
//! magic      8 bytes   "CLMCKPT\0"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON (dtype, configs, hashes, step, rng state, tensor table)
//! params     every tensor in table order, little-endian floats
//! adam_m     same order
//! adam_v     same order
//! digest     8 bytes, leading bytes of SHA-256 over everything above
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Batch, BatchSchedule, TokenStore};
use crate::lm::{loss_and_grads, LmError, ModelConfig, Params, Real};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_epsilon: f64,
    pub grad_clip_norm: f64,
    /// Floor of the cosine decay as a fraction of `peak_lr`.
    pub min_lr_ratio: f64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_total_steps(1000)
    }
}

impl TrainConfig {
    /// Defaults with warmup at 2% of `total_steps`.
    pub fn with_total_steps(total_steps: u64) -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_steps: total_steps / 50,
            total_steps,
            weight_decay: 0.1,
            betas: (0.9, 0.95),
            adam_epsilon: 1e-8,
            grad_clip_norm: 1.0,
            min_lr_ratio: 0.1,
            batch_size: 8,
            checkpoint_every: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.peak_lr > 0.0) {
            return bad("peak_lr must be positive");
        }
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be below total_steps");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.grad_clip_norm > 0.0) || self.weight_decay < 0.0 {
            return bad("grad_clip_norm must be positive and weight_decay non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("min_lr_ratio must lie in [0, 1]");
        }
        Ok(())
    }

    /// Linear warmup from 0, then cosine decay to `min_lr_ratio · peak_lr`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.peak_lr * self.min_lr_ratio;
        self.peak_lr - (self.peak_lr - floor) * 0.5 * (1.0 - (std::f64::consts::PI * progress).cos())
    }

    pub fn hash(&self) -> String {
        crate::util::digest_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub tokens_per_sec: f64,
}

/// Parameters plus AdamW moments and the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: Params<T>,
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: Params<T>) -> Result<Self> {
        let m = Params::zeros(&params.config)?;
        let v = m.clone();
        Ok(Self {
            params,
            m,
            v,
            step: 0,
        })
    }
}

/// Scales `g` in place so its norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm<T: Real>(g: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = g.norm();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for x in &mut g.data {
            *x *= s;
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay on matrices (norm gains are
/// not decayed).
pub fn adamw_update<T: Real>(state: &mut TrainState<T>, g: &Params<T>, cfg: &TrainConfig, lr: f64) {
    let (b1, b2) = cfg.betas;
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let step_size = T::from_f64(lr / c1);
    let inv_c2 = T::from_f64(1.0 / c2);
    let eps = T::from_f64(cfg.adam_epsilon);
    let decay = T::from_f64(lr * cfg.weight_decay);
    let layout = state.params.layout.clone();
    for spec in &layout.tensors {
        let decayed = spec.shape.len() > 1;
        for i in spec.range() {
            let gi = g.data[i];
            let m = b1t * state.m.data[i] + ob1 * gi;
            let v = b2t * state.v.data[i] + ob2 * gi * gi;
            state.m.data[i] = m;
            state.v.data[i] = v;
            let p = &mut state.params.data[i];
            if decayed {
                *p -= decay * *p;
            }
            *p -= step_size * m / ((v * inv_c2).sqrt() + eps);
        }
    }
    state.step += 1;
}

/// Forward, backward, clip and update on one batch.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    batch: &Batch,
    cfg: &TrainConfig,
) -> std::result::Result<StepMetrics, LmError> {
    let start = Instant::now();
    let lr = cfg.lr_at(state.step);
    let (loss, mut g) = loss_and_grads(&state.params, batch)?;
    let grad_norm = clip_grad_norm(&mut g, cfg.grad_clip_norm);
    if !grad_norm.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    let step = state.step;
    adamw_update(state, &g, cfg, lr);
    if !state.params.all_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    Ok(StepMetrics {
        step,
        loss,
        lr,
        grad_norm,
        tokens_per_sec: batch.inputs.len() as f64 / secs,
    })
}

/// Batch order is a pure function of `(seed, step)`, so this is all the
/// randomness a resumed run needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    train: TrainConfig,
    train_config_hash: String,
    vocab_hash: String,
    profile_hash: String,
    step: u64,
    rng: RngState,
    sections: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub train: TrainConfig,
    pub vocab_hash: String,
    pub profile_hash: String,
    pub rng: RngState,
    pub state: TrainState<T>,
}

const SECTIONS: [&str; 3] = ["params", "adam_m", "adam_v"];

impl<T: Real> Checkpoint<T> {
    pub fn model_config(&self) -> &ModelConfig {
        &self.state.params.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.state.params;
        let header = Header {
            dtype: T::NAME.to_string(),
            model: p.config,
            train: self.train,
            train_config_hash: self.train.hash(),
            vocab_hash: self.vocab_hash.clone(),
            profile_hash: self.profile_hash.clone(),
            step: self.state.step,
            rng: self.rng,
            sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
            tensors: p
                .layout
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let width = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(16 + json.len() + 3 * p.len() * width + 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for buf in [&p.data, &self.state.m.data, &self.state.v.data] {
            for &x in buf.iter() {
                x.to_le_bytes_vec(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest[..8]);
        out
    }

    pub fn from_bytes(data: &[u8]) -> std::result::Result<Self, String> {
        if data.len() < 24 || &data[..8] != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file".into());
        }
        let (body, digest) = data.split_at(data.len() - 8);
        if Sha256::digest(body)[..8] != *digest {
            return Err("checksum mismatch".into());
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let json = body.get(16..16 + hlen).ok_or("truncated header")?;
        let h: Header = serde_json::from_slice(json).map_err(|e| format!("header: {e}"))?;
        if h.dtype != T::NAME {
            return Err(format!("checkpoint holds {} but {} requested", h.dtype, T::NAME));
        }
        let zeros = Params::<T>::zeros(&h.model).map_err(|e| e.to_string())?;
        let table: Vec<TensorEntry> = zeros
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect();
        if table != h.tensors || h.sections != SECTIONS {
            return Err("tensor table does not match the model config".into());
        }
        let n = zeros.len();
        let width = std::mem::size_of::<T>();
        let payload = &body[16 + hlen..];
        if payload.len() != 3 * n * width {
            return Err(format!(
                "expected {} tensor bytes, found {}",
                3 * n * width,
                payload.len()
            ));
        }
        let read = |k: usize| -> Vec<T> {
            payload[k * n * width..(k + 1) * n * width]
                .chunks_exact(width)
                .map(T::from_le_slice)
                .collect()
        };
        let mk = |d: Vec<T>| Params::from_data(&h.model, d).map_err(|e| e.to_string());
        Ok(Self {
            train: h.train,
            vocab_hash: h.vocab_hash,
            profile_hash: h.profile_hash,
            rng: h.rng,
            state: TrainState {
                params: mk(read(0))?,
                m: mk(read(1))?,
                v: mk(read(2))?,
                step: h.step,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write then rename, so a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data).map_err(|e| Error::format(path, e))
    }
}

/// Owns a training run over one store.
pub struct Trainer<'a> {
    pub state: TrainState<f32>,
    pub config: TrainConfig,
    store: &'a TokenStore,
    schedule: BatchSchedule,
    last_checkpoint: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, model: &ModelConfig, store: &'a TokenStore) -> Result<Self> {
        let params = Params::init(model)?;
        Self::with_state(config, TrainState::new(params)?, store)
    }

    pub fn resume(ckpt: Checkpoint<f32>, store: &'a TokenStore) -> Result<Self> {
        if ckpt.vocab_hash != store.vocab_hash {
            return Err(Error::Mismatch(format!(
                "checkpoint vocab {} but store vocab {}",
                ckpt.vocab_hash, store.vocab_hash
            )));
        }
        Self::with_state(ckpt.train, ckpt.state, store)
    }

    pub fn resume_from_file(path: &Path, store: &'a TokenStore) -> Result<Self> {
        let mut t = Self::resume(Checkpoint::load(path)?, store)?;
        t.last_checkpoint = Some(path.to_path_buf());
        Ok(t)
    }

    /// Most recent checkpoint written by or loaded into this trainer.
    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    fn with_state(config: TrainConfig, state: TrainState<f32>, store: &'a TokenStore) -> Result<Self> {
        config.validate()?;
        let model = state.params.config;
        if model.vocab_size != store.vocab_size {
            return Err(Error::Mismatch(format!(
                "model vocab {} but store vocab {}",
                model.vocab_size, store.vocab_size
            )));
        }
        if store.context_len() - 1 > model.max_context {
            return Err(Error::Config(format!(
                "context_len {} needs max_context >= {}",
                store.context_len(),
                store.context_len() - 1
            )));
        }
        if store.chunk_count() == 0 {
            return Err(Error::Data(format!(
                "store of {} tokens has no full chunk of {}",
                store.tokens().len(),
                store.context_len()
            )));
        }
        Ok(Self {
            schedule: BatchSchedule {
                n_chunks: store.chunk_count(),
                batch_size: config.batch_size,
                seed: config.seed,
            },
            state,
            config,
            store,
            last_checkpoint: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.total_steps
    }

    pub fn batch_at(&self, step: u64) -> Batch {
        let rows: Vec<&[u32]> = self
            .schedule
            .chunks_at(step)
            .into_iter()
            .map(|c| self.store.chunk(c))
            .collect();
        Batch::from_rows(&rows)
    }

    pub fn step(&mut self) -> std::result::Result<StepMetrics, LmError> {
        let batch = self.batch_at(self.state.step);
        train_step(&mut self.state, &batch, &self.config)
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            train: self.config,
            vocab_hash: self.store.vocab_hash.clone(),
            profile_hash: self.store.profile_hash.clone(),
            rng: RngState {
                seed: self.config.seed,
                step: self.state.step,
            },
            state: self.state.clone(),
        }
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:06}.bin"))
}

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub metrics: Vec<StepMetrics>,
    pub checkpoint_paths: Vec<PathBuf>,
}

/// Trains until `total_steps`. With `out_dir`, appends one JSON line per
/// step to `metrics.jsonl` and writes `ckpt-NNNNNN.bin` every
/// `checkpoint_every` steps and at the end.
pub fn fit(
    trainer: &mut Trainer<'_>,
    out_dir: Option<&Path>,
    mut on_checkpoint: impl FnMut(&Checkpoint<f32>) -> Result<()>,
) -> Result<FitOutcome> {
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(METRICS_FILE);
            let f: File = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut paths = Vec::new();
    while !trainer.is_done() {
        let step = trainer.state.step;
        let m = trainer.step().map_err(|e| match e {
            LmError::NonFiniteLoss => Error::NonFiniteLoss {
                step,
                last_checkpoint: trainer.last_checkpoint.clone(),
            },
            e => e.into(),
        })?;
        if let Some((p, f)) = log.as_mut() {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        log::info!(
            "step {} loss {:.4} lr {:.2e} grad_norm {:.3} tok/s {:.0}",
            m.step,
            m.loss,
            m.lr,
            m.grad_norm,
            m.tokens_per_sec
        );
        metrics.push(m);
        let s = trainer.state.step;
        let every = trainer.config.checkpoint_every;
        if (every > 0 && s % every == 0) || trainer.is_done() {
            let ck = trainer.checkpoint();
            if let Some(dir) = out_dir {
                let p = checkpoint_path(dir, s);
                ck.save(&p)?;
                trainer.last_checkpoint = Some(p.clone());
                paths.push(p);
            }
            on_checkpoint(&ck)?;
        }
    }
    Ok(FitOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
        checkpoint_paths: paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_shape() {
        let c = TrainConfig {
            warmup_steps: 10,
            total_steps: 110,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), 0.0);
        assert_eq!(c.lr_at(10), c.peak_lr);
        assert!((c.lr_at(110) - 0.1 * c.peak_lr).abs() < 1e-15);
        assert!((c.lr_at(60) - 0.55 * c.peak_lr).abs() < 1e-12);
        for s in 0..10 {
            assert!(c.lr_at(s) <= c.lr_at(s + 1));
        }
        for s in 10..200 {
            assert!(c.lr_at(s) >= c.lr_at(s + 1));
        }
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::with_total_steps(10);
        assert!(c.validate().is_ok());
        c.warmup_steps = 10;
        assert!(c.validate().is_err());
        c.warmup_steps = 0;
        c.peak_lr = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::with_total_steps(0).validate().is_ok());
    }

    #[test]
    fn clipping_bounds_norm() {
        let cfg = ModelConfig {
            vocab_size: 10,
            dim: 8,
            n_layers: 1,
            n_heads: 2,
            max_context: 4,
            ..ModelConfig::default()
        };
        let mut g = Params::<f32>::init(&cfg).unwrap();
        for x in &mut g.data {
            *x *= 100.0;
        }
        let before = clip_grad_norm(&mut g, 1.0);
        assert!(before > 1.0);
        assert!(g.norm() <= 1.0 + 1e-6);
    }

    #[test]
    fn zero_gradient_applies_only_decay() {
        let cfg = ModelConfig {
            vocab_size: 10,
            dim: 8,
            n_layers: 1,
            n_heads: 2,
            max_context: 4,
            ..ModelConfig::default()
        };
        let p = Params::<f64>::init(&cfg).unwrap();
        let mut st = TrainState::new(p.clone()).unwrap();
        let g = Params::zeros(&cfg).unwrap();
        let tc = TrainConfig::with_total_steps(10);
        adamw_update(&mut st, &g, &tc, 1e-2);
        for spec in &p.layout.tensors {
            let f = if spec.shape.len() > 1 { 1.0 - 1e-2 * 0.1 } else { 1.0 };
            for i in spec.range() {
                assert!((st.params.data[i] - p.data[i] * f).abs() < 1e-15);
            }
        }
    }
}
