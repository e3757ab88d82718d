//! Autoregressive sampling and prompted image completion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{BpeVocab, TokenId, BOS, EOS};
use crate::jpeg::{canonicalize, prefix_at_ratio, restore_generated, TableSet};
use crate::lm::{forward, KvCache, LmError, Params, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Zero selects argmax decoding.
    pub temperature: f64,
    /// Zero disables top-k filtering.
    pub top_k: usize,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 40,
            top_p: 0.9,
            max_new_tokens: 1024,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn argmax(max_new_tokens: usize) -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), LmError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(LmError::Config(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LmError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// Largest logit, lowest id on ties.
pub fn argmax<T: Real>(logits: &[T]) -> TokenId {
    let mut best = 0;
    for (i, x) in logits.iter().enumerate() {
        if x.to_f64() > logits[best].to_f64() {
            best = i;
        }
    }
    best as TokenId
}

/// The renormalized distribution sampling draws from: tokens sorted by
/// descending probability (ascending id on ties), cut to `top_k`,
/// renormalized, then cut to the shortest prefix whose mass reaches `top_p`.
pub fn truncated_distribution<T: Real>(logits: &[T], cfg: &SampleConfig) -> Vec<(TokenId, f64)> {
    if cfg.temperature == 0.0 {
        return vec![(argmax(logits), 1.0)];
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x.to_f64() / cfg.temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(TokenId, f64)> = scaled
        .iter()
        .enumerate()
        .map(|(i, &s)| (i as TokenId, (s - max).exp()))
        .collect();
    let z: f64 = probs.iter().map(|p| p.1).sum();
    for p in &mut probs {
        p.1 /= z;
    }
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if cfg.top_k > 0 && cfg.top_k < probs.len() {
        probs.truncate(cfg.top_k);
        let z: f64 = probs.iter().map(|p| p.1).sum();
        for p in &mut probs {
            p.1 /= z;
        }
    }
    if cfg.top_p < 1.0 {
        let mut mass = 0.0;
        let mut keep = probs.len();
        for (i, p) in probs.iter().enumerate() {
            mass += p.1;
            if mass >= cfg.top_p {
                keep = i + 1;
                break;
            }
        }
        probs.truncate(keep);
    }
    let z: f64 = probs.iter().map(|p| p.1).sum();
    for p in &mut probs {
        p.1 /= z;
    }
    probs
}

/// Draws one token; consumes exactly one uniform from `rng` unless in
/// argmax mode.
pub fn sample_next<T: Real>(logits: &[T], cfg: &SampleConfig, rng: &mut ChaCha8Rng) -> TokenId {
    if cfg.temperature == 0.0 {
        return argmax(logits);
    }
    let dist = truncated_distribution(logits, cfg);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in &dist {
        acc += p;
        if u < acc {
            return id;
        }
    }
    dist.last().expect("non-empty support").0
}

fn check_prompt<T: Real>(
    params: &Params<T>,
    prompt: &[TokenId],
    cfg: &SampleConfig,
) -> std::result::Result<(), LmError> {
    cfg.validate()?;
    if prompt.first() != Some(&BOS) || prompt.contains(&EOS) {
        return Err(LmError::Config(
            "prompt must start with BOS and contain no EOS".into(),
        ));
    }
    let len = prompt.len() + cfg.max_new_tokens;
    let max = params.config.max_context;
    if len > max {
        return Err(LmError::ContextOverflow { len, max });
    }
    Ok(())
}

/// Extends `prompt` until EOS (kept as the last token) or `max_new_tokens`.
/// Returns prompt plus continuation.
pub fn generate<T: Real>(
    params: &Params<T>,
    prompt: &[TokenId],
    cfg: &SampleConfig,
) -> std::result::Result<Vec<TokenId>, LmError> {
    check_prompt(params, prompt, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = KvCache::new(params);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = cache.step(params, t)?;
    }
    let mut out = prompt.to_vec();
    for i in 0..cfg.max_new_tokens {
        let next = sample_next(&logits, cfg, &mut rng);
        out.push(next);
        if next == EOS {
            break;
        }
        // the final token's logits would go unused
        if i + 1 < cfg.max_new_tokens {
            logits = cache.step(params, next)?;
        }
    }
    Ok(out)
}

/// Same contract as [`generate`], recomputing the whole prefix at every
/// step instead of caching.
pub fn generate_uncached<T: Real>(
    params: &Params<T>,
    prompt: &[TokenId],
    cfg: &SampleConfig,
) -> std::result::Result<Vec<TokenId>, LmError> {
    check_prompt(params, prompt, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = params.config.vocab_size;
    let mut out = prompt.to_vec();
    for _ in 0..cfg.max_new_tokens {
        let all = forward(params, &out, 1)?;
        let next = sample_next(&all[all.len() - v..], cfg, &mut rng);
        out.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

/// What became of a generated token sequence once restored to a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeOutcome {
    Clean,
    Salvaged,
    Unrecoverable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoredSample {
    pub outcome: DecodeOutcome,
    /// Restored file; `None` when unrecoverable.
    pub file: Option<Vec<u8>>,
    pub kept_mcus: u32,
    pub total_mcus: u32,
}

/// Detokenizes and restores a generated sequence. Invalid ids make it
/// unrecoverable rather than an error.
pub fn restore_tokens(tokens: &[TokenId], vocab: &BpeVocab, tables: &TableSet) -> RestoredSample {
    let unrecoverable = RestoredSample {
        outcome: DecodeOutcome::Unrecoverable,
        file: None,
        kept_mcus: 0,
        total_mcus: 0,
    };
    let Ok(bytes) = vocab.decode(tokens) else {
        return unrecoverable;
    };
    match restore_generated(&bytes, tables) {
        Ok(r) => RestoredSample {
            outcome: match r.status {
                crate::jpeg::SalvageStatus::Clean => DecodeOutcome::Clean,
                crate::jpeg::SalvageStatus::Salvaged => DecodeOutcome::Salvaged,
            },
            file: Some(r.bytes),
            kept_mcus: r.kept_mcus,
            total_mcus: r.total_mcus,
        },
        Err(_) => unrecoverable,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub restored: RestoredSample,
    /// Prompt followed by the generated tokens.
    pub tokens: Vec<TokenId>,
    pub prompt_tokens: usize,
    /// Canonical bytes taken from the source image.
    pub prompt_bytes: usize,
    /// MCUs of the source the prompt covers.
    pub prompt_mcus: u32,
}

/// Canonicalizes `image_file`, keeps the prefix covering
/// `floor(r_prompt * mcus)` MCUs, and lets the model write the rest.
/// Generation is capped by `cfg.max_new_tokens` and the model's context.
pub fn complete_image<T: Real>(
    params: &Params<T>,
    image_file: &[u8],
    r_prompt: f64,
    cfg: &SampleConfig,
    vocab: &BpeVocab,
    tables: &TableSet,
) -> Result<Completion> {
    let (stream, own) = canonicalize(image_file)?;
    if own.profile != tables.profile {
        return Err(Error::Mismatch(format!(
            "image profile {:?} differs from the table set's {:?}",
            own.profile, tables.profile
        )));
    }
    if vocab.size() != params.config.vocab_size {
        return Err(Error::Mismatch(format!(
            "vocab of {} tokens but model expects {}",
            vocab.size(),
            params.config.vocab_size
        )));
    }
    let cut = prefix_at_ratio(&stream, r_prompt);
    let n = stream.mcu_count();
    let ri = u32::from(stream.profile.restart_interval_mcus);
    let prompt_mcus = if cut == stream.bytes.len() {
        n
    } else {
        ((r_prompt.clamp(0.0, 1.0) * f64::from(n)).floor() as u32) / ri * ri
    };
    let (tokens, prompt_tokens) = if cut == stream.bytes.len() {
        let t = vocab.encode(&stream.bytes, true, true);
        let len = t.len();
        (t, len)
    } else {
        let prompt = vocab.encode_prompt(&stream.bytes, cut);
        let max = params.config.max_context;
        if prompt.len() > max {
            return Err(LmError::ContextOverflow {
                len: prompt.len(),
                max,
            }
            .into());
        }
        let run = SampleConfig {
            max_new_tokens: cfg.max_new_tokens.min(max - prompt.len()),
            ..*cfg
        };
        (generate(params, &prompt, &run)?, prompt.len())
    };
    Ok(Completion {
        restored: restore_tokens(&tokens, vocab, tables),
        tokens,
        prompt_tokens,
        prompt_bytes: cut,
        prompt_mcus: prompt_mcus.min(n),
    })
}
