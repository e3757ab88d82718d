//! Held-out bits per byte, decode success of unconditional samples, and a
//! Fréchet distance over image feature statistics.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bpe::{BpeVocab, BOS};
use crate::corpus::TokenStore;
use crate::image::RgbImage;
use crate::jpeg::TableSet;
use crate::lm::{sequence_nll, Params, Real};
use crate::sample::{generate, restore_tokens, DecodeOutcome, SampleConfig};
use crate::util::{map_maybe_parallel, mix_seed};
use crate::{Error, Result};

/// Mean cross-entropy of `store` in bits per canonical byte. Documents
/// longer than the context are scored in consecutive windows, each starting
/// from an empty cache. Specials cost their nats but contribute no bytes.
pub fn bits_per_byte<T: Real>(params: &Params<T>, store: &TokenStore, vocab: &BpeVocab) -> Result<f64> {
    store.check_vocab(vocab)?;
    if vocab.size() != params.config.vocab_size {
        return Err(Error::Mismatch(format!(
            "vocab of {} tokens but model expects {}",
            vocab.size(),
            params.config.vocab_size
        )));
    }
    let ctx = params.config.max_context;
    let mut windows: Vec<(usize, usize, usize)> = Vec::new();
    for d in 0..store.doc_count() {
        let n = store.document(d).len();
        let mut start = 0;
        while start + 1 < n {
            let end = (start + ctx).min(n - 1);
            windows.push((d, start, end));
            start = end;
        }
    }
    let scored = map_maybe_parallel(&windows, |&(d, s, e)| {
        let doc = store.document(d);
        let nll = sequence_nll(params, &doc[s..e], &doc[s + 1..e + 1])?;
        let bytes: usize = doc[s + 1..e + 1]
            .iter()
            .map(|&t| vocab.expansion(t).map_or(0, <[u8]>::len))
            .sum();
        Ok::<_, Error>((nll, bytes))
    });
    let (mut nats, mut bytes) = (0.0, 0usize);
    for r in scored {
        let (n, b) = r?;
        nats += n;
        bytes += b;
    }
    if bytes == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(nats / std::f64::consts::LN_2 / bytes as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub n_samples: usize,
    pub clean: usize,
    pub salvaged: usize,
    pub unrecoverable: usize,
    /// Fraction of samples that restored without any salvage.
    pub rate: f64,
    pub mean_tokens: f64,
}

/// Draws `n_samples` unconditional samples (prompt `[BOS]`, sample `i`
/// seeded with `mix_seed(cfg.seed, i)`) and classifies their restoration.
pub fn decode_success_rate<T: Real>(
    params: &Params<T>,
    cfg: &SampleConfig,
    n_samples: usize,
    vocab: &BpeVocab,
    tables: &TableSet,
) -> Result<DecodeReport> {
    let run = SampleConfig {
        max_new_tokens: cfg.max_new_tokens.min(params.config.max_context - 1),
        ..*cfg
    };
    let seeds: Vec<u64> = (0..n_samples as u64).map(|i| mix_seed(cfg.seed, i)).collect();
    let outcomes = map_maybe_parallel(&seeds, |&seed| {
        let toks = generate(params, &[BOS], &SampleConfig { seed, ..run })?;
        Ok::<_, Error>((restore_tokens(&toks, vocab, tables).outcome, toks.len()))
    });
    let mut report = DecodeReport {
        n_samples,
        ..DecodeReport::default()
    };
    let mut tokens = 0;
    for o in outcomes {
        let (outcome, len) = o?;
        tokens += len;
        match outcome {
            DecodeOutcome::Clean => report.clean += 1,
            DecodeOutcome::Salvaged => report.salvaged += 1,
            DecodeOutcome::Unrecoverable => report.unrecoverable += 1,
        }
    }
    if n_samples > 0 {
        report.rate = report.clean as f64 / n_samples as f64;
        report.mean_tokens = tokens as f64 / n_samples as f64;
    }
    Ok(report)
}

/// Maps an image to a fixed-length vector.
pub trait FeatureExtractor: Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, image: &RgbImage) -> Vec<f64>;
}

/// 8×8 area-averaged luma, 64-bin histograms of R, G and B, and the mean
/// absolute 8×8 DCT coefficient of luma in each of the 15 diagonal
/// frequency bands `u + v`. All scaled to roughly unit range.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultExtractor;

const THUMB: usize = 8;
const BINS: usize = 64;
const BANDS: usize = 15;

fn luma(p: [u8; 3]) -> f64 {
    (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.25f64.sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    c
}

impl FeatureExtractor for DefaultExtractor {
    fn id(&self) -> &str {
        "thumb8-hist64-dctband15"
    }

    fn dim(&self) -> usize {
        THUMB * THUMB + 3 * BINS + BANDS
    }

    fn extract(&self, image: &RgbImage) -> Vec<f64> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut out = Vec::with_capacity(self.dim());
        let y: Vec<f64> = image.data().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();

        for by in 0..THUMB {
            let (y0, y1) = (by * h / THUMB, ((by + 1) * h / THUMB).max(by * h / THUMB + 1).min(h));
            for bx in 0..THUMB {
                let (x0, x1) = (bx * w / THUMB, ((bx + 1) * w / THUMB).max(bx * w / THUMB + 1).min(w));
                let mut s = 0.0;
                for yy in y0..y1 {
                    s += y[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                }
                out.push(s / ((y1 - y0) * (x1 - x0)).max(1) as f64);
            }
        }

        let mut hist = vec![0.0; 3 * BINS];
        for p in image.data().chunks_exact(3) {
            for c in 0..3 {
                hist[c * BINS + usize::from(p[c]) * BINS / 256] += 1.0;
            }
        }
        let n = (w * h).max(1) as f64;
        out.extend(hist.iter().map(|v| v / n));

        let basis = dct_basis();
        let mut bands = [0.0; BANDS];
        let mut counts = [0usize; BANDS];
        for u in 0..8 {
            for v in 0..8 {
                counts[u + v] += 1;
            }
        }
        let mut blocks = 0usize;
        for by in 0..h / 8 {
            for bx in 0..w / 8 {
                let mut tmp = [[0.0; 8]; 8];
                for (u, row) in tmp.iter_mut().enumerate() {
                    for (x, t) in row.iter_mut().enumerate() {
                        *t = (0..8)
                            .map(|yy| basis[u][yy] * (y[(by * 8 + yy) * w + bx * 8 + x] - 0.5))
                            .sum();
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let c: f64 = (0..8).map(|x| tmp[u][x] * basis[v][x]).sum();
                        bands[u + v] += c.abs();
                    }
                }
                blocks += 1;
            }
        }
        for (b, &k) in bands.iter().zip(&counts) {
            out.push(if blocks == 0 { 0.0 } else { b / (k * blocks) as f64 });
        }
        out
    }
}

pub fn extract_all(extractor: &dyn FeatureExtractor, images: &[RgbImage]) -> Vec<Vec<f64>> {
    map_maybe_parallel(images, |im| extractor.extract(im))
}

/// Mean and covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub extractor: String,
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    /// Accumulates rows in the given order; the covariance uses the
    /// unbiased `n - 1` normalization. Needs at least `dim + 1` rows.
    pub fn from_features(extractor: &str, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Mismatch("feature rows differ in length".into()));
        }
        if dim == 0 || rows.len() < dim + 1 {
            return Err(Error::Data(format!(
                "{} feature vectors of dimension {dim}: need at least {}",
                rows.len(),
                dim + 1
            )));
        }
        let n = rows.len();
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for r in rows {
            let d = DVector::from_column_slice(r) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (n - 1) as f64;
        Self::new(extractor, n, mean, cov)
    }

    /// Takes precomputed statistics; `cov` must be square, match `mean`,
    /// and be symmetric to within 1e-8 (it is then symmetrized exactly).
    pub fn new(extractor: &str, n: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.shape() != (dim, dim) {
            return Err(Error::Mismatch(format!(
                "covariance {:?} does not match mean of length {dim}",
                cov.shape()
            )));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-8 * scale {
            return Err(Error::Data("covariance is not symmetric".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self {
            extractor: extractor.to_string(),
            n,
            mean,
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn of_images(extractor: &dyn FeatureExtractor, images: &[RgbImage]) -> Result<Self> {
        Self::from_features(extractor.id(), &extract_all(extractor, images))
    }
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative eigenvalues from rounding are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&roots) * q.transpose()
}

/// `‖μa − μb‖² + tr(Σa) + tr(Σb) − 2 tr((Σa Σb)^½)`, with the last trace
/// taken as `tr((Σa^½ Σb Σa^½)^½)`, which has the same eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.extractor != b.extractor {
        return Err(Error::Mismatch(format!(
            "features from {} and {}",
            a.extractor, b.extractor
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Mismatch(format!(
            "feature dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let s = sqrtm_psd(&a.cov);
    let inner = &s * &b.cov * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let d = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatType {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingHeader {
    format: String,
    n: usize,
    dim: usize,
    extractor: String,
    dtype: FloatType,
}

const EMBEDDING_FORMAT: &str = "codeclm-embeddings/1";
const HEADER_END: &[u8] = b"\n---\n";

/// Per-image embedding vectors from an external model.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub extractor: String,
    pub rows: Vec<Vec<f64>>,
}

impl Embeddings {
    /// A TOML header (`format`, `n`, `dim`, `extractor`, `dtype`) closed by
    /// a `---` line, then `n × dim` little-endian floats row by row.
    pub fn to_bytes(&self, dtype: FloatType) -> Vec<u8> {
        let dim = self.rows.first().map_or(0, Vec::len);
        let header = EmbeddingHeader {
            format: EMBEDDING_FORMAT.into(),
            n: self.rows.len(),
            dim,
            extractor: self.extractor.clone(),
            dtype,
        };
        let mut out = toml::to_string(&header).expect("header serializes").into_bytes();
        if out.last() == Some(&b'\n') {
            out.pop();
        }
        out.extend_from_slice(HEADER_END);
        for r in &self.rows {
            for &x in r {
                match dtype {
                    FloatType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    FloatType::F64 => out.extend_from_slice(&x.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> std::result::Result<Self, String> {
        let split = data
            .windows(HEADER_END.len())
            .position(|w| w == HEADER_END)
            .ok_or("missing header terminator")?;
        let text = std::str::from_utf8(&data[..split]).map_err(|_| "header is not UTF-8")?;
        let h: EmbeddingHeader = toml::from_str(text).map_err(|e| format!("header: {e}"))?;
        if h.format != EMBEDDING_FORMAT {
            return Err(format!("unsupported format {:?}", h.format));
        }
        let body = &data[split + HEADER_END.len()..];
        let width = match h.dtype {
            FloatType::F32 => 4,
            FloatType::F64 => 8,
        };
        if body.len() != h.n * h.dim * width {
            return Err(format!(
                "expected {} bytes of {} x {} values, found {}",
                h.n * h.dim * width,
                h.n,
                h.dim,
                body.len()
            ));
        }
        let values: Vec<f64> = body
            .chunks_exact(width)
            .map(|c| match h.dtype {
                FloatType::F32 => f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))),
                FloatType::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .collect();
        let rows = if h.dim == 0 {
            vec![Vec::new(); h.n]
        } else {
            values.chunks_exact(h.dim).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            extractor: h.extractor,
            rows,
        })
    }

    pub fn save(&self, path: &Path, dtype: FloatType) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes(dtype)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data).map_err(|e| Error::format(path, e))
    }

    pub fn stats(&self) -> Result<FeatureStats> {
        FeatureStats::from_features(&self.extractor, &self.rows)
    }
}
