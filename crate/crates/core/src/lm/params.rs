use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LmError, ModelConfig, Real};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one block's tensors. Matrices are stored `[in, out]`
/// row-major, so a projection is `y = x · W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_norm: usize,
    pub output: usize,
    pub total: usize,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (v, d, f) = (c.vocab_size, c.dim, c.hidden());
        let mut tensors = Vec::new();
        let mut at = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = at;
            at += shape.iter().product::<usize>();
            tensors.push(TensorSpec { name, shape, offset });
            offset
        };
        let embed = push("tok_embed".into(), vec![v, d]);
        let layers = (0..c.n_layers)
            .map(|l| LayerOffsets {
                attn_norm: push(format!("layers.{l}.attn_norm"), vec![d]),
                wq: push(format!("layers.{l}.wq"), vec![d, d]),
                wk: push(format!("layers.{l}.wk"), vec![d, d]),
                wv: push(format!("layers.{l}.wv"), vec![d, d]),
                wo: push(format!("layers.{l}.wo"), vec![d, d]),
                ffn_norm: push(format!("layers.{l}.ffn_norm"), vec![d]),
                w_gate: push(format!("layers.{l}.w_gate"), vec![d, f]),
                w_up: push(format!("layers.{l}.w_up"), vec![d, f]),
                w_down: push(format!("layers.{l}.w_down"), vec![f, d]),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d]);
        let output = push("output".into(), vec![d, v]);
        Self {
            embed,
            layers,
            final_norm,
            output,
            total: at,
            tensors,
        }
    }
}

/// Model parameters (or a gradient of the same shape) in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, LmError> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(Self {
            config: *config,
            data: vec![T::ZERO; layout.total],
            layout,
        })
    }

    /// Normal(0, 0.02) weights, residual output projections further scaled
    /// by 1/sqrt(2·n_layers), unit norm gains. Deterministic in the seed.
    pub fn init(config: &ModelConfig) -> Result<Self, LmError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for t in &p.layout.tensors {
            let range = t.range();
            if t.shape.len() == 1 {
                p.data[range].fill(T::ONE);
                continue;
            }
            let scale = if t.name.ends_with(".wo") || t.name.ends_with(".w_down") {
                resid
            } else {
                1.0
            };
            for x in &mut p.data[range] {
                *x = T::from_f64(normal.sample(&mut rng) * scale);
            }
        }
        Ok(p)
    }

    pub fn from_data(config: &ModelConfig, data: Vec<T>) -> Result<Self, LmError> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total {
            return Err(LmError::Shape(format!(
                "{} values for {} parameters",
                data.len(),
                layout.total
            )));
        }
        Ok(Self {
            config: *config,
            layout,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range()])
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.data[offset..offset + len]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.to_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            config: self.config,
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}
