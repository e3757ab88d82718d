//! Incremental decoding: one position at a time against cached keys and
//! values. Uses the same kernels as the full forward pass, so logits agree
//! bit for bit with re-running the whole prefix.

use super::model::{check_tokens, matmul, rmsnorm, rope, softmax_prefix, swiglu};
use super::real::{gemm, Mat, MatMut};
use super::{LmError, Params, Real};
use crate::bpe::TokenId;

/// Rotated keys and values of every processed position, per layer.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
    max: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(params: &Params<T>) -> Self {
        let c = &params.config;
        Self {
            k: vec![Vec::with_capacity(c.max_context * c.dim); c.n_layers],
            v: vec![Vec::with_capacity(c.max_context * c.dim); c.n_layers],
            len: 0,
            max: c.max_context,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `token` at the next position and returns its logits.
    pub fn step(&mut self, p: &Params<T>, token: TokenId) -> Result<Vec<T>, LmError> {
        let c = &p.config;
        if self.len >= self.max {
            return Err(LmError::ContextOverflow {
                len: self.len + 1,
                max: self.max,
            });
        }
        check_tokens(c, &[token])?;
        let (d, f, v, nh, dh) = (c.dim, c.hidden(), c.vocab_size, c.n_heads, c.head_dim());
        let eps = c.norm_epsilon;
        let pos = self.len;
        let n = pos + 1;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let at = p.layout.embed + token as usize * d;
        let mut x = p.data[at..at + d].to_vec();
        let mut r = [T::ZERO];
        let mut h = vec![T::ZERO; d];
        let mut q = vec![T::ZERO; d];
        let mut k = vec![T::ZERO; d];
        let mut vv = vec![T::ZERO; d];
        let mut o = vec![T::ZERO; d];
        let mut proj = vec![T::ZERO; d];
        let mut a = vec![T::ZERO; f];
        let mut b = vec![T::ZERO; f];
        let mut m = vec![T::ZERO; f];
        let mut s = vec![T::ZERO; n];
        for (l, lo) in p.layout.layers.iter().enumerate() {
            rmsnorm(&x, p.slice(lo.attn_norm, d), eps, &mut r, &mut h);
            matmul(&h, 1, d, p.slice(lo.wq, d * d), d, &mut q);
            matmul(&h, 1, d, p.slice(lo.wk, d * d), d, &mut k);
            matmul(&h, 1, d, p.slice(lo.wv, d * d), d, &mut vv);
            rope(&mut q, pos, c, false);
            rope(&mut k, pos, c, false);
            self.k[l].extend_from_slice(&k);
            self.v[l].extend_from_slice(&vv);
            let (kc, vc) = (&self.k[l], &self.v[l]);
            for hd in 0..nh {
                gemm(
                    scale,
                    Mat::rm(&q[hd * dh..], 1, dh, d),
                    Mat::rm(&kc[hd * dh..], n, dh, d).t(),
                    T::ZERO,
                    MatMut::rm(&mut s, 1, n, n),
                );
                softmax_prefix(&mut s, pos);
                gemm(
                    T::ONE,
                    Mat::rm(&s, 1, n, n),
                    Mat::rm(&vc[hd * dh..], n, dh, d),
                    T::ZERO,
                    MatMut::rm(&mut o[hd * dh..], 1, dh, d),
                );
            }
            matmul(&o, 1, d, p.slice(lo.wo, d * d), d, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += *pi;
            }
            rmsnorm(&x, p.slice(lo.ffn_norm, d), eps, &mut r, &mut h);
            matmul(&h, 1, d, p.slice(lo.w_gate, d * f), f, &mut a);
            matmul(&h, 1, d, p.slice(lo.w_up, d * f), f, &mut b);
            swiglu(&a, &b, &mut m);
            matmul(&m, 1, f, p.slice(lo.w_down, f * d), d, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += *pi;
            }
        }
        rmsnorm(&x, p.slice(p.layout.final_norm, d), eps, &mut r, &mut h);
        let mut logits = vec![T::ZERO; v];
        matmul(&h, 1, d, p.slice(p.layout.output, d * v), v, &mut logits);
        self.len += 1;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{forward, ModelConfig};

    #[test]
    fn cached_logits_equal_full_forward_bitwise() {
        let c = ModelConfig {
            vocab_size: 40,
            dim: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_multiplier: 2,
            max_context: 300,
            seed: 11,
            ..ModelConfig::default()
        };
        let p = Params::<f32>::init(&c).unwrap();
        let tokens: Vec<u32> = (0..300).map(|i| (i * 7 + i / 3) % 40).collect();
        let full = forward(&p, &tokens, 1).unwrap();
        let mut cache = KvCache::new(&p);
        for (t, &tok) in tokens.iter().enumerate() {
            let l = cache.step(&p, tok).unwrap();
            assert_eq!(l, full[t * 40..(t + 1) * 40], "position {t}");
        }
        assert!(cache.step(&p, 0).is_err());
    }
}
