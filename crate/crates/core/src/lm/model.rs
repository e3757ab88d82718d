use super::params::LayerOffsets;
use super::real::{gemm, Mat, MatMut};
use super::{LmError, ModelConfig, Params, Real};
use crate::bpe::TokenId;
use crate::corpus::Batch;

// ---- row-wise building blocks shared with the incremental path ----

/// `y = x · r · g` per row, with `r = 1/sqrt(mean(x²) + eps)`.
pub(crate) fn rmsnorm<T: Real>(x: &[T], gain: &[T], eps: f64, r: &mut [T], y: &mut [T]) {
    let d = gain.len();
    for ((xr, yr), rr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(r.iter_mut()) {
        let ms = xr.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>() / d as f64;
        let inv = T::from_f64(1.0 / (ms + eps).sqrt());
        *rr = inv;
        for ((yi, &xi), &gi) in yr.iter_mut().zip(xr).zip(gain) {
            *yi = xi * inv * gi;
        }
    }
}

fn rmsnorm_backward<T: Real>(
    x: &[T],
    r: &[T],
    gain: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
) {
    let d = gain.len();
    for (t, ((xr, dyr), dxr)) in x
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        let inv = r[t];
        let mut dot = 0.0f64;
        for i in 0..d {
            dgain[i] += dyr[i] * xr[i] * inv;
            dot += (dyr[i] * gain[i]).to_f64() * xr[i].to_f64();
        }
        let inv64 = inv.to_f64();
        let k = T::from_f64(inv64 * inv64 * inv64 * dot / d as f64);
        for i in 0..d {
            dxr[i] += inv * dyr[i] * gain[i] - k * xr[i];
        }
    }
}

/// `out = x · w` for `rows × k` by `k × n`.
pub(crate) fn matmul<T: Real>(x: &[T], rows: usize, k: usize, w: &[T], n: usize, out: &mut [T]) {
    gemm(
        T::ONE,
        Mat::rm(x, rows, k, k),
        Mat::rm(w, k, n, n),
        T::ZERO,
        MatMut::rm(out, rows, n, n),
    );
}

/// `gw += xᵀ · dy`.
fn matmul_grad_w<T: Real>(x: &[T], rows: usize, k: usize, dy: &[T], n: usize, gw: &mut [T]) {
    gemm(
        T::ONE,
        Mat::rm(x, rows, k, k).t(),
        Mat::rm(dy, rows, n, n),
        T::ONE,
        MatMut::rm(gw, k, n, n),
    );
}

/// `dx (+)= dy · wᵀ`.
fn matmul_grad_x<T: Real>(
    dy: &[T],
    rows: usize,
    n: usize,
    w: &[T],
    k: usize,
    beta: T,
    dx: &mut [T],
) {
    gemm(
        T::ONE,
        Mat::rm(dy, rows, n, n),
        Mat::rm(w, k, n, n).t(),
        beta,
        MatMut::rm(dx, rows, k, k),
    );
}

/// Rotates interleaved pairs of every head; row `t` sits at position
/// `pos0 + t`. `inverse` applies the transpose rotation.
pub(crate) fn rope<T: Real>(x: &mut [T], pos0: usize, c: &ModelConfig, inverse: bool) {
    let (d, dh) = (c.dim, c.head_dim());
    let half = dh / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| c.rope_base.powf(-((2 * i) as f64) / dh as f64))
        .collect();
    for (t, row) in x.chunks_exact_mut(d).enumerate() {
        let pos = (pos0 + t) as f64;
        for (i, &f) in freqs.iter().enumerate() {
            let (s, co) = (pos * f).sin_cos();
            let (s, co) = (T::from_f64(if inverse { -s } else { s }), T::from_f64(co));
            for h in 0..c.n_heads {
                let j = h * dh + 2 * i;
                let (a, b) = (row[j], row[j + 1]);
                row[j] = a * co - b * s;
                row[j + 1] = a * s + b * co;
            }
        }
    }
}

/// Softmax of `s[..=last]` accumulated in f64; entries after `last` are zeroed.
pub(crate) fn softmax_prefix<T: Real>(s: &mut [T], last: usize) {
    let m = s[..=last]
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let e: Vec<f64> = s[..=last]
        .iter()
        .map(|v| {
            let e = (v.to_f64() - m).exp();
            sum += e;
            e
        })
        .collect();
    for (o, e) in s.iter_mut().zip(e) {
        *o = T::from_f64(e / sum);
    }
    for o in &mut s[last + 1..] {
        *o = T::ZERO;
    }
}

fn silu_parts<T: Real>(a: T) -> (T, T) {
    let sig = T::ONE / (T::ONE + (-a).exp());
    (a * sig, sig)
}

/// SwiGLU: `m = silu(h·Wg) ⊙ (h·Wu)`.
pub(crate) fn swiglu<T: Real>(a: &[T], b: &[T], m: &mut [T]) {
    for ((mi, &ai), &bi) in m.iter_mut().zip(a).zip(b) {
        *mi = silu_parts(ai).0 * bi;
    }
}

pub(crate) fn check_tokens(c: &ModelConfig, tokens: &[TokenId]) -> Result<(), LmError> {
    if tokens.len() > c.max_context {
        return Err(LmError::ContextOverflow {
            len: tokens.len(),
            max: c.max_context,
        });
    }
    match tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        Some(&id) => Err(LmError::TokenOutOfRange {
            id,
            vocab: c.vocab_size,
        }),
        None => Ok(()),
    }
}

// ---- full-sequence forward with cached activations ----

struct LayerActs<T> {
    x: Vec<T>,
    r1: Vec<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention probabilities, `heads × T × T`.
    p: Vec<T>,
    o: Vec<T>,
    x2: Vec<T>,
    r2: Vec<T>,
    h2: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    m: Vec<T>,
}

struct RowActs<T> {
    layers: Vec<LayerActs<T>>,
    xf: Vec<T>,
    rf: Vec<T>,
    hf: Vec<T>,
    logits: Vec<T>,
}

fn forward_row<T: Real>(p: &Params<T>, tokens: &[TokenId]) -> RowActs<T> {
    let c = &p.config;
    let (n, d, f, v, nh, dh) = (
        tokens.len(),
        c.dim,
        c.hidden(),
        c.vocab_size,
        c.n_heads,
        c.head_dim(),
    );
    let eps = c.norm_epsilon;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let emb = p.slice(p.layout.embed, v * d);
    let mut x: Vec<T> = tokens
        .iter()
        .flat_map(|&t| emb[t as usize * d..(t as usize + 1) * d].iter().copied())
        .collect();
    let mut layers = Vec::with_capacity(c.n_layers);
    for lo in &p.layout.layers {
        let mut la = LayerActs {
            x: x.clone(),
            r1: vec![T::ZERO; n],
            h1: vec![T::ZERO; n * d],
            q: vec![T::ZERO; n * d],
            k: vec![T::ZERO; n * d],
            v: vec![T::ZERO; n * d],
            p: vec![T::ZERO; nh * n * n],
            o: vec![T::ZERO; n * d],
            x2: Vec::new(),
            r2: vec![T::ZERO; n],
            h2: vec![T::ZERO; n * d],
            a: vec![T::ZERO; n * f],
            b: vec![T::ZERO; n * f],
            m: vec![T::ZERO; n * f],
        };
        rmsnorm(&x, p.slice(lo.attn_norm, d), eps, &mut la.r1, &mut la.h1);
        matmul(&la.h1, n, d, p.slice(lo.wq, d * d), d, &mut la.q);
        matmul(&la.h1, n, d, p.slice(lo.wk, d * d), d, &mut la.k);
        matmul(&la.h1, n, d, p.slice(lo.wv, d * d), d, &mut la.v);
        rope(&mut la.q, 0, c, false);
        rope(&mut la.k, 0, c, false);
        for h in 0..nh {
            let ph = &mut la.p[h * n * n..(h + 1) * n * n];
            gemm(
                scale,
                Mat::rm(&la.q[h * dh..], n, dh, d),
                Mat::rm(&la.k[h * dh..], n, dh, d).t(),
                T::ZERO,
                MatMut::rm(ph, n, n, n),
            );
            for t in 0..n {
                softmax_prefix(&mut ph[t * n..(t + 1) * n], t);
            }
            gemm(
                T::ONE,
                Mat::rm(ph, n, n, n),
                Mat::rm(&la.v[h * dh..], n, dh, d),
                T::ZERO,
                MatMut::rm(&mut la.o[h * dh..], n, dh, d),
            );
        }
        let mut proj = vec![T::ZERO; n * d];
        matmul(&la.o, n, d, p.slice(lo.wo, d * d), d, &mut proj);
        for (xi, pi) in x.iter_mut().zip(&proj) {
            *xi += *pi;
        }
        la.x2 = x.clone();
        rmsnorm(&x, p.slice(lo.ffn_norm, d), eps, &mut la.r2, &mut la.h2);
        matmul(&la.h2, n, d, p.slice(lo.w_gate, d * f), f, &mut la.a);
        matmul(&la.h2, n, d, p.slice(lo.w_up, d * f), f, &mut la.b);
        swiglu(&la.a, &la.b, &mut la.m);
        matmul(&la.m, n, f, p.slice(lo.w_down, f * d), d, &mut proj);
        for (xi, pi) in x.iter_mut().zip(&proj) {
            *xi += *pi;
        }
        layers.push(la);
    }
    let mut rf = vec![T::ZERO; n];
    let mut hf = vec![T::ZERO; n * d];
    rmsnorm(&x, p.slice(p.layout.final_norm, d), eps, &mut rf, &mut hf);
    let mut logits = vec![T::ZERO; n * v];
    matmul(&hf, n, d, p.slice(p.layout.output, d * v), v, &mut logits);
    RowActs {
        layers,
        xf: x,
        rf,
        hf,
        logits,
    }
}

/// Logits for `batch` rows of `tokens.len() / batch` tokens, laid out
/// `batch × T × vocab`. Position `t` sees only tokens `0..=t` of its row.
pub fn forward<T: Real>(
    params: &Params<T>,
    tokens: &[TokenId],
    batch: usize,
) -> Result<Vec<T>, LmError> {
    assert!(batch > 0 && tokens.len() % batch == 0, "ragged token batch");
    let t = tokens.len() / batch;
    let mut out = Vec::with_capacity(tokens.len() * params.config.vocab_size);
    for row in tokens.chunks_exact(t.max(1)) {
        check_tokens(&params.config, row)?;
        out.extend(forward_row(params, row).logits);
    }
    Ok(out)
}

/// Per-position negative log-likelihood (nats) and, when `grad_scale` is
/// given, `grad_scale · (softmax − onehot)` as the logits gradient.
fn nll_and_dlogits<T: Real>(
    logits: &[T],
    targets: &[TokenId],
    v: usize,
    grad_scale: Option<f64>,
) -> (f64, Vec<T>) {
    let mut total = 0.0;
    let mut dl = if grad_scale.is_some() {
        vec![T::ZERO; logits.len()]
    } else {
        Vec::new()
    };
    for (t, (row, &y)) in logits.chunks_exact(v).zip(targets).enumerate() {
        let m = row
            .iter()
            .map(|x| x.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x.to_f64() - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[y as usize].to_f64();
        if let Some(s) = grad_scale {
            let out = &mut dl[t * v..(t + 1) * v];
            for (j, (o, x)) in out.iter_mut().zip(row).enumerate() {
                let pj = (x.to_f64() - lse).exp();
                let g = if j == y as usize { pj - 1.0 } else { pj };
                *o = T::from_f64(g * s);
            }
        }
    }
    (total, dl)
}

/// Summed NLL (nats) of `targets[t]` given `inputs[..=t]`.
pub fn sequence_nll<T: Real>(
    params: &Params<T>,
    inputs: &[TokenId],
    targets: &[TokenId],
) -> Result<f64, LmError> {
    assert_eq!(inputs.len(), targets.len());
    check_tokens(&params.config, inputs)?;
    check_tokens(&params.config, targets)?;
    let acts = forward_row(params, inputs);
    let (nll, _) = nll_and_dlogits(&acts.logits, targets, params.config.vocab_size, None);
    if !nll.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    Ok(nll)
}

fn row_io(batch: &Batch, b: usize) -> (&[TokenId], &[TokenId]) {
    let inp = batch.input_row(b);
    (&inp[..inp.len() - 1], batch.target_row(b))
}

/// Mean next-token cross-entropy over all `B·(L−1)` positions.
pub fn loss<T: Real>(params: &Params<T>, batch: &Batch) -> Result<f64, LmError> {
    let mut total = 0.0;
    for b in 0..batch.batch_size {
        let (inp, tgt) = row_io(batch, b);
        total += sequence_nll(params, inp, tgt)?;
    }
    let l = total / batch.positions() as f64;
    if !l.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    Ok(l)
}

fn backward_layer<T: Real>(
    p: &Params<T>,
    lo: &LayerOffsets,
    la: &LayerActs<T>,
    dx: &mut [T],
    g: &mut Params<T>,
) {
    let c = &p.config;
    let (n, d, f, nh, dh) = (la.r1.len(), c.dim, c.hidden(), c.n_heads, c.head_dim());
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let gd = &mut g.data;

    // feed-forward: x3 = x2 + m·Wd
    let mut dm = vec![T::ZERO; n * f];
    matmul_grad_x(dx, n, d, p.slice(lo.w_down, f * d), f, T::ZERO, &mut dm);
    matmul_grad_w(&la.m, n, f, dx, d, &mut gd[lo.w_down..lo.w_down + f * d]);
    let mut da = vec![T::ZERO; n * f];
    let mut db = vec![T::ZERO; n * f];
    for i in 0..n * f {
        let (s, sig) = silu_parts(la.a[i]);
        db[i] = dm[i] * s;
        da[i] = dm[i] * la.b[i] * sig * (T::ONE + la.a[i] * (T::ONE - sig));
    }
    matmul_grad_w(&la.h2, n, d, &da, f, &mut gd[lo.w_gate..lo.w_gate + d * f]);
    matmul_grad_w(&la.h2, n, d, &db, f, &mut gd[lo.w_up..lo.w_up + d * f]);
    let mut dh2 = vec![T::ZERO; n * d];
    matmul_grad_x(&da, n, f, p.slice(lo.w_gate, d * f), d, T::ZERO, &mut dh2);
    matmul_grad_x(&db, n, f, p.slice(lo.w_up, d * f), d, T::ONE, &mut dh2);
    rmsnorm_backward(
        &la.x2,
        &la.r2,
        p.slice(lo.ffn_norm, d),
        &dh2,
        dx,
        &mut gd[lo.ffn_norm..lo.ffn_norm + d],
    );

    // attention: x2 = x + o·Wo
    let mut dout = vec![T::ZERO; n * d];
    matmul_grad_x(dx, n, d, p.slice(lo.wo, d * d), d, T::ZERO, &mut dout);
    matmul_grad_w(&la.o, n, d, dx, d, &mut gd[lo.wo..lo.wo + d * d]);
    let mut dq = vec![T::ZERO; n * d];
    let mut dk = vec![T::ZERO; n * d];
    let mut dv = vec![T::ZERO; n * d];
    let mut dp = vec![T::ZERO; n * n];
    for h in 0..nh {
        let ph = &la.p[h * n * n..(h + 1) * n * n];
        gemm(
            T::ONE,
            Mat::rm(&dout[h * dh..], n, dh, d),
            Mat::rm(&la.v[h * dh..], n, dh, d).t(),
            T::ZERO,
            MatMut::rm(&mut dp, n, n, n),
        );
        gemm(
            T::ONE,
            Mat::rm(ph, n, n, n).t(),
            Mat::rm(&dout[h * dh..], n, dh, d),
            T::ZERO,
            MatMut::rm(&mut dv[h * dh..], n, dh, d),
        );
        for t in 0..n {
            let (pr, dr) = (&ph[t * n..(t + 1) * n], &mut dp[t * n..(t + 1) * n]);
            let dot: f64 = (0..=t).map(|s| pr[s].to_f64() * dr[s].to_f64()).sum();
            let dot = T::from_f64(dot);
            for s in 0..n {
                dr[s] = if s <= t {
                    pr[s] * (dr[s] - dot) * scale
                } else {
                    T::ZERO
                };
            }
        }
        gemm(
            T::ONE,
            Mat::rm(&dp, n, n, n),
            Mat::rm(&la.k[h * dh..], n, dh, d),
            T::ZERO,
            MatMut::rm(&mut dq[h * dh..], n, dh, d),
        );
        gemm(
            T::ONE,
            Mat::rm(&dp, n, n, n).t(),
            Mat::rm(&la.q[h * dh..], n, dh, d),
            T::ZERO,
            MatMut::rm(&mut dk[h * dh..], n, dh, d),
        );
    }
    rope(&mut dq, 0, c, true);
    rope(&mut dk, 0, c, true);
    matmul_grad_w(&la.h1, n, d, &dq, d, &mut gd[lo.wq..lo.wq + d * d]);
    matmul_grad_w(&la.h1, n, d, &dk, d, &mut gd[lo.wk..lo.wk + d * d]);
    matmul_grad_w(&la.h1, n, d, &dv, d, &mut gd[lo.wv..lo.wv + d * d]);
    let mut dh1 = vec![T::ZERO; n * d];
    matmul_grad_x(&dq, n, d, p.slice(lo.wq, d * d), d, T::ZERO, &mut dh1);
    matmul_grad_x(&dk, n, d, p.slice(lo.wk, d * d), d, T::ONE, &mut dh1);
    matmul_grad_x(&dv, n, d, p.slice(lo.wv, d * d), d, T::ONE, &mut dh1);
    rmsnorm_backward(
        &la.x,
        &la.r1,
        p.slice(lo.attn_norm, d),
        &dh1,
        dx,
        &mut gd[lo.attn_norm..lo.attn_norm + d],
    );
}

/// Loss contribution (summed nats) and gradient of one row, with the
/// gradient scaled by `1/positions`.
fn row_loss_grads<T: Real>(
    p: &Params<T>,
    inputs: &[TokenId],
    targets: &[TokenId],
    positions: usize,
) -> Result<(f64, Params<T>), LmError> {
    check_tokens(&p.config, inputs)?;
    check_tokens(&p.config, targets)?;
    let c = &p.config;
    let (n, d, v) = (inputs.len(), c.dim, c.vocab_size);
    let acts = forward_row(p, inputs);
    let (nll, dlogits) =
        nll_and_dlogits(&acts.logits, targets, v, Some(1.0 / positions as f64));
    if !nll.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    let mut g = Params::zeros(c)?;
    let lay = &p.layout;
    matmul_grad_w(&acts.hf, n, d, &dlogits, v, &mut g.data[lay.output..lay.output + d * v]);
    let mut dhf = vec![T::ZERO; n * d];
    matmul_grad_x(&dlogits, n, v, p.slice(lay.output, d * v), d, T::ZERO, &mut dhf);
    let mut dx = vec![T::ZERO; n * d];
    rmsnorm_backward(
        &acts.xf,
        &acts.rf,
        p.slice(lay.final_norm, d),
        &dhf,
        &mut dx,
        &mut g.data[lay.final_norm..lay.final_norm + d],
    );
    for (lo, la) in lay.layers.iter().zip(&acts.layers).rev() {
        backward_layer(p, lo, la, &mut dx, &mut g);
    }
    for (t, &tok) in inputs.iter().enumerate() {
        let at = lay.embed + tok as usize * d;
        for (gi, &di) in g.data[at..at + d].iter_mut().zip(&dx[t * d..(t + 1) * d]) {
            *gi += di;
        }
    }
    Ok((nll, g))
}

/// Mean cross-entropy over all `B·(L−1)` target positions and its exact
/// gradient. Rows are differentiated independently and summed in row order,
/// so the result does not depend on the thread count.
pub fn loss_and_grads<T: Real>(
    params: &Params<T>,
    batch: &Batch,
) -> Result<(f64, Params<T>), LmError> {
    let positions = batch.positions();
    let mut total = Params::zeros(&params.config)?;
    let mut nll = 0.0;
    let rows: Vec<usize> = (0..batch.batch_size).collect();
    for group in rows.chunks(group_size()) {
        let results = map_rows(group, |&b| {
            let (inp, tgt) = row_io(batch, b);
            row_loss_grads(params, inp, tgt, positions)
        });
        for r in results {
            let (l, g) = r?;
            nll += l;
            total.add_assign(&g);
        }
    }
    let loss = nll / positions as f64;
    if !loss.is_finite() || !total.all_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    Ok((loss, total))
}

#[cfg(feature = "parallel")]
fn group_size() -> usize {
    rayon::current_num_threads().max(1)
}

#[cfg(not(feature = "parallel"))]
fn group_size() -> usize {
    1
}

fn map_rows<R: Send>(rows: &[usize], f: impl Fn(&usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if rows.len() > 1 {
            return rows.par_iter().map(f).collect();
        }
    }
    rows.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_multiplier: 2,
            max_context: 16,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn single_position_shape() {
        let p = Params::<f32>::init(&tiny(20)).unwrap();
        let l = forward(&p, &[3, 4], 2).unwrap();
        assert_eq!(l.len(), 2 * 20);
    }

    #[test]
    fn overflow_and_range_errors() {
        let p = Params::<f32>::init(&tiny(20)).unwrap();
        assert!(matches!(
            forward(&p, &[0; 17], 1),
            Err(LmError::ContextOverflow { len: 17, max: 16 })
        ));
        assert!(matches!(
            forward(&p, &[25], 1),
            Err(LmError::TokenOutOfRange { id: 25, .. })
        ));
    }

    #[test]
    fn softmax_prefix_normalizes_and_masks() {
        let mut s = [1.0f32, 2.0, 3.0, 100.0];
        softmax_prefix(&mut s, 2);
        assert!((s[..3].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn rope_inverse_roundtrip() {
        let c = tiny(10);
        let x: Vec<f64> = (0..32).map(|i| i as f64 * 0.1 - 1.0).collect();
        let mut y = x.clone();
        rope(&mut y, 5, &c, false);
        assert_ne!(x, y);
        rope(&mut y, 5, &c, true);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let c = tiny(50);
        let p = Params::<f64>::zeros(&c).unwrap();
        let b = Batch::from_rows(&[&[1, 2, 3, 4, 5]]);
        let l = loss(&p, &b).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_token_vocab_has_zero_loss_and_gradient() {
        let c = tiny(1);
        let p = Params::<f64>::init(&c).unwrap();
        let b = Batch::from_rows(&[&[0, 0, 0, 0]]);
        let (l, g) = loss_and_grads(&p, &b).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&x| x == 0.0));
    }
}
