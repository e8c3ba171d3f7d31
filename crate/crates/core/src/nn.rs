//! Dense-layer primitives with hand-written backward passes.
//!
//! Weights are row-major `[out, in]`. Backward functions accumulate into
//! gradient buffers (`+=`) so a batch can share one gradient set.

pub const LN_EPS: f64 = 1e-5;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x + b` for one input vector.
pub fn linear(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), y.len() * n_in);
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = dot(&w[o * n_in..(o + 1) * n_in], x) + b[o];
    }
}

/// Accumulates `dW += dy xᵀ`, `db += dy`, and, when requested, `dx += Wᵀ dy`.
pub fn linear_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g != 0.0 {
            axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * n_in..(o + 1) * n_in], dx);
            }
        }
    }
}

/// Layer-norm statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: f64,
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], y: &mut [f64]) -> LnCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
    for i in 0..x.len() {
        y[i] = gamma[i] * xhat[i] + beta[i];
    }
    LnCache { xhat, rstd }
}

/// Accumulates parameter gradients and adds the input gradient into `dx`.
pub fn layer_norm_backward(
    cache: &LnCache,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let n = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for i in 0..dy.len() {
        dgamma[i] += dy[i] * cache.xhat[i];
        dbeta[i] += dy[i];
        dxhat[i] = dy[i] * gamma[i];
    }
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n;
    for i in 0..dy.len() {
        dx[i] += cache.rstd * (dxhat[i] - mean_d - cache.xhat[i] * mean_dx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

#[inline]
pub fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Standard sinusoidal timestep embedding of even width `dim`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}
