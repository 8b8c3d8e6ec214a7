//! Dense building blocks with hand-written backward passes.

use crate::tensor::Matrix;

use super::params::{FeedForwardParams, LayerNormParams};

/// `x · w (+ b)`.
pub fn linear(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Matrix {
    let mut y = x.matmul(w);
    if let Some(b) = b {
        y.add_row(b);
    }
    y
}

/// Accumulates `dw` (and `db`) and returns the input gradient.
pub fn linear_backward(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: Option<&mut Matrix>,
) -> Matrix {
    x.t_matmul_into(dy, dw);
    if let Some(db) = db {
        dy.sum_rows_into(db);
    }
    dy.matmul_t(w)
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Matrix, p: &LayerNormParams, eps: f64) -> (Matrix, LayerNormCache) {
    let d = x.cols();
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + eps).sqrt();
        inv_std.push(s);
        for c in 0..d {
            let n = (row[c] - mean) * s;
            normalized.set(r, c, n);
            out.set(r, c, n * p.gain.get(0, c) + p.bias.get(0, c));
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    p: &LayerNormParams,
    dy: &Matrix,
    grads: &mut LayerNormParams,
) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows() {
        let xhat = cache.normalized.row(r);
        let g = dy.row(r);
        for c in 0..d {
            dxhat[c] = g[c] * p.gain.get(0, c);
            grads.gain.data_mut()[c] += g[c] * xhat[c];
            grads.bias.data_mut()[c] += g[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let s = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = s * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

pub fn feed_forward(x: &Matrix, p: &FeedForwardParams) -> (Matrix, FeedForwardCache) {
    let pre = linear(x, &p.w_in, Some(&p.b_in));
    let mut act = pre.clone();
    for v in act.data_mut() {
        *v = gelu(*v);
    }
    let out = linear(&act, &p.w_out, Some(&p.b_out));
    (
        out,
        FeedForwardCache {
            input: x.clone(),
            pre,
            act,
        },
    )
}

pub fn feed_forward_backward(
    cache: &FeedForwardCache,
    p: &FeedForwardParams,
    dy: &Matrix,
    grads: &mut FeedForwardParams,
) -> Matrix {
    let mut d_act = linear_backward(&cache.act, &p.w_out, dy, &mut grads.w_out, Some(&mut grads.b_out));
    for (g, &x) in d_act.data_mut().iter_mut().zip(cache.pre.data()) {
        *g *= gelu_grad(x);
    }
    linear_backward(&cache.input, &p.w_in, &d_act, &mut grads.w_in, Some(&mut grads.b_in))
}
