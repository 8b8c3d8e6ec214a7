//! Scaled dot-product attention over an explicit per-row key list.
//!
//! Only allowed (query, key) pairs are ever scored, so the cost of a sparse
//! pattern is proportional to its pair count.

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::pattern::AttentionPattern;
use crate::tensor::{dot, Matrix};

use super::layers::{linear, linear_backward};
use super::params::AttentionParams;

/// For each query row, the ascending list of key positions it may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMask {
    rows: Vec<Vec<usize>>,
    n_keys: usize,
}

impl KeyMask {
    pub fn from_rows(rows: Vec<Vec<usize>>, n_keys: usize) -> Self {
        debug_assert!(rows.iter().flatten().all(|&j| j < n_keys));
        KeyMask { rows, n_keys }
    }

    pub fn from_fn(m: usize, n: usize, allowed: impl Fn(usize, usize) -> bool) -> Self {
        let rows = (0..m)
            .map(|i| (0..n).filter(|&j| allowed(i, j)).collect())
            .collect();
        KeyMask { rows, n_keys: n }
    }

    /// Encoder self-attention mask: the pattern with PAD keys removed. A row
    /// left without keys (only possible for PAD queries) keeps its diagonal.
    pub fn encoder(pattern: &AttentionPattern, tokens: &[usize]) -> Self {
        let rows = (0..pattern.len())
            .map(|i| {
                let keys: Vec<usize> = pattern
                    .row_keys(i)
                    .into_iter()
                    .filter(|&j| tokens[j] != PAD)
                    .collect();
                if keys.is_empty() {
                    vec![i]
                } else {
                    keys
                }
            })
            .collect();
        KeyMask {
            rows,
            n_keys: pattern.len(),
        }
    }

    /// Decoder self-attention: position `i` sees `0..=i`.
    pub fn causal(t: usize) -> Self {
        KeyMask {
            rows: (0..t).map(|i| (0..=i).collect()).collect(),
            n_keys: t,
        }
    }

    /// Cross-attention: every query sees every non-PAD source position.
    pub fn cross(queries: usize, source_tokens: &[usize]) -> Self {
        let keys: Vec<usize> = (0..source_tokens.len())
            .filter(|&j| source_tokens[j] != PAD)
            .collect();
        KeyMask {
            rows: vec![keys; queries],
            n_keys: source_tokens.len(),
        }
    }

    pub fn keys(&self, row: usize) -> &[usize] {
        &self.rows[row]
    }

    pub fn n_queries(&self) -> usize {
        self.rows.len()
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Softmax weights per head and query row, aligned with the mask's key lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    heads: Vec<Vec<Vec<f64>>>,
}

impl AttentionWeights {
    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        &self.heads[head][query]
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.heads.iter().flatten().map(Vec::as_slice)
    }
}

/// Multi-head scaled dot-product attention without projections. `q`, `k` and
/// `v` are already projected; head `h` uses columns `h*dh..(h+1)*dh`.
pub fn scaled_dot_product_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &KeyMask,
    n_heads: usize,
) -> Result<(Matrix, AttentionWeights)> {
    let d = q.cols();
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::validation(format!(
            "width {d} is not divisible into {n_heads} heads"
        )));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::validation("query/key/value shapes disagree"));
    }
    if mask.n_queries() != q.rows() || mask.n_keys() != k.rows() {
        return Err(Error::validation("mask shape does not match inputs"));
    }
    if let Some(i) = (0..q.rows()).find(|&i| mask.keys(i).is_empty()) {
        return Err(Error::Contract(format!("query row {i} has no allowed keys")));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), d);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut per_row = Vec::with_capacity(q.rows());
        for i in 0..q.rows() {
            let keys = mask.keys(i);
            let qi = &q.row(i)[cols.clone()];
            let mut probs: Vec<f64> = keys
                .iter()
                .map(|&j| dot(qi, &k.row(j)[cols.clone()]) * scale)
                .collect();
            softmax_in_place(&mut probs);
            let out_row = &mut out.row_mut(i)[cols.clone()];
            for (&j, &p) in keys.iter().zip(&probs) {
                for (o, &x) in out_row.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += p * x;
                }
            }
            per_row.push(probs);
        }
        heads.push(per_row);
    }
    Ok((out, AttentionWeights { heads }))
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Activations retained by [`MultiHeadAttention::forward`] for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Matrix,
    xkv: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    ctx: Matrix,
    mask: KeyMask,
    weights: AttentionWeights,
}

impl AttentionCache {
    pub fn weights(&self) -> &AttentionWeights {
        &self.weights
    }
}

pub struct MultiHeadAttention<'a> {
    pub params: &'a AttentionParams,
    pub n_heads: usize,
}

impl MultiHeadAttention<'_> {
    pub fn forward(&self, xq: &Matrix, xkv: &Matrix, mask: KeyMask) -> Result<(Matrix, AttentionCache)> {
        let p = self.params;
        let q = linear(xq, &p.wq, Some(&p.bq));
        let k = linear(xkv, &p.wk, None);
        let v = linear(xkv, &p.wv, Some(&p.bv));
        let (ctx, weights) = scaled_dot_product_attention(&q, &k, &v, &mask, self.n_heads)?;
        let out = linear(&ctx, &p.wo, Some(&p.bo));
        Ok((
            out,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                ctx,
                mask,
                weights,
            },
        ))
    }

    /// Returns gradients with respect to the query input and the key/value
    /// input; parameter gradients accumulate into `grads`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_out: &Matrix,
        grads: &mut AttentionParams,
    ) -> (Matrix, Matrix) {
        let p = self.params;
        let d_ctx = linear_backward(&cache.ctx, &p.wo, d_out, &mut grads.wo, Some(&mut grads.bo));

        let d = cache.q.cols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(cache.q.rows(), d);
        let mut dk = Matrix::zeros(cache.k.rows(), d);
        let mut dv = Matrix::zeros(cache.v.rows(), d);
        let mut d_probs = Vec::new();
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..cache.q.rows() {
                let keys = cache.mask.keys(i);
                let probs = cache.weights.row(h, i);
                let g = &d_ctx.row(i)[cols.clone()];
                d_probs.clear();
                d_probs.extend(keys.iter().map(|&j| dot(g, &cache.v.row(j)[cols.clone()])));
                let weighted: f64 = probs.iter().zip(&d_probs).map(|(p, dp)| p * dp).sum();
                for (idx, &j) in keys.iter().enumerate() {
                    let pj = probs[idx];
                    for (dvx, &gx) in dv.row_mut(j)[cols.clone()].iter_mut().zip(g) {
                        *dvx += pj * gx;
                    }
                    let ds = pj * (d_probs[idx] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for (dqx, &kx) in dq.row_mut(i)[cols.clone()]
                        .iter_mut()
                        .zip(&cache.k.row(j)[cols.clone()])
                    {
                        *dqx += ds * kx;
                    }
                    for (dkx, &qx) in dk.row_mut(j)[cols.clone()]
                        .iter_mut()
                        .zip(&cache.q.row(i)[cols.clone()])
                    {
                        *dkx += ds * qx;
                    }
                }
            }
        }
        let dxq = linear_backward(&cache.xq, &p.wq, &dq, &mut grads.wq, Some(&mut grads.bq));
        let mut dxkv = linear_backward(&cache.xkv, &p.wk, &dk, &mut grads.wk, None);
        dxkv.add_assign(&linear_backward(&cache.xkv, &p.wv, &dv, &mut grads.wv, Some(&mut grads.bv)));
        (dxq, dxkv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_average_values() {
        let q = Matrix::from_rows(&[vec![1.0]]);
        let k = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        let v = Matrix::from_rows(&[vec![2.0], vec![4.0]]);
        let mask = KeyMask::from_fn(1, 2, |_, _| true);
        let (out, w) = scaled_dot_product_attention(&q, &k, &v, &mask, 1).unwrap();
        assert!((out.get(0, 0) - 3.0).abs() < 1e-15);
        assert_eq!(w.row(0, 0), [0.5, 0.5]);
    }

    #[test]
    fn diagonal_mask_copies_values() {
        let q = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 0.1]]);
        let v = Matrix::from_rows(&[vec![1.5, 2.5], vec![-3.0, 0.25], vec![7.0, -1.0]]);
        let mask = KeyMask::from_fn(3, 3, |i, j| i == j);
        let (out, _) = scaled_dot_product_attention(&q, &q, &v, &mask, 2).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn empty_row_is_contract_violation() {
        let q = Matrix::zeros(2, 2);
        let mask = KeyMask::from_fn(2, 2, |i, j| i == 0 && j == 0);
        let err = scaled_dot_product_attention(&q, &q, &q, &mask, 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn encoder_mask_drops_pad_keys() {
        let p = AttentionPattern::windowed(4, 1, 1, &[0]).unwrap();
        let mask = KeyMask::encoder(&p, &[4, 7, PAD, 9]);
        assert_eq!(mask.keys(1), [0, 1]);
        assert_eq!(mask.keys(2), [0, 1, 3]);
        assert_eq!(mask.keys(0), [0, 1, 3]);
    }
}
