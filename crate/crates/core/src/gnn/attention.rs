//! Node-level fusion of the semantic and geographic branches.
//!
//! Cross-attention treats every node as its own length-1 sequence: queries come
//! from the geographic embedding, keys and values from the semantic one. With a
//! single key the softmax weight is exactly 1, so each head returns its value
//! projection and the query/key projections receive exactly zero gradient.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::check_dims;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Attention,
    Concat,
    ConcatMlp,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Fusion::Attention),
            "concat" => Ok(Fusion::Concat),
            "concat_mlp" | "concat-mlp" => Ok(Fusion::ConcatMlp),
            other => Err(Error::InvalidParameter(format!("unknown fusion {other:?}"))),
        }
    }
}

/// Multi-head attention projections. Weights are `embed x embed`, biases `1 x embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub w_q: Array2<f64>,
    pub b_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x_g: Array2<f64>,
    x_s: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    concat: Array2<f64>,
    /// Softmax weights, `n x heads` (one key per node and head).
    pub weights: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w_q: Array2<f64>,
    pub b_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
    pub d_x_g: Array2<f64>,
    pub d_x_s: Array2<f64>,
}

impl AttentionParams {
    pub fn embed_dim(&self) -> usize {
        self.w_q.nrows()
    }

    fn head_dim(&self) -> Result<usize> {
        let e = self.embed_dim();
        if self.heads == 0 || !e.is_multiple_of(self.heads) {
            return Err(Error::InvalidParameter(format!(
                "embed_dim {e} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(e / self.heads)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn cross_attention_fuse(
    x_g: &Array2<f64>,
    x_s: &Array2<f64>,
    params: &AttentionParams,
) -> Result<(Array2<f64>, AttentionCache)> {
    let dk = params.head_dim()?;
    check_dims(x_g.nrows(), x_s.nrows(), "attention query/key rows")?;
    check_dims(params.embed_dim(), x_g.ncols(), "attention query width")?;
    check_dims(params.embed_dim(), x_s.ncols(), "attention key width")?;
    let q = x_g.dot(&params.w_q) + &params.b_q;
    let k = x_s.dot(&params.w_k) + &params.b_k;
    let v = x_s.dot(&params.w_v) + &params.b_v;
    let n = x_g.nrows();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut weights = Array2::zeros((n, params.heads));
    let mut concat = Array2::zeros(v.raw_dim());
    for i in 0..n {
        for h in 0..params.heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let logit = q.slice(s![i, lo..hi]).dot(&k.slice(s![i, lo..hi])) * scale;
            // Each node attends over its own single key.
            let a = softmax(&[logit])[0];
            weights[[i, h]] = a;
            concat.slice_mut(s![i, lo..hi]).assign(&(&v.slice(s![i, lo..hi]) * a));
        }
    }
    let z = concat.dot(&params.w_o) + &params.b_o;
    Ok((
        z,
        AttentionCache {
            x_g: x_g.clone(),
            x_s: x_s.clone(),
            q,
            k,
            v,
            concat,
            weights,
        },
    ))
}

pub fn cross_attention_backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    upstream: &Array2<f64>,
) -> Result<AttentionGrads> {
    let dk = params.head_dim()?;
    let scale = 1.0 / (dk as f64).sqrt();
    let w_o = cache.concat.t().dot(upstream);
    let b_o = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_concat = upstream.dot(&params.w_o.t());
    let mut d_q = Array2::zeros(cache.q.raw_dim());
    let mut d_k = Array2::zeros(cache.k.raw_dim());
    let mut d_v = Array2::zeros(cache.v.raw_dim());
    for i in 0..cache.q.nrows() {
        for h in 0..params.heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let a = cache.weights[[i, h]];
            let d_out = d_concat.slice(s![i, lo..hi]);
            d_v.slice_mut(s![i, lo..hi]).assign(&(&d_out * a));
            let d_a = d_out.dot(&cache.v.slice(s![i, lo..hi]));
            // Softmax Jacobian over a single key: a * (da - a * da).
            let d_logit = a * (d_a - a * d_a) * scale;
            d_q.slice_mut(s![i, lo..hi])
                .assign(&(&cache.k.slice(s![i, lo..hi]) * d_logit));
            d_k.slice_mut(s![i, lo..hi])
                .assign(&(&cache.q.slice(s![i, lo..hi]) * d_logit));
        }
    }
    let sum_rows = |m: &Array2<f64>| m.sum_axis(Axis(0)).insert_axis(Axis(0));
    Ok(AttentionGrads {
        w_q: cache.x_g.t().dot(&d_q),
        b_q: sum_rows(&d_q),
        w_k: cache.x_s.t().dot(&d_k),
        b_k: sum_rows(&d_k),
        w_v: cache.x_s.t().dot(&d_v),
        b_v: sum_rows(&d_v),
        w_o,
        b_o,
        d_x_g: d_q.dot(&params.w_q.t()),
        d_x_s: d_k.dot(&params.w_k.t()) + d_v.dot(&params.w_v.t()),
    })
}

/// Concatenation followed by a two-layer ReLU perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatMlpParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

pub fn concat(x_s: &Array2<f64>, x_g: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[x_s.view(), x_g.view()]).expect("branch row counts agree")
}
