use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::seed::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

impl Activation {
    pub fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::None => x.clone(),
        }
    }

    /// Multiplies an upstream gradient by the derivative at the pre-activation.
    pub fn backward(self, pre: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                let mut g = upstream.clone();
                g.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::None => upstream.clone(),
        }
    }
}

/// One graph convolution `σ(Â X W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: Array2<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â X`
    pub propagated: Array2<f64>,
    /// `Â X W`
    pub pre: Array2<f64>,
}

pub(crate) fn check_dims(expected: usize, found: usize, context: &str) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            expected,
            found,
            context: context.into(),
        });
    }
    Ok(())
}

impl GcnLayer {
    pub fn forward(&self, a_hat: &NormalizedAdjacency, x: &Array2<f64>) -> Result<(Array2<f64>, GcnCache)> {
        check_dims(a_hat.n, x.nrows(), "GCN node count")?;
        check_dims(self.weight.nrows(), x.ncols(), "GCN input width")?;
        let propagated = a_hat.apply(x);
        let pre = propagated.dot(&self.weight);
        Ok((self.activation.apply(&pre), GcnCache { propagated, pre }))
    }

    /// Returns `(dL/dW, dL/dX)`. `Â` is symmetric, so `Âᵀ = Â`.
    pub fn backward(
        &self,
        a_hat: &NormalizedAdjacency,
        cache: &GcnCache,
        upstream: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let d_pre = self.activation.backward(&cache.pre, upstream);
        let d_weight = cache.propagated.t().dot(&d_pre);
        let d_x = a_hat.apply(&d_pre.dot(&self.weight.t()));
        (d_weight, d_x)
    }
}

pub fn gcn_layer_forward(a_hat: &NormalizedAdjacency, x: &Array2<f64>, layer: &GcnLayer) -> Result<Array2<f64>> {
    layer.forward(a_hat, x).map(|(y, _)| y)
}

/// Per-row layer normalization with learnable gain and bias (both `1 x d`).
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Vec<f64>,
}

pub fn layer_norm_forward(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in normalized.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| v * s);
        inv_std.push(s);
    }
    let out = &normalized * gain + bias;
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(dX, dGain, dBias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Array2<f64>,
    upstream: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d_gain = (upstream * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_bias = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_xhat = upstream * gain;
    let d = upstream.ncols() as f64;
    let mut d_x = Array2::zeros(upstream.raw_dim());
    for (i, mut out) in d_x.axis_iter_mut(Axis(0)).enumerate() {
        let g = d_xhat.row(i);
        let xh = cache.normalized.row(i);
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        let s = cache.inv_std[i] / d;
        for ((o, &gv), &xv) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = s * (d * gv - sum_g - xv * sum_gx);
        }
    }
    (d_x, d_gain, d_bias)
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Array2<f64> {
    if rate <= 0.0 {
        return Array2::ones((rows, cols));
    }
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(
        (rows, cols),
        || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 },
    )
}

/// Glorot-uniform initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}
