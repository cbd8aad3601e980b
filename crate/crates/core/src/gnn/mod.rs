//! MonoGraph and MultiGraph encoders with a fixed-architecture reverse pass.
//!
//! MonoGraph: per layer, relation-specific convolutions are summed before the
//! activation: `H' = σ(Â_s H W_s + Â_g H W_g)`.
//!
//! MultiGraph: two independent branches
//! `LN(Â · Dropout(LN(ReLU(Â X W1))) · W2)` over the semantic and geographic
//! graphs, then fused (cross-attention by default).

pub mod attention;
pub mod checkpoint;
pub mod layers;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::seed::{self, Rng};

pub use attention::{cross_attention_backward, cross_attention_fuse, AttentionParams, ConcatMlpParams, Fusion};
pub use layers::{gcn_layer_forward, Activation, GcnLayer};

use attention::AttentionCache;
use layers::{check_dims, dropout_mask, glorot, layer_norm_backward, layer_norm_forward, GcnCache, LayerNormCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    Mono,
    Multi,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono" => Ok(Arch::Mono),
            "multi" => Ok(Arch::Multi),
            other => Err(Error::InvalidParameter(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Output width of each encoder; also the attention embed dimension.
    pub output_dim: usize,
    /// Activation on the second GCN layer. The first layer always uses ReLU.
    pub output_activation: Activation,
    pub heads: usize,
    pub dropout: f64,
    pub fusion: Fusion,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            arch: Arch::Mono,
            input_dim: 0,
            hidden_dim: 256,
            output_dim: 128,
            output_activation: Activation::None,
            heads: 4,
            dropout: 0.3,
            fusion: Fusion::Attention,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidParameter("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.arch == Arch::Multi
            && self.fusion == Fusion::Attention
            && (self.heads == 0 || !self.output_dim.is_multiple_of(self.heads))
        {
            return Err(Error::InvalidParameter(format!(
                "embed_dim {} is not divisible by {} heads",
                self.output_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Width of the final node embeddings.
    pub fn embedding_dim(&self) -> usize {
        match (self.arch, self.fusion) {
            (Arch::Multi, Fusion::Concat) => 2 * self.output_dim,
            _ => self.output_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoParams {
    pub semantic: [Array2<f64>; 2],
    pub geographic: [Array2<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Attention(AttentionParams),
    Concat,
    ConcatMlp(ConcatMlpParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiParams {
    pub semantic: BranchParams,
    pub geographic: BranchParams,
    pub fusion: FusionParams,
}

/// Learnable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Mono(MonoParams),
    Multi(MultiParams),
}

pub type Gradients = Params;

fn branch_tensors<'a>(prefix: &str, b: &'a BranchParams, out: &mut Vec<(String, &'a Array2<f64>)>) {
    for (name, t) in [
        ("w1", &b.w1),
        ("w2", &b.w2),
        ("ln1_gain", &b.ln1_gain),
        ("ln1_bias", &b.ln1_bias),
        ("ln2_gain", &b.ln2_gain),
        ("ln2_bias", &b.ln2_bias),
    ] {
        out.push((format!("{prefix}.{name}"), t));
    }
}

fn branch_tensors_mut<'a>(b: &'a mut BranchParams, out: &mut Vec<&'a mut Array2<f64>>) {
    out.extend([
        &mut b.w1,
        &mut b.w2,
        &mut b.ln1_gain,
        &mut b.ln1_bias,
        &mut b.ln2_gain,
        &mut b.ln2_bias,
    ]);
}

impl Params {
    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        match self {
            Params::Mono(p) => {
                out.push(("semantic.w1".into(), &p.semantic[0]));
                out.push(("semantic.w2".into(), &p.semantic[1]));
                out.push(("geographic.w1".into(), &p.geographic[0]));
                out.push(("geographic.w2".into(), &p.geographic[1]));
            }
            Params::Multi(p) => {
                branch_tensors("semantic", &p.semantic, &mut out);
                branch_tensors("geographic", &p.geographic, &mut out);
                match &p.fusion {
                    FusionParams::Attention(a) => {
                        for (name, t) in [
                            ("w_q", &a.w_q),
                            ("b_q", &a.b_q),
                            ("w_k", &a.w_k),
                            ("b_k", &a.b_k),
                            ("w_v", &a.w_v),
                            ("b_v", &a.b_v),
                            ("w_o", &a.w_o),
                            ("b_o", &a.b_o),
                        ] {
                            out.push((format!("attention.{name}"), t));
                        }
                    }
                    FusionParams::Concat => {}
                    FusionParams::ConcatMlp(m) => {
                        for (name, t) in [("w1", &m.w1), ("b1", &m.b1), ("w2", &m.w2), ("b2", &m.b2)] {
                            out.push((format!("mlp.{name}"), t));
                        }
                    }
                }
            }
        }
        out
    }

    /// Mutable tensors in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        match self {
            Params::Mono(p) => {
                let [s1, s2] = &mut p.semantic;
                let [g1, g2] = &mut p.geographic;
                out.extend([s1, s2, g1, g2]);
            }
            Params::Multi(p) => {
                branch_tensors_mut(&mut p.semantic, &mut out);
                branch_tensors_mut(&mut p.geographic, &mut out);
                match &mut p.fusion {
                    FusionParams::Attention(a) => out.extend([
                        &mut a.w_q, &mut a.b_q, &mut a.w_k, &mut a.b_k, &mut a.w_v, &mut a.b_v, &mut a.w_o, &mut a.b_o,
                    ]),
                    FusionParams::Concat => {}
                    FusionParams::ConcatMlp(m) => out.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]),
                }
            }
        }
        out
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Normalized adjacency operators for one chunk. MonoGraph uses both on the
/// semantic kNN support; MultiGraph uses each relation's own kNN graph.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub semantic: NormalizedAdjacency,
    pub geographic: NormalizedAdjacency,
}

impl GraphOperators {
    pub fn n(&self) -> usize {
        self.semantic.n
    }
}

/// Dropout masks for the two MultiGraph branches (`n x hidden`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub semantic: Array2<f64>,
    pub geographic: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample(n: usize, hidden: usize, rate: f64, rng: &mut Rng) -> Self {
        DropoutMasks {
            semantic: dropout_mask(n, hidden, rate, rng),
            geographic: dropout_mask(n, hidden, rate, rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    /// Training mode with pre-drawn masks, so a pass can be replayed exactly.
    Train(&'a DropoutMasks),
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: Params,
}

#[derive(Debug, Clone)]
struct MonoTrace {
    sem1: GcnCache,
    geo1: GcnCache,
    pre1: Array2<f64>,
    sem2: GcnCache,
    geo2: GcnCache,
    pre2: Array2<f64>,
    output_activation: Activation,
}

#[derive(Debug, Clone)]
struct BranchTrace {
    l1: GcnCache,
    ln1: LayerNormCache,
    mask: Option<Array2<f64>>,
    l2: GcnCache,
    output_activation: Activation,
    ln2: LayerNormCache,
}

#[derive(Debug, Clone)]
enum FusionTrace {
    Attention(AttentionCache),
    Concat {
        width: usize,
    },
    ConcatMlp {
        input: Array2<f64>,
        pre: Array2<f64>,
        hidden: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
enum TraceKind {
    Mono(MonoTrace),
    Multi {
        semantic: BranchTrace,
        geographic: BranchTrace,
        fusion: FusionTrace,
    },
}

/// Recorded forward pass, consumed by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    n: usize,
    kind: TraceKind,
}

impl Trace {
    /// Attention weights (`n x heads`) when the trace used attention fusion.
    pub fn attention_weights(&self) -> Option<&Array2<f64>> {
        match &self.kind {
            TraceKind::Multi {
                fusion: FusionTrace::Attention(c),
                ..
            } => Some(&c.weights),
            _ => None,
        }
    }

    /// Inputs of every ReLU applied in the pass, in forward order.
    pub fn relu_inputs(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        match &self.kind {
            TraceKind::Mono(t) => {
                out.push(&t.pre1);
                if t.output_activation == Activation::Relu {
                    out.push(&t.pre2);
                }
            }
            TraceKind::Multi {
                semantic,
                geographic,
                fusion,
            } => {
                for b in [semantic, geographic] {
                    out.push(&b.l1.pre);
                    if b.output_activation == Activation::Relu {
                        out.push(&b.l2.pre);
                    }
                }
                if let FusionTrace::ConcatMlp { pre, .. } = fusion {
                    out.push(pre);
                }
            }
        }
        out
    }
}

fn row_vector(d: usize, value: f64) -> Array2<f64> {
    Array2::from_elem((1, d), value)
}

impl Encoder {
    /// Glorot-uniform weights, unit layer-norm gains, zero biases; deterministic in `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "encoder-init", 0);
        let (i, h, o) = (config.input_dim, config.hidden_dim, config.output_dim);
        let params = match config.arch {
            Arch::Mono => Params::Mono(MonoParams {
                semantic: [glorot(i, h, &mut rng), glorot(h, o, &mut rng)],
                geographic: [glorot(i, h, &mut rng), glorot(h, o, &mut rng)],
            }),
            Arch::Multi => {
                let branch = |rng: &mut Rng| BranchParams {
                    w1: glorot(i, h, rng),
                    w2: glorot(h, o, rng),
                    ln1_gain: row_vector(h, 1.0),
                    ln1_bias: row_vector(h, 0.0),
                    ln2_gain: row_vector(o, 1.0),
                    ln2_bias: row_vector(o, 0.0),
                };
                let semantic = branch(&mut rng);
                let geographic = branch(&mut rng);
                let fusion = match config.fusion {
                    Fusion::Attention => FusionParams::Attention(AttentionParams {
                        heads: config.heads,
                        w_q: glorot(o, o, &mut rng),
                        b_q: row_vector(o, 0.0),
                        w_k: glorot(o, o, &mut rng),
                        b_k: row_vector(o, 0.0),
                        w_v: glorot(o, o, &mut rng),
                        b_v: row_vector(o, 0.0),
                        w_o: glorot(o, o, &mut rng),
                        b_o: row_vector(o, 0.0),
                    }),
                    Fusion::Concat => FusionParams::Concat,
                    Fusion::ConcatMlp => FusionParams::ConcatMlp(ConcatMlpParams {
                        w1: glorot(2 * o, o, &mut rng),
                        b1: row_vector(o, 0.0),
                        w2: glorot(o, o, &mut rng),
                        b2: row_vector(o, 0.0),
                    }),
                };
                Params::Multi(MultiParams {
                    semantic,
                    geographic,
                    fusion,
                })
            }
        };
        Ok(Encoder { config, params })
    }

    pub fn forward(&self, ops: &GraphOperators, x: &Array2<f64>, mode: Mode<'_>) -> Result<(Array2<f64>, Trace)> {
        check_dims(ops.n(), x.nrows(), "feature rows vs graph nodes")?;
        check_dims(ops.geographic.n, ops.semantic.n, "relation node counts")?;
        check_dims(self.config.input_dim, x.ncols(), "input width")?;
        let n = x.nrows();
        let (z, kind) = match &self.params {
            Params::Mono(p) => {
                let (z, t) = mono_forward(ops, x, p, self.config.output_activation)?;
                (z, TraceKind::Mono(t))
            }
            Params::Multi(p) => {
                let masks = match mode {
                    Mode::Eval => None,
                    Mode::Train(m) => Some(m),
                };
                let (x_s, semantic) = branch_forward(
                    &ops.semantic,
                    x,
                    &p.semantic,
                    masks.map(|m| &m.semantic),
                    self.config.output_activation,
                )?;
                let (x_g, geographic) = branch_forward(
                    &ops.geographic,
                    x,
                    &p.geographic,
                    masks.map(|m| &m.geographic),
                    self.config.output_activation,
                )?;
                let (z, fusion) = fuse(&x_s, &x_g, &p.fusion)?;
                (
                    z,
                    TraceKind::Multi {
                        semantic,
                        geographic,
                        fusion,
                    },
                )
            }
        };
        Ok((z, Trace { n, kind }))
    }

    /// Eval-mode embeddings.
    pub fn embed(&self, ops: &GraphOperators, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward(ops, x, Mode::Eval).map(|(z, _)| z)
    }

    /// Exact reverse-mode gradients of a scalar loss given `dL/dZ`.
    pub fn backward(&self, ops: &GraphOperators, trace: &Trace, upstream: &Array2<f64>) -> Result<Gradients> {
        if trace.n != ops.n() || upstream.nrows() != trace.n {
            return Err(Error::TraceMismatch(format!(
                "trace has {} nodes, operators {}, upstream {}",
                trace.n,
                ops.n(),
                upstream.nrows()
            )));
        }
        match (&self.params, &trace.kind) {
            (Params::Mono(p), TraceKind::Mono(t)) => Ok(Params::Mono(mono_backward(ops, p, t, upstream))),
            (
                Params::Multi(p),
                TraceKind::Multi {
                    semantic,
                    geographic,
                    fusion,
                },
            ) => {
                let (fusion_grads, d_x_s, d_x_g) = fuse_backward(&p.fusion, fusion, upstream)?;
                let sem = branch_backward(&ops.semantic, &p.semantic, semantic, &d_x_s);
                let geo = branch_backward(&ops.geographic, &p.geographic, geographic, &d_x_g);
                Ok(Params::Multi(MultiParams {
                    semantic: sem,
                    geographic: geo,
                    fusion: fusion_grads,
                }))
            }
            _ => Err(Error::TraceMismatch(
                "trace architecture differs from parameters".into(),
            )),
        }
    }
}

fn mono_forward(
    ops: &GraphOperators,
    x: &Array2<f64>,
    p: &MonoParams,
    output_activation: Activation,
) -> Result<(Array2<f64>, MonoTrace)> {
    let linear = |w: &Array2<f64>| GcnLayer {
        weight: w.clone(),
        activation: Activation::None,
    };
    let (s1, sem1) = linear(&p.semantic[0]).forward(&ops.semantic, x)?;
    let (g1, geo1) = linear(&p.geographic[0]).forward(&ops.geographic, x)?;
    let pre1 = s1 + g1;
    let h1 = Activation::Relu.apply(&pre1);
    let (s2, sem2) = linear(&p.semantic[1]).forward(&ops.semantic, &h1)?;
    let (g2, geo2) = linear(&p.geographic[1]).forward(&ops.geographic, &h1)?;
    let pre2 = s2 + g2;
    let z = output_activation.apply(&pre2);
    let trace = MonoTrace {
        sem1,
        geo1,
        pre1,
        sem2,
        geo2,
        pre2,
        output_activation,
    };
    Ok((z, trace))
}

fn mono_backward(ops: &GraphOperators, p: &MonoParams, t: &MonoTrace, upstream: &Array2<f64>) -> MonoParams {
    let d_pre2 = t.output_activation.backward(&t.pre2, upstream);
    let dw_s2 = t.sem2.propagated.t().dot(&d_pre2);
    let dw_g2 = t.geo2.propagated.t().dot(&d_pre2);
    let d_h1 =
        ops.semantic.apply(&d_pre2.dot(&p.semantic[1].t())) + ops.geographic.apply(&d_pre2.dot(&p.geographic[1].t()));
    let d_pre1 = Activation::Relu.backward(&t.pre1, &d_h1);
    let dw_s1 = t.sem1.propagated.t().dot(&d_pre1);
    let dw_g1 = t.geo1.propagated.t().dot(&d_pre1);
    MonoParams {
        semantic: [dw_s1, dw_s2],
        geographic: [dw_g1, dw_g2],
    }
}

fn branch_forward(
    a_hat: &NormalizedAdjacency,
    x: &Array2<f64>,
    p: &BranchParams,
    mask: Option<&Array2<f64>>,
    output_activation: Activation,
) -> Result<(Array2<f64>, BranchTrace)> {
    let l1 = GcnLayer {
        weight: p.w1.clone(),
        activation: Activation::Relu,
    };
    let (h1, l1_cache) = l1.forward(a_hat, x)?;
    let (n1, ln1) = layer_norm_forward(&h1, &p.ln1_gain, &p.ln1_bias);
    let dropped = match mask {
        Some(m) => {
            check_dims(n1.nrows(), m.nrows(), "dropout mask rows")?;
            check_dims(n1.ncols(), m.ncols(), "dropout mask width")?;
            &n1 * m
        }
        None => n1,
    };
    let l2 = GcnLayer {
        weight: p.w2.clone(),
        activation: output_activation,
    };
    let (h2, l2_cache) = l2.forward(a_hat, &dropped)?;
    let (out, ln2) = layer_norm_forward(&h2, &p.ln2_gain, &p.ln2_bias);
    Ok((
        out,
        BranchTrace {
            l1: l1_cache,
            ln1,
            mask: mask.cloned(),
            l2: l2_cache,
            output_activation,
            ln2,
        },
    ))
}

fn branch_backward(
    a_hat: &NormalizedAdjacency,
    p: &BranchParams,
    t: &BranchTrace,
    upstream: &Array2<f64>,
) -> BranchParams {
    let (d_h2, ln2_gain, ln2_bias) = layer_norm_backward(&t.ln2, &p.ln2_gain, upstream);
    let l2 = GcnLayer {
        weight: p.w2.clone(),
        activation: t.output_activation,
    };
    let (w2, d_dropped) = l2.backward(a_hat, &t.l2, &d_h2);
    let d_n1 = match &t.mask {
        Some(m) => d_dropped * m,
        None => d_dropped,
    };
    let (d_h1, ln1_gain, ln1_bias) = layer_norm_backward(&t.ln1, &p.ln1_gain, &d_n1);
    let l1 = GcnLayer {
        weight: p.w1.clone(),
        activation: Activation::Relu,
    };
    let (w1, _) = l1.backward(a_hat, &t.l1, &d_h1);
    BranchParams {
        w1,
        w2,
        ln1_gain,
        ln1_bias,
        ln2_gain,
        ln2_bias,
    }
}

fn fuse(x_s: &Array2<f64>, x_g: &Array2<f64>, p: &FusionParams) -> Result<(Array2<f64>, FusionTrace)> {
    match p {
        FusionParams::Attention(a) => {
            let (z, cache) = cross_attention_fuse(x_g, x_s, a)?;
            Ok((z, FusionTrace::Attention(cache)))
        }
        FusionParams::Concat => Ok((attention::concat(x_s, x_g), FusionTrace::Concat { width: x_s.ncols() })),
        FusionParams::ConcatMlp(m) => {
            let input = attention::concat(x_s, x_g);
            check_dims(m.w1.nrows(), input.ncols(), "fusion MLP input width")?;
            let pre = input.dot(&m.w1) + &m.b1;
            let hidden = Activation::Relu.apply(&pre);
            let z = hidden.dot(&m.w2) + &m.b2;
            Ok((z, FusionTrace::ConcatMlp { input, pre, hidden }))
        }
    }
}

fn fuse_backward(
    p: &FusionParams,
    trace: &FusionTrace,
    upstream: &Array2<f64>,
) -> Result<(FusionParams, Array2<f64>, Array2<f64>)> {
    let split = |d: Array2<f64>, width: usize| {
        let s = d.slice(ndarray::s![.., ..width]).to_owned();
        let g = d.slice(ndarray::s![.., width..]).to_owned();
        (s, g)
    };
    match (p, trace) {
        (FusionParams::Attention(a), FusionTrace::Attention(cache)) => {
            let g = cross_attention_backward(a, cache, upstream)?;
            Ok((
                FusionParams::Attention(AttentionParams {
                    heads: a.heads,
                    w_q: g.w_q,
                    b_q: g.b_q,
                    w_k: g.w_k,
                    b_k: g.b_k,
                    w_v: g.w_v,
                    b_v: g.b_v,
                    w_o: g.w_o,
                    b_o: g.b_o,
                }),
                g.d_x_s,
                g.d_x_g,
            ))
        }
        (FusionParams::Concat, FusionTrace::Concat { width }) => {
            let (s, g) = split(upstream.clone(), *width);
            Ok((FusionParams::Concat, s, g))
        }
        (FusionParams::ConcatMlp(m), FusionTrace::ConcatMlp { input, pre, hidden }) => {
            let w2 = hidden.t().dot(upstream);
            let b2 = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
            let d_pre = Activation::Relu.backward(pre, &upstream.dot(&m.w2.t()));
            let w1 = input.t().dot(&d_pre);
            let b1 = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            let d_input = d_pre.dot(&m.w1.t());
            let width = m.w1.nrows() / 2;
            let (s, g) = split(d_input, width);
            Ok((FusionParams::ConcatMlp(ConcatMlpParams { w1, b1, w2, b2 }), s, g))
        }
        _ => Err(Error::TraceMismatch("fusion trace differs from parameters".into())),
    }
}
