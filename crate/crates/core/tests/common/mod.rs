//! Brute-force reference implementations written directly from the defining
//! formulas, plus small fixtures. Shared by the integration and acceptance suites.

#![allow(dead_code)]

use geotopic_core::clustering::{kmeans, SymmetricCsr};
use geotopic_core::gnn::{
    AttentionParams, BranchParams, DropoutMasks, Encoder, EncoderConfig, GraphOperators, Mode, MonoParams,
};
use geotopic_core::graph::{Edge, Relation, WeightedGraph};
use geotopic_core::losses::{positives_from_neighbors, total_loss, total_loss_grad, LossWeights};
use geotopic_core::seed;
use geotopic_core::synthetic::{generate, SynthSpec};
use geotopic_core::trainer::build_operators;
use geotopic_core::{Arch, Corpus, Fusion};
use ndarray::Array2;
use rand::Rng as _;

pub type Rng = seed::Rng;

pub fn rng(label: &str) -> Rng {
    seed::rng(7, label, 0)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- graphs ----

/// Symmetric random graph: each pair linked with probability `p`, weight in [lo, hi).
pub fn random_graph(n: usize, p: f64, lo: f64, hi: f64, rng: &mut Rng) -> WeightedGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                let w = rng.random_range(lo..hi);
                edges.push(Edge {
                    src: i,
                    dst: j,
                    weight: w,
                });
                edges.push(Edge {
                    src: j,
                    dst: i,
                    weight: w,
                });
            }
        }
    }
    WeightedGraph::from_edges(n, Relation::Semantic, edges).unwrap()
}

pub fn dense_weights(g: &WeightedGraph) -> Array2<f64> {
    let mut a = Array2::zeros((g.n, g.n));
    for e in &g.edges {
        a[[e.src, e.dst]] = e.weight;
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D_ii = 1 + Σ_j |A_ij|`.
pub fn normalized_oracle(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).map(|j| a[[i, j]].abs()).sum::<f64>())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let aij = a[[i, j]] + if i == j { 1.0 } else { 0.0 };
            out[[i, j]] = aij / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn row(z: &Array2<f64>, i: usize) -> Vec<f64> {
    z.row(i).to_vec()
}

/// Top-k by score with ties to the lower index, by full sort.
pub fn brute_top_k(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    s.into_iter().take(k).map(|(j, _)| j).collect()
}

pub fn haversine_oracle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    // Spherical law of cosines; well conditioned away from tiny distances.
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    6371.0 * c.acos()
}

// ---- encoder ----

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
    let d = x.ncols();
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let mean = (0..d).map(|j| x[[i, j]]).sum::<f64>() / d as f64;
        let var = (0..d).map(|j| (x[[i, j]] - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out[[i, j]] = (x[[i, j]] - mean) / (var + 1e-5).sqrt() * gain[[0, j]] + bias[[0, j]];
        }
    }
    out
}

/// MonoGraph with no output activation: `Z = Â_s H W_s2 + Â_g H W_g2`, `H = ReLU(Â_s X W_s1 + Â_g X W_g1)`.
pub fn mono_oracle(a_s: &Array2<f64>, a_g: &Array2<f64>, x: &Array2<f64>, p: &MonoParams) -> Array2<f64> {
    let h = relu(&(a_s.dot(x).dot(&p.semantic[0]) + a_g.dot(x).dot(&p.geographic[0])));
    a_s.dot(&h).dot(&p.semantic[1]) + a_g.dot(&h).dot(&p.geographic[1])
}

/// One MultiGraph branch: `LN(Â · (LN(ReLU(Â X W1)) ⊙ mask) · W2)`.
pub fn branch_oracle(a: &Array2<f64>, x: &Array2<f64>, b: &BranchParams, mask: Option<&Array2<f64>>) -> Array2<f64> {
    let mut h = layer_norm(&relu(&a.dot(x).dot(&b.w1)), &b.ln1_gain, &b.ln1_bias);
    if let Some(m) = mask {
        h = &h * m;
    }
    layer_norm(&a.dot(&h).dot(&b.w2), &b.ln2_gain, &b.ln2_bias)
}

/// Direct per-node, per-head evaluation of `softmax(q kᵀ / √d_k) v` over the
/// node's own key, then concatenation and output projection.
pub fn attention_oracle(x_g: &Array2<f64>, x_s: &Array2<f64>, p: &AttentionParams) -> (Array2<f64>, Array2<f64>) {
    let e = p.w_q.nrows();
    let dk = e / p.heads;
    let q = x_g.dot(&p.w_q) + &p.b_q;
    let k = x_s.dot(&p.w_k) + &p.b_k;
    let v = x_s.dot(&p.w_v) + &p.b_v;
    let n = x_g.nrows();
    let mut concat = Array2::zeros((n, e));
    let mut weights = Array2::zeros((n, p.heads));
    for i in 0..n {
        for h in 0..p.heads {
            let cols = h * dk..(h + 1) * dk;
            let logit: f64 = cols.clone().map(|c| q[[i, c]] * k[[i, c]]).sum::<f64>() / (dk as f64).sqrt();
            let keys = [logit];
            let m = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = keys.iter().map(|l| (l - m).exp()).sum();
            let a = (logit - m).exp() / denom;
            weights[[i, h]] = a;
            for c in cols {
                concat[[i, c]] = a * v[[i, c]];
            }
        }
    }
    (concat.dot(&p.w_o) + &p.b_o, weights)
}

// ---- losses ----

pub fn intra_oracle(z: &Array2<f64>, labels: &[usize]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            if labels[i] == labels[j] {
                sum += cosine(&row(z, i), &row(z, j));
                count += 1;
            }
        }
    }
    sum / count as f64
}

pub fn inter_oracle(z: &Array2<f64>, labels: &[usize]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            if labels[i] != labels[j] {
                sum += cosine(&row(z, i), &row(z, j));
                count += 1;
            }
        }
    }
    sum / count as f64
}

pub fn coherence_oracle(z: &Array2<f64>, labels: &[usize], lambda: f64) -> f64 {
    -(intra_oracle(z, labels) - lambda * inter_oracle(z, labels))
}

/// `−Σ_{(i,j)} log(exp(cos_ij/τ) / Σ_{k≠i} exp(cos_ik/τ))`.
pub fn contrastive_oracle(z: &Array2<f64>, positives: &[(usize, usize)], tau: f64) -> f64 {
    let n = z.nrows();
    positives
        .iter()
        .map(|&(i, j)| {
            let num = (cosine(&row(z, i), &row(z, j)) / tau).exp();
            let den: f64 = (0..n)
                .filter(|&k| k != i)
                .map(|k| (cosine(&row(z, i), &row(z, k)) / tau).exp())
                .sum();
            -(num / den).ln()
        })
        .sum()
}

pub fn alignment_oracle(z: &Array2<f64>, labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let d = z.ncols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..z.nrows()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|&i| z[[i, j]]).sum::<f64>() / members.len() as f64)
            .collect();
        for &i in &members {
            total += (0..d).map(|j| (z[[i, j]] - centroid[j]).powi(2)).sum::<f64>();
        }
    }
    total / z.nrows() as f64
}

// ---- finite differences ----

/// Small training instance: corpus, operators, features, pseudo-labels, positives.
pub struct Instance {
    pub corpus: Corpus,
    pub ops: GraphOperators,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub positives: Vec<(usize, usize)>,
}

pub fn instance(arch: Arch, n: usize, d: usize) -> Instance {
    let spec = SynthSpec {
        n,
        d,
        topics: 3,
        seed: 11,
        ..SynthSpec::standard()
    };
    let (corpus, _) = generate(&spec).unwrap();
    let (ops, semantic) = build_operators(&corpus, arch, 4).unwrap();
    let x = corpus.features();
    let labels = kmeans(&x, 3, 42).unwrap().labels;
    let (positives, _) = positives_from_neighbors(&semantic.neighbors());
    Instance {
        corpus,
        ops,
        x,
        labels,
        positives,
    }
}

pub fn small_encoder(arch: Arch, fusion: Fusion, input_dim: usize, seed_value: u64) -> Encoder {
    let config = EncoderConfig {
        arch,
        input_dim,
        hidden_dim: 6,
        output_dim: 8,
        heads: 4,
        dropout: 0.3,
        fusion,
        ..EncoderConfig::default()
    };
    Encoder::init(config, seed_value).unwrap()
}

/// Makes every parameter tensor generic: nonzero biases and non-unit gains.
pub fn perturb_parameters(encoder: &mut Encoder, rng: &mut Rng) {
    for t in encoder.params.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

/// Central-difference check of every parameter entry. Returns the worst relative
/// error per tensor and the number of entries whose step was shrunk because a
/// ReLU input changed sign inside it.
pub fn finite_difference_errors(
    encoder: &Encoder,
    inst: &Instance,
    masks: Option<&DropoutMasks>,
    w: &LossWeights,
    h: f64,
) -> (Vec<(String, f64)>, usize) {
    let mode = masks.map_or(Mode::Eval, Mode::Train);
    let eval = |enc: &Encoder| {
        let (z, trace) = enc.forward(&inst.ops, &inst.x, mode).unwrap();
        let signs: Vec<bool> = trace
            .relu_inputs()
            .iter()
            .flat_map(|a| a.iter().map(|&v| v > 0.0))
            .collect();
        (total_loss(&z, &inst.labels, &inst.positives, w).unwrap().total, signs)
    };
    let (z, trace) = encoder.forward(&inst.ops, &inst.x, mode).unwrap();
    let (_, dz) = total_loss_grad(&z, &inst.labels, &inst.positives, w).unwrap();
    let grads = encoder.backward(&inst.ops, &trace, &dz).unwrap();
    let analytic: Vec<(String, Array2<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let scale = analytic
        .iter()
        .flat_map(|(_, t)| t.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale.max(1e-12);
    let mut out = Vec::new();
    let mut refined = 0;
    for (t_idx, (name, a)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for flat in 0..a.len() {
            let shifted = |step: f64| {
                let mut enc = encoder.clone();
                enc.params.tensors_mut()[t_idx].as_slice_mut().unwrap()[flat] += step;
                eval(&enc)
            };
            let mut step = h;
            let fd = loop {
                let ((lp, sp), (lm, sm)) = (shifted(step), shifted(-step));
                if sp == sm || step < 1e-8 {
                    break (lp - lm) / (2.0 * step);
                }
                step /= 10.0;
            };
            if step < h {
                refined += 1;
            }
            let an = a.as_slice().unwrap()[flat];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((name.clone(), worst));
    }
    (out, refined)
}

// ---- clustering ----

pub fn inertia_of(z: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let d = z.ncols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..z.nrows()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        for j in 0..d {
            let mean = members.iter().map(|&i| z[[i, j]]).sum::<f64>() / members.len() as f64;
            total += members.iter().map(|&i| (z[[i, j]] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

pub fn best_bipartition(z: &Array2<f64>) -> f64 {
    let n = z.nrows();
    // Node 0 stays in cluster 0, so each split is visited once.
    (1..(1u32 << (n - 1)))
        .map(|mask| {
            let labels: Vec<usize> = (0..n)
                .map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { 1 } else { 0 })
                .collect();
            inertia_of(z, &labels, 2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Two-partitions agree up to relabeling.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.iter()
        .zip(b)
        .all(|(&x, &y)| (0..a.len()).all(|j| (a[j] == x) == (b[j] == y)))
}

pub fn two_components(sizes: (usize, usize), r: &mut Rng) -> (SymmetricCsr, Vec<usize>) {
    let n = sizes.0 + sizes.1;
    let truth: Vec<usize> = (0..n).map(|i| usize::from(i >= sizes.0)).collect();
    let mut dense = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if truth[i] == truth[j] && r.random_bool(0.6) {
                let w = r.random_range(0.2..1.0);
                dense[[i, j]] = w;
                dense[[j, i]] = w;
            }
        }
        // A ring keeps each component connected.
        let next = if truth[i] == 0 {
            (i + 1) % sizes.0
        } else {
            sizes.0 + (i - sizes.0 + 1) % sizes.1
        };
        if next != i {
            dense[[i, next]] = dense[[i, next]].max(0.5);
            dense[[next, i]] = dense[[i, next]];
        }
    }
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| dense[[i, j]] > 0.0)
                .map(|j| (j, dense[[i, j]]))
                .collect()
        })
        .collect();
    (SymmetricCsr::from_rows(n, rows), truth)
}
