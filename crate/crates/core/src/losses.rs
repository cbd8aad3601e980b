//! Coherence, contrastive, and alignment losses with gradients w.r.t. `Z`.
//!
//! Cosine terms work on row-normalized embeddings `ẑ_i = z_i / ‖z_i‖`. The
//! pooled pair sums are computed exactly in O(n·d) from per-cluster sums:
//! within cluster k, `Σ_{i<j} ẑ_i·ẑ_j = (‖S_k‖² − Σ_i ‖ẑ_i‖²) / 2`.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row norms below this are treated as this value when normalizing.
pub const NORM_EPS: f64 = 1e-12;
const CONTRAST_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_coh: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.8,
            beta: 0.2,
            gamma: 0.1,
            lambda_coh: 0.1,
            tau: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_coh", self.lambda_coh),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    Ok(())
}

/// Cluster assignment used as training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub assignment: Vec<usize>,
    /// `k x d` means of member embeddings.
    pub centroids: Array2<f64>,
}

impl PseudoLabels {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut unit = z.clone();
    let mut norms = Vec::with_capacity(z.nrows());
    for mut row in unit.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt().max(NORM_EPS);
        row /= norm;
        norms.push(norm);
    }
    (unit, norms)
}

/// Maps `dL/dẑ` back to `dL/dz` through the row normalization.
fn unnormalize_grad(unit: &Array2<f64>, norms: &[f64], d_unit: &mut Array2<f64>) {
    for ((mut g, u), &norm) in d_unit.axis_iter_mut(Axis(0)).zip(unit.axis_iter(Axis(0))).zip(norms) {
        let radial = g.dot(&u);
        g.scaled_add(-radial, &u);
        g /= norm;
    }
}

fn check_labels(z: &Array2<f64>, labels: &[usize]) -> Result<usize> {
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: z.nrows(),
            found: labels.len(),
            context: "labels vs embedding rows".into(),
        });
    }
    Ok(labels.iter().copied().max().map_or(0, |m| m + 1))
}

/// Sufficient statistics of the pooled intra/inter pair sums.
struct PairSums {
    unit: Array2<f64>,
    norms: Vec<f64>,
    cluster_sums: Array2<f64>,
    total: Array1<f64>,
    intra_sum: f64,
    inter_sum: f64,
    intra_pairs: f64,
    inter_pairs: f64,
}

fn pair_sums(z: &Array2<f64>, labels: &[usize]) -> Result<PairSums> {
    let k = check_labels(z, labels)?;
    let (unit, norms) = normalize_rows(z);
    let d = z.ncols();
    let mut cluster_sums = Array2::zeros((k, d));
    let mut sq_norms = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        let row = unit.row(i);
        cluster_sums.row_mut(c).scaled_add(1.0, &row);
        sq_norms[c] += row.dot(&row);
        counts[c] += 1;
    }
    let total = cluster_sums.sum_axis(Axis(0));
    let mut intra_sum = 0.0;
    let mut sum_s2 = 0.0;
    for c in 0..k {
        let s = cluster_sums.row(c);
        let s2 = s.dot(&s);
        sum_s2 += s2;
        intra_sum += (s2 - sq_norms[c]) / 2.0;
    }
    let inter_sum = (total.dot(&total) - sum_s2) / 2.0;
    let n = z.nrows() as f64;
    let intra_pairs: f64 = counts.iter().map(|&m| (m * m.saturating_sub(1)) as f64 / 2.0).sum();
    let sum_m2: f64 = counts.iter().map(|&m| (m * m) as f64).sum();
    let inter_pairs = (n * n - sum_m2) / 2.0;
    Ok(PairSums {
        unit,
        norms,
        cluster_sums,
        total,
        intra_sum,
        inter_sum,
        intra_pairs,
        inter_pairs,
    })
}

impl PairSums {
    fn intra(&self) -> Result<f64> {
        if self.intra_pairs == 0.0 {
            return Err(Error::UndefinedIntra);
        }
        Ok(self.intra_sum / self.intra_pairs)
    }

    fn inter(&self) -> Result<f64> {
        if self.inter_pairs == 0.0 {
            return Err(Error::UndefinedInter);
        }
        Ok(self.inter_sum / self.inter_pairs)
    }
}

/// Mean cosine over all within-cluster pairs, pooled across clusters.
pub fn intra_cluster_similarity(z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    pair_sums(z, labels)?.intra()
}

/// Mean cosine over all cross-cluster pairs.
pub fn inter_cluster_similarity(z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    pair_sums(z, labels)?.inter()
}

/// `−(intra − λ·inter)`.
pub fn coherence_loss(z: &Array2<f64>, labels: &[usize], lambda_coh: f64) -> Result<f64> {
    let p = pair_sums(z, labels)?;
    Ok(-(p.intra()? - lambda_coh * p.inter()?))
}

pub fn coherence_loss_grad(z: &Array2<f64>, labels: &[usize], lambda_coh: f64) -> Result<(f64, Array2<f64>)> {
    let p = pair_sums(z, labels)?;
    let loss = -(p.intra()? - lambda_coh * p.inter()?);
    let mut grad = Array2::zeros(z.raw_dim());
    for (i, (mut g, &c)) in grad.axis_iter_mut(Axis(0)).zip(labels).enumerate() {
        let s_k = p.cluster_sums.row(c);
        let u = p.unit.row(i);
        // d(intra pair sum)/dẑ_i = S_k − ẑ_i; d(inter pair sum)/dẑ_i = T − S_k.
        Zip::from(&mut g)
            .and(&s_k)
            .and(&u)
            .and(&p.total)
            .for_each(|g, &s, &u, &t| {
                *g = -(s - u) / p.intra_pairs + lambda_coh * (t - s) / p.inter_pairs;
            });
    }
    unnormalize_grad(&p.unit, &p.norms, &mut grad);
    Ok((loss, grad))
}

/// Positive pairs grouped by anchor.
fn group_positives(n: usize, positives: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let mut by_anchor = vec![Vec::new(); n];
    for &(i, j) in positives {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidParameter(format!(
                "invalid positive pair ({i}, {j}) for {n} nodes"
            )));
        }
        by_anchor[i].push(j);
    }
    Ok(by_anchor)
}

fn contrastive_impl(
    z: &Array2<f64>,
    positives: &[(usize, usize)],
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    check_tau(tau)?;
    let n = z.nrows();
    let by_anchor = group_positives(n, positives)?;
    let (unit, norms) = normalize_rows(z);
    let mut loss = 0.0;
    let mut d_unit = want_grad.then(|| Array2::<f64>::zeros(z.raw_dim()));
    let anchors: Vec<usize> = (0..n).filter(|&i| !by_anchor[i].is_empty()).collect();
    for block in anchors.chunks(CONTRAST_BLOCK) {
        let rows = unit.select(Axis(0), block);
        let mut sims = rows.dot(&unit.t());
        for (r, &i) in block.iter().enumerate() {
            let mut row = sims.row_mut(r);
            let logits: Vec<f64> = row.iter().map(|&s| s / tau).collect();
            let m = logits
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, &l)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, &l)| (l - m).exp())
                .sum();
            let lse = m + denom.ln();
            let pos = &by_anchor[i];
            for &j in pos {
                loss += lse - logits[j];
            }
            if want_grad {
                // Reuse the similarity row for dL/ds_ik.
                let weight = pos.len() as f64 / tau;
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if k == i { 0.0 } else { weight * (logits[k] - lse).exp() };
                }
                for &j in pos {
                    row[j] -= 1.0 / tau;
                }
            }
        }
        if let Some(d) = d_unit.as_mut() {
            // s_ik = ẑ_i·ẑ_k, so dẑ = G Ẑ + Gᵀ Ẑ.
            let g_rows = sims.dot(&unit);
            for (r, &i) in block.iter().enumerate() {
                d.row_mut(i).scaled_add(1.0, &g_rows.row(r));
            }
            *d += &sims.t().dot(&rows);
        }
    }
    if !loss.is_finite() {
        return Err(Error::InvalidParameter("contrastive loss is not finite".into()));
    }
    if let Some(d) = d_unit.as_mut() {
        unnormalize_grad(&unit, &norms, d);
    }
    Ok((loss, d_unit))
}

/// `−Σ_{(i,j)∈P} log(exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ))`, summed over pairs.
pub fn contrastive_loss(z: &Array2<f64>, positives: &[(usize, usize)], tau: f64) -> Result<f64> {
    contrastive_impl(z, positives, tau, false).map(|(l, _)| l)
}

pub fn contrastive_loss_grad(z: &Array2<f64>, positives: &[(usize, usize)], tau: f64) -> Result<(f64, Array2<f64>)> {
    contrastive_impl(z, positives, tau, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Means of member rows per label. Empty clusters get a zero row.
pub fn centroids(z: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((k, z.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &z.row(i));
        counts[c] += 1;
    }
    for (mut row, &m) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if m > 0 {
            row /= m as f64;
        }
    }
    sums
}

/// `(1/N) Σ ‖z_i − c_{C(i)}‖²` with centroids taken from `z` itself.
pub fn alignment_loss(z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    alignment_loss_grad(z, labels).map(|(l, _)| l)
}

/// The centroid's own dependence on `z` contributes nothing because member
/// residuals sum to zero, leaving `(2/N)(z_i − c)`.
pub fn alignment_loss_grad(z: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let k = check_labels(z, labels)?;
    if z.nrows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let c = centroids(z, labels, k);
    let n = z.nrows() as f64;
    let mut resid = z.clone();
    for (mut row, &l) in resid.axis_iter_mut(Axis(0)).zip(labels) {
        row -= &c.row(l);
    }
    let loss = resid.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, resid * (2.0 / n)))
}

/// Loss components for one chunk. Terms with zero weight are not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrast: Option<f64>,
    pub coherence: Option<f64>,
    pub align: Option<f64>,
    pub total: f64,
}

fn total_impl(
    z: &Array2<f64>,
    labels: &[usize],
    positives: &[(usize, usize)],
    w: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Array2<f64>>)> {
    w.validate()?;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros(z.raw_dim()));
    let mut add = |weight: f64, value: Result<(f64, Option<Array2<f64>>)>| -> Result<Option<f64>> {
        if weight == 0.0 {
            return Ok(None);
        }
        let (v, g) = value?;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.scaled_add(weight, &g);
        }
        Ok(Some(v))
    };
    let pack = |r: Result<(f64, Array2<f64>)>| r.map(|(v, g)| (v, Some(g)));
    let contrast = add(
        w.alpha,
        if w.alpha == 0.0 {
            Ok((0.0, None))
        } else if want_grad {
            pack(contrastive_loss_grad(z, positives, w.tau))
        } else {
            contrastive_loss(z, positives, w.tau).map(|v| (v, None))
        },
    )?;
    let coherence = add(
        w.beta,
        if w.beta == 0.0 {
            Ok((0.0, None))
        } else if want_grad {
            pack(coherence_loss_grad(z, labels, w.lambda_coh))
        } else {
            coherence_loss(z, labels, w.lambda_coh).map(|v| (v, None))
        },
    )?;
    let align = add(
        w.gamma,
        if w.gamma == 0.0 {
            Ok((0.0, None))
        } else {
            pack(alignment_loss_grad(z, labels))
        },
    )?;
    let total = w.alpha * contrast.unwrap_or(0.0) + w.beta * coherence.unwrap_or(0.0) + w.gamma * align.unwrap_or(0.0);
    Ok((
        LossBreakdown {
            contrast,
            coherence,
            align,
            total,
        },
        grad,
    ))
}

/// `α·L_contrast + β·L_coherence + γ·L_align`.
pub fn total_loss(
    z: &Array2<f64>,
    labels: &[usize],
    positives: &[(usize, usize)],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    total_impl(z, labels, positives, w, false).map(|(b, _)| b)
}

pub fn total_loss_grad(
    z: &Array2<f64>,
    labels: &[usize],
    positives: &[(usize, usize)],
    w: &LossWeights,
) -> Result<(LossBreakdown, Array2<f64>)> {
    total_impl(z, labels, positives, w, true).map(|(b, g)| (b, g.expect("gradient requested")))
}

/// Undirected positive pairs, both orientations, for anchors in `0..n`.
pub fn positives_from_neighbors(neighbors: &[Vec<usize>]) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            skipped += 1;
        }
        pairs.extend(nb.iter().map(|&j| (i, j)));
    }
    (pairs, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn intra_examples() {
        let same = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        assert!(close(intra_cluster_similarity(&same, &[0, 0, 0]).unwrap(), 1.0, 1e-15));
        let orth = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(close(intra_cluster_similarity(&orth, &[0, 0]).unwrap(), 0.0, 1e-15));
        let two = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        assert!(close(
            intra_cluster_similarity(&two, &[0, 0, 1, 1]).unwrap(),
            0.0,
            1e-15
        ));
        assert!(matches!(
            intra_cluster_similarity(&orth, &[0, 1]),
            Err(Error::UndefinedIntra)
        ));
    }

    #[test]
    fn inter_examples() {
        let orth = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(close(inter_cluster_similarity(&orth, &[0, 1]).unwrap(), 0.0, 1e-15));
        let anti = array![[0.6, 0.8], [-0.6, -0.8]];
        assert!(close(inter_cluster_similarity(&anti, &[0, 1]).unwrap(), -1.0, 1e-15));
        let mixed = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(close(inter_cluster_similarity(&mixed, &[0, 0, 1]).unwrap(), 0.5, 1e-15));
        assert!(matches!(
            inter_cluster_similarity(&orth, &[0, 0]),
            Err(Error::UndefinedInter)
        ));
    }

    #[test]
    fn coherence_substitution() {
        // intra = 1, inter = 0
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert!(close(coherence_loss(&z, &[0, 0, 1, 1], 0.1).unwrap(), -1.0, 1e-15));
        // Four vectors (e_i + e_5)/√2 have every pairwise cosine 0.5.
        let mut z = Array2::zeros((4, 5));
        for i in 0..4 {
            z[[i, i]] = 1.0;
            z[[i, 4]] = 1.0;
        }
        let l = coherence_loss(&z, &[0, 0, 1, 1], 0.1).unwrap();
        assert!(close(l, -0.45, 1e-15));
    }

    #[test]
    fn contrastive_examples() {
        let z = array![[1.0, 0.0], [0.3, 0.9]];
        assert!(close(contrastive_loss(&z, &[(0, 1)], 0.5).unwrap(), 0.0, 1e-15));
        let z = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let expected = -((2.0f64).exp() / ((2.0f64).exp() + (-2.0f64).exp())).ln();
        let l = contrastive_loss(&z, &[(0, 1)], 0.5).unwrap();
        assert!(close(l, expected, 1e-12));
        assert!(close(l, 0.01815, 1e-5));
        let l = contrastive_loss(&z, &[(0, 1)], 1e9).unwrap();
        assert!(close(l, std::f64::consts::LN_2, 1e-8));
        assert!(matches!(contrastive_loss(&z, &[], 0.5), Err(Error::EmptyPositives)));
        assert!(contrastive_loss(&z, &[(0, 1)], 0.0).is_err());
    }

    #[test]
    fn alignment_examples() {
        let z = array![[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]];
        assert_eq!(alignment_loss(&z, &[0, 0, 1]).unwrap(), 0.0);
        let z = array![[0.0], [2.0]];
        assert!(close(alignment_loss(&z, &[0, 0]).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn total_projections() {
        let mut rng = seed::rng(1, "test", 0);
        let z = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
        let labels = [0, 0, 1, 1, 2, 2];
        let pos = [(0, 1), (1, 0), (2, 3), (4, 5)];
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(&z, &labels, &pos, &zero).unwrap().total, 0.0);
        let only_c = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        };
        let b = total_loss(&z, &labels, &pos, &only_c).unwrap();
        assert_eq!(b.total, contrastive_loss(&z, &pos, 0.5).unwrap());
        assert_eq!(b.coherence, None);
    }

    fn random_instance(seed_value: u64) -> (Array2<f64>, Vec<usize>, Vec<(usize, usize)>) {
        let mut rng = seed::rng(seed_value, "loss-fd", 0);
        let z = Array2::from_shape_simple_fn((32, 8), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..32).map(|i| i % 4).collect();
        let mut pos = Vec::new();
        for i in 0..32 {
            for _ in 0..3 {
                let j = rng.random_range(0..32);
                if j != i {
                    pos.push((i, j));
                }
            }
        }
        (z, labels, pos)
    }

    fn fd_check(f: &dyn Fn(&Array2<f64>) -> f64, z: &Array2<f64>, grad: &Array2<f64>) {
        let h = 1e-5;
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..z.len() {
            let (i, j) = (idx / z.ncols(), idx % z.ncols());
            let mut zp = z.clone();
            zp[[i, j]] += h;
            let mut zm = z.clone();
            zm[[i, j]] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            let a = grad[[i, j]];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * scale);
            assert!(rel < 1e-4, "({i},{j}): analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let (z, labels, pos) = random_instance(7);
        let (_, g) = coherence_loss_grad(&z, &labels, 0.1).unwrap();
        fd_check(&|z| coherence_loss(z, &labels, 0.1).unwrap(), &z, &g);
        let (_, g) = contrastive_loss_grad(&z, &pos, 0.5).unwrap();
        fd_check(&|z| contrastive_loss(z, &pos, 0.5).unwrap(), &z, &g);
        let (_, g) = alignment_loss_grad(&z, &labels).unwrap();
        fd_check(&|z| alignment_loss(z, &labels).unwrap(), &z, &g);
        let w = LossWeights::default();
        let (_, g) = total_loss_grad(&z, &labels, &pos, &w).unwrap();
        fd_check(&|z| total_loss(z, &labels, &pos, &w).unwrap().total, &z, &g);
    }

    #[test]
    fn moving_toward_centroid_does_not_increase_alignment() {
        let (z, labels, _) = random_instance(3);
        let c = centroids(&z, &labels, 4);
        let before = alignment_loss(&z, &labels).unwrap();
        let mut moved = z.clone();
        let target = c.row(labels[5]).to_owned();
        let mut row = moved.row_mut(5);
        let step = (&target - &row) * 0.5;
        row += &step;
        assert!(alignment_loss(&moved, &labels).unwrap() <= before + 1e-15);
    }

    proptest! {
        #[test]
        fn cosine_terms_are_scale_invariant(seed_value in 0u64..1000, scale in 0.01f64..100.0) {
            let (z, labels, pos) = random_instance(seed_value);
            let zs = &z * scale;
            let tol = 1e-9;
            prop_assert!(close(intra_cluster_similarity(&z, &labels).unwrap(), intra_cluster_similarity(&zs, &labels).unwrap(), tol));
            prop_assert!(close(inter_cluster_similarity(&z, &labels).unwrap(), inter_cluster_similarity(&zs, &labels).unwrap(), tol));
            let a = contrastive_loss(&z, &pos, 0.5).unwrap();
            prop_assert!(close(a, contrastive_loss(&zs, &pos, 0.5).unwrap(), tol * a.abs().max(1.0)));
        }

        #[test]
        fn coherence_decreases_when_cross_pair_separates(seed_value in 0u64..1000) {
            // Rotating node 0 away from node 1 (different clusters) lowers their cosine;
            // with node 0 as the only member of its cluster, intra is unaffected.
            let mut rng = seed::rng(seed_value, "coh-mono", 0);
            let mut z = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
            let labels = [0, 1, 1, 2, 2, 2];
            let before = coherence_loss(&z, &labels, 0.1).unwrap();
            let inter_before = inter_cluster_similarity(&z, &labels).unwrap();
            let u1 = z.row(1).to_owned() / z.row(1).dot(&z.row(1)).sqrt();
            let mut r0 = z.row_mut(0);
            r0.scaled_add(-0.1, &u1);
            let inter_after = inter_cluster_similarity(&z, &labels).unwrap();
            let after = coherence_loss(&z, &labels, 0.1).unwrap();
            prop_assert!(close(after - before, 0.1 * (inter_after - inter_before), 1e-12));
        }
    }
}
