//! K-means (training pseudo-labels), spectral clustering (post hoc topics),
//! and the intra/inter cluster metrics.

pub mod eigen;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::cosine_knn;
use crate::losses::{inter_cluster_similarity, intra_cluster_similarity, PseudoLabels};
use crate::seed;

use eigen::largest_eigenpairs;
pub use eigen::SymmetricCsr;

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_N_INIT: usize = 10;
const HARTIGAN_MAX_PASSES: usize = 100;
pub const SPECTRAL_AFFINITY_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub method: ClusterMethod,
    /// K-means only.
    pub centroids: Option<Array2<f64>>,
    /// K-means only.
    pub inertia: Option<f64>,
    /// Inertia after each assignment step (k-means only).
    pub inertia_history: Vec<f64>,
    /// Cluster ids with no members.
    pub empty_clusters: Vec<usize>,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn to_pseudo_labels(&self) -> Option<PseudoLabels> {
        self.centroids.as_ref().map(|c| PseudoLabels {
            assignment: self.labels.clone(),
            centroids: c.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Independent restarts; the lowest-inertia run wins (ties to the earliest).
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: KMEANS_MAX_ITER,
            n_init: KMEANS_N_INIT,
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++ seeding: each step samples `2 + ln k` candidates by D² weight
/// and keeps the one that lowers the potential most.
fn kmeans_pp(z: &Array2<f64>, k: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let n = z.nrows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centers = Array2::zeros((k, z.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&z.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();
    for c in 1..k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if potential > 0.0 {
                let target = rng.random::<f64>() * potential;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = (0..n).map(|i| closest[i].min(sq_dist(z.row(i), z.row(cand)))).collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| pot < *b) {
                best = Some((pot, cand, updated));
            }
        }
        let (_, cand, updated) = best.expect("at least one trial");
        centers.row_mut(c).assign(&z.row(cand));
        closest = updated;
    }
    centers
}

/// Nearest center per row. Candidates are ranked by `‖c‖² − 2 x·c` from one
/// matrix product; the winner's distance is recomputed exactly.
fn assign(z: &Array2<f64>, centers: &Array2<f64>, labels: &mut [usize]) -> f64 {
    let cross = z.dot(&centers.t());
    let norms: Vec<f64> = centers.axis_iter(Axis(0)).map(|c| c.dot(&c)).collect();
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, &norm) in norms.iter().enumerate() {
            let d = norm - 2.0 * cross[[i, c]];
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        inertia += sq_dist(z.row(i), centers.row(best.1));
    }
    inertia
}

fn lloyd(z: &Array2<f64>, k: usize, mut centers: Array2<f64>, max_iter: usize) -> ClusterAssignment {
    let n = z.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut inertia = 0.0;
    for _ in 0..max_iter {
        inertia = assign(z, &centers, &mut labels);
        history.push(inertia);
        if prev.as_deref() == Some(&labels[..]) {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &z.row(i));
            counts[l] += 1;
        }
        let mut taken = BTreeSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed at the point farthest from its own centroid.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .map(|i| (sq_dist(z.row(i), centers.row(labels[i])), i))
                    .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
                    .1;
                taken.insert(far);
                centers.row_mut(c).assign(&z.row(far));
            }
        }
        prev = Some(labels.clone());
    }
    let refined = hartigan(z, k, &mut labels, &mut centers);
    if refined < inertia {
        history.push(refined);
    }
    let inertia = refined;
    let sizes = {
        let mut s = vec![0; k];
        labels.iter().for_each(|&l| s[l] += 1);
        s
    };
    ClusterAssignment {
        labels,
        k,
        method: ClusterMethod::Kmeans,
        centroids: Some(centers),
        inertia: Some(inertia),
        inertia_history: history,
        empty_clusters: (0..k).filter(|&c| sizes[c] == 0).collect(),
    }
}

/// Single-point transfers that lower the total inertia, accounting for the shift
/// of both centroids. Lloyd fixed points can still admit such moves; the result
/// is a Lloyd fixed point too. Returns the exact inertia of the final partition.
fn hartigan(z: &Array2<f64>, k: usize, labels: &mut [usize], centers: &mut Array2<f64>) -> f64 {
    let n = z.nrows();
    let mut sums = Array2::<f64>::zeros(centers.raw_dim());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &z.row(i));
        counts[l] += 1;
    }
    for c in (0..k).filter(|&c| counts[c] > 0) {
        centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
    }
    for _ in 0..HARTIGAN_MAX_PASSES {
        let mut moved = false;
        for i in 0..n {
            let a = labels[i];
            if counts[a] == 1 {
                continue;
            }
            let x = z.row(i);
            let leave = counts[a] as f64 / (counts[a] - 1) as f64 * sq_dist(x, centers.row(a));
            let (join, b) = (0..k)
                .filter(|&b| b != a)
                .map(|b| {
                    (
                        counts[b] as f64 / (counts[b] + 1) as f64 * sq_dist(x, centers.row(b)),
                        b,
                    )
                })
                .fold((f64::INFINITY, a), |m, c| if c.0 < m.0 { c } else { m });
            if join < leave * (1.0 - 1e-12) {
                sums.row_mut(a).scaled_add(-1.0, &x);
                sums.row_mut(b).scaled_add(1.0, &x);
                counts[a] -= 1;
                counts[b] += 1;
                labels[i] = b;
                for c in [a, b] {
                    centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    (0..n).map(|i| sq_dist(z.row(i), centers.row(labels[i]))).sum()
}

pub fn kmeans(z: &Array2<f64>, k: usize, seed_value: u64) -> Result<ClusterAssignment> {
    kmeans_with(z, k, seed_value, KMeansOptions::default())
}

pub fn kmeans_with(z: &Array2<f64>, k: usize, seed_value: u64, opts: KMeansOptions) -> Result<ClusterAssignment> {
    let n = z.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(format!(
            "k-means requires 1 <= k <= n (k={k}, n={n})"
        )));
    }
    if opts.n_init == 0 || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "k-means needs n_init >= 1 and max_iter >= 1".into(),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "k-means input contains non-finite values".into(),
        ));
    }
    let mut best: Option<ClusterAssignment> = None;
    for run in 0..opts.n_init {
        let mut rng = seed::rng(seed_value, "kmeans", run as u64);
        let centers = kmeans_pp(z, k, &mut rng);
        let result = lloyd(z, k, centers, opts.max_iter);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Symmetric kNN affinity with weights `(1 + cos) / 2`, as CSR without self-loops.
pub fn spectral_affinity(z: &Array2<f64>, k_aff: usize) -> Result<SymmetricCsr> {
    let n = z.nrows();
    let k_aff = k_aff.min(n - 1);
    let nb = cosine_knn(z, k_aff, None)?;
    let mut pairs = BTreeSet::new();
    for (i, list) in nb.iter().enumerate() {
        for &j in list {
            pairs.insert((i, j));
            pairs.insert((j, i));
        }
    }
    let norms: Vec<f64> = z.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    let mut rows = vec![Vec::new(); n];
    for (i, j) in pairs {
        let cos = (z.row(i).dot(&z.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
        rows[i].push((j, (1.0 + cos) / 2.0));
    }
    Ok(SymmetricCsr::from_rows(n, rows))
}

/// `D^{-1/2} A D^{-1/2}`; its top eigenvectors are the bottom eigenvectors of `L_sym`.
pub fn normalized_affinity(a: &SymmetricCsr) -> SymmetricCsr {
    let degree: Vec<f64> = (0..a.n)
        .map(|i| a.vals[a.row_ptr[i]..a.row_ptr[i + 1]].iter().sum())
        .collect();
    let inv: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let rows = (0..a.n)
        .map(|i| {
            (a.row_ptr[i]..a.row_ptr[i + 1])
                .map(|p| (a.cols[p], inv[i] * a.vals[p] * inv[a.cols[p]]))
                .collect()
        })
        .collect();
    SymmetricCsr::from_rows(a.n, rows)
}

pub fn spectral_clustering(z: &Array2<f64>, k: usize, seed_value: u64) -> Result<ClusterAssignment> {
    let n = z.nrows();
    if k == 0 || n <= k {
        return Err(Error::InvalidParameter(format!(
            "spectral clustering requires 1 <= k < n (k={k}, n={n})"
        )));
    }
    let affinity = spectral_affinity(z, SPECTRAL_AFFINITY_K)?;
    spectral_from_affinity(&affinity, k, seed_value)
}

pub fn spectral_from_affinity(affinity: &SymmetricCsr, k: usize, seed_value: u64) -> Result<ClusterAssignment> {
    let n = affinity.n;
    if k == 0 || n <= k {
        return Err(Error::InvalidParameter(format!(
            "spectral clustering requires 1 <= k < n (k={k}, n={n})"
        )));
    }
    let base = ClusterAssignment {
        labels: vec![0; n],
        k,
        method: ClusterMethod::Spectral,
        centroids: None,
        inertia: None,
        inertia_history: Vec::new(),
        empty_clusters: Vec::new(),
    };
    if k == 1 {
        return Ok(base);
    }
    let m = normalized_affinity(affinity);
    let pairs = largest_eigenpairs(&m, k, seed::derive(seed_value, "spectral-eigen", 0))?;
    let mut embedding = pairs.vectors;
    for mut row in embedding.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let km = kmeans(&embedding, k, seed_value)?;
    Ok(ClusterAssignment {
        labels: km.labels,
        empty_clusters: km.empty_clusters,
        ..base
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub inter: f64,
    pub intra: f64,
}

/// Same pooled formulas as the coherence loss.
pub fn cluster_metrics(z: &Array2<f64>, labels: &[usize]) -> Result<ClusterMetrics> {
    Ok(ClusterMetrics {
        inter: inter_cluster_similarity(z, labels)?,
        intra: intra_cluster_similarity(z, labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub inter: f64,
    pub intra: f64,
    pub k: usize,
    pub method: ClusterMethod,
    pub seed: u64,
}

pub fn write_assignments_csv(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: labels.len(),
            context: "assignment labels vs ids".into(),
        });
    }
    let mut out = String::from("id,cluster\n");
    for (id, l) in ids.iter().zip(labels) {
        out.push_str(&csv_field(id));
        out.push(',');
        out.push_str(&l.to_string());
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_assignments_csv(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (id, cluster) = line.rsplit_once(',').ok_or_else(|| Error::MalformedRecord {
            line: line_no + 1,
            message: "expected id,cluster".into(),
        })?;
        let cluster = cluster.trim().parse().map_err(|_| Error::MalformedRecord {
            line: line_no + 1,
            message: format!("bad cluster id {cluster:?}"),
        })?;
        out.push((unquote(id), cluster));
    }
    Ok(out)
}

/// Labels in corpus order from `(id, cluster)` rows; every id must appear exactly once.
pub fn align_assignments(ids: &[String], rows: &[(String, usize)]) -> Result<Vec<usize>> {
    let mut by_id = std::collections::HashMap::with_capacity(rows.len());
    for (id, c) in rows {
        if by_id.insert(id.as_str(), *c).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    if by_id.len() != ids.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: by_id.len(),
            context: "assignment rows vs corpus posts".into(),
        });
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("post {id:?} has no assignment")))
        })
        .collect()
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn unquote(s: &str) -> String {
    match s.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
        Some(inner) => inner.replace("\"\"", "\""),
        None => s.to_string(),
    }
}
