//! Semantic and geographic kNN graphs, the MonoGraph heterogeneous graph, and
//! the renormalized adjacency operator used for message passing.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, GeoCoordinate};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Guard added to weighted degrees before the inverse square root.
pub const DEGREE_EPS: f64 = 1e-12;

const KNN_BLOCK: usize = 256;

pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
            context: "cosine similarity".into(),
        });
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateEmbedding(None));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Great-circle distance in kilometres on a sphere of radius 6371 km.
pub fn haversine_km(p: GeoCoordinate, q: GeoCoordinate) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Geographic edge weight `1 / (1 + d)`.
pub fn geo_weight(d_km: f64) -> Result<f64> {
    if d_km.is_nan() || d_km < 0.0 {
        return Err(Error::InvalidParameter(format!("invalid distance {d_km}")));
    }
    Ok(1.0 / (1.0 + d_km))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Semantic,
    Geographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Sparse weighted graph. Edges are sorted by `(src, dst)` and carry no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub n: usize,
    pub relation: Relation,
    pub edges: Vec<Edge>,
}

impl WeightedGraph {
    /// Builds a graph from an arbitrary edge list, sorting it and rejecting self-loops.
    pub fn from_edges(n: usize, relation: Relation, mut edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) out of range for n={n}",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::InvalidParameter(format!("self-loop at node {}", e.src)));
            }
            if !e.weight.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite weight on ({}, {})",
                    e.src, e.dst
                )));
            }
        }
        edges.sort_by_key(|a| (a.src, a.dst));
        Ok(WeightedGraph { n, relation, edges })
    }

    pub fn support(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.src, e.dst)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.first_asymmetry().is_none()
    }

    fn first_asymmetry(&self) -> Option<(usize, usize)> {
        self.edges.iter().find_map(|e| {
            let found = self
                .edges
                .binary_search_by(|x| (x.src, x.dst).cmp(&(e.dst, e.src)))
                .ok()
                .map(|k| self.edges[k].weight == e.weight)
                .unwrap_or(false);
            (!found).then_some((e.src, e.dst))
        })
    }

    /// Neighbor lists derived from the edge list.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for e in &self.edges {
            out[e.src].push(e.dst);
        }
        out
    }

    pub fn degree_counts(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }
}

/// Node set shared by a semantic and a geographic relation with identical support.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub n: usize,
    pub semantic: WeightedGraph,
    pub geographic: WeightedGraph,
    /// Directed semantic kNN sets before symmetrization.
    pub neighborhoods: Vec<Vec<usize>>,
}

fn unit_rows(x: &Array2<f64>, ids: Option<&[String]>) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding(Some(
                ids.map(|ids| ids[i].clone()).unwrap_or_else(|| i.to_string()),
            )));
        }
        row /= norm;
    }
    Ok(out)
}

/// Picks the k best-scoring candidates; ties go to the lower index.
fn top_k(scores: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = scores.collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cand.len() > k {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(j, _)| j).collect()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "kNN requires 1 <= k < n (k={k}, n={n})"
        )));
    }
    Ok(())
}

/// Directed top-k cosine neighbors of every row of `x`.
pub fn cosine_knn(x: &Array2<f64>, k: usize, ids: Option<&[String]>) -> Result<Vec<Vec<usize>>> {
    let n = x.nrows();
    check_k(n, k)?;
    let unit = unit_rows(x, ids)?;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(KNN_BLOCK) {
        let end = (start + KNN_BLOCK).min(n);
        let block = unit.slice(ndarray::s![start..end, ..]).dot(&unit.t());
        for (r, row) in block.axis_iter(Axis(0)).enumerate() {
            let i = start + r;
            out.push(top_k(row.iter().copied().enumerate().filter(|&(j, _)| j != i), k));
        }
    }
    Ok(out)
}

/// Directed top-k geographic neighbors by Haversine distance.
pub fn geographic_knn(coords: &[GeoCoordinate], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = coords.len();
    check_k(n, k)?;
    Ok((0..n)
        .map(|i| {
            top_k(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, -haversine_km(coords[i], coords[j]))),
                k,
            )
        })
        .collect())
}

/// Union-symmetrizes directed neighbor sets and weights each undirected pair.
fn symmetrize(
    n: usize,
    relation: Relation,
    neighborhoods: &[Vec<usize>],
    mut weight: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<WeightedGraph> {
    let pairs: BTreeSet<(usize, usize)> = neighborhoods
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for (i, j) in pairs {
        let w = weight(i, j)?;
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
    WeightedGraph::from_edges(n, relation, edges)
}

fn semantic_weight(unit: &Array2<f64>, i: usize, j: usize) -> f64 {
    unit.row(i).dot(&unit.row(j)).clamp(-1.0, 1.0)
}

pub fn semantic_knn_graph(corpus: &Corpus, k: usize) -> Result<WeightedGraph> {
    let x = corpus.features();
    let nb = cosine_knn(&x, k, Some(corpus.ids()))?;
    let unit = unit_rows(&x, Some(corpus.ids()))?;
    symmetrize(corpus.len(), Relation::Semantic, &nb, |i, j| {
        Ok(semantic_weight(&unit, i, j))
    })
}

pub fn geographic_knn_graph(corpus: &Corpus, k: usize) -> Result<WeightedGraph> {
    let coords = corpus.coords();
    let nb = geographic_knn(coords, k)?;
    symmetrize(corpus.len(), Relation::Geographic, &nb, |i, j| {
        geo_weight(haversine_km(coords[i], coords[j]))
    })
}

/// MonoGraph: one semantic kNN neighborhood carrying both edge types.
pub fn mono_hetero_graph(corpus: &Corpus, k: usize) -> Result<HeteroGraph> {
    let x = corpus.features();
    let neighborhoods = cosine_knn(&x, k, Some(corpus.ids()))?;
    let unit = unit_rows(&x, Some(corpus.ids()))?;
    let coords = corpus.coords();
    let n = corpus.len();
    let semantic = symmetrize(n, Relation::Semantic, &neighborhoods, |i, j| {
        Ok(semantic_weight(&unit, i, j))
    })?;
    let geographic = symmetrize(n, Relation::Geographic, &neighborhoods, |i, j| {
        geo_weight(haversine_km(coords[i], coords[j]))
    })?;
    Ok(HeteroGraph {
        n,
        semantic,
        geographic,
        neighborhoods,
    })
}

/// `D^{-1/2} (A + I) D^{-1/2}` in CSR form, with `D_ii = 1 + sum_j |w_ij|`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn normalize_adjacency(g: &WeightedGraph) -> Result<NormalizedAdjacency> {
    if let Some((i, j)) = g.first_asymmetry() {
        return Err(Error::AsymmetricGraph(i, j));
    }
    let n = g.n;
    let mut degree = vec![1.0f64; n];
    for e in &g.edges {
        degree[e.src] += e.weight.abs();
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > DEGREE_EPS { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.edges.len() + n);
    let mut vals = Vec::with_capacity(g.edges.len() + n);
    let mut e = 0;
    row_ptr.push(0);
    for i in 0..n {
        let mut self_done = false;
        while e < g.edges.len() && g.edges[e].src == i {
            let edge = g.edges[e];
            if !self_done && edge.dst > i {
                cols.push(i);
                vals.push(if inv_sqrt[i] > 0.0 {
                    inv_sqrt[i] * inv_sqrt[i]
                } else {
                    1.0
                });
                self_done = true;
            }
            cols.push(edge.dst);
            vals.push(inv_sqrt[i] * edge.weight * inv_sqrt[edge.dst]);
            e += 1;
        }
        if !self_done {
            cols.push(i);
            vals.push(if inv_sqrt[i] > 0.0 {
                inv_sqrt[i] * inv_sqrt[i]
            } else {
                1.0
            });
        }
        row_ptr.push(cols.len());
    }
    Ok(NormalizedAdjacency { n, row_ptr, cols, vals })
}

impl NormalizedAdjacency {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    /// Sparse-dense product `Â X`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "operator/feature row mismatch");
        let mut out = Array2::zeros((self.n, x.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (j, w) in self.row(i) {
                out_row.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                m[[i, j]] = w;
            }
        }
        m
    }

    /// Operator with every edge weight replaced by zero (self-loops only).
    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }
}

// ---------------------------------------------------------------------------
// Graph cache file
//
// "GTG1" | u32 version | [u8; 32] sha256(corpus, k) | u32 n | u32 k | u32 relation count
// per relation: u8 tag | u64 nnz | (n+1) u64 row_ptr | nnz u32 cols | nnz f64 weights
// Tags: 0 semantic kNN, 1 geographic kNN, 2 geographic on semantic support.

pub const GRAPH_MAGIC: &[u8; 4] = b"GTG1";
const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachedRelation {
    Semantic,
    Geographic,
    MonoGeographic,
}

impl CachedRelation {
    fn tag(self) -> u8 {
        match self {
            CachedRelation::Semantic => 0,
            CachedRelation::Geographic => 1,
            CachedRelation::MonoGeographic => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CachedRelation::Semantic),
            1 => Ok(CachedRelation::Geographic),
            2 => Ok(CachedRelation::MonoGeographic),
            t => Err(graph_err(format!("unknown relation tag {t}"))),
        }
    }

    fn relation(self) -> Relation {
        match self {
            CachedRelation::Semantic => Relation::Semantic,
            _ => Relation::Geographic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCache {
    pub content_hash: [u8; 32],
    pub n: usize,
    pub k: usize,
    pub relations: Vec<(CachedRelation, WeightedGraph)>,
}

fn graph_err(message: impl Into<String>) -> Error {
    Error::MalformedFile {
        format: "graph cache",
        message: message.into(),
    }
}

/// Hash over the corpus content and k; used to invalidate stale caches.
pub fn content_hash(corpus: &Corpus, k: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((corpus.len() as u64).to_le_bytes());
    h.update((corpus.dim() as u64).to_le_bytes());
    h.update((k as u64).to_le_bytes());
    for id in corpus.ids() {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    for v in corpus.embeddings().iter() {
        h.update(v.to_le_bytes());
    }
    for c in corpus.coords() {
        h.update(c.lat.to_le_bytes());
        h.update(c.lon.to_le_bytes());
    }
    h.finalize().into()
}

impl GraphCache {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(GRAPH_MAGIC);
        buf.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.content_hash);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.k as u32).to_le_bytes());
        buf.extend_from_slice(&(self.relations.len() as u32).to_le_bytes());
        for (rel, g) in &self.relations {
            buf.push(rel.tag());
            buf.extend_from_slice(&(g.edges.len() as u64).to_le_bytes());
            let mut ptr = 0u64;
            buf.extend_from_slice(&ptr.to_le_bytes());
            let counts = g.degree_counts();
            for c in counts {
                ptr += c as u64;
                buf.extend_from_slice(&ptr.to_le_bytes());
            }
            for e in &g.edges {
                buf.extend_from_slice(&(e.dst as u32).to_le_bytes());
            }
            for e in &g.edges {
                buf.extend_from_slice(&e.weight.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, off: 0 };
        if cur.take(4)? != GRAPH_MAGIC {
            return Err(graph_err("bad magic"));
        }
        let version = cur.u32()?;
        if version != GRAPH_VERSION {
            return Err(graph_err(format!("unsupported version {version}")));
        }
        let content_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
        let n = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let mut relations = Vec::with_capacity(count);
        for _ in 0..count {
            let rel = CachedRelation::from_tag(cur.take(1)?[0])?;
            let nnz = cur.u64()? as usize;
            let row_ptr: Vec<usize> = (0..=n).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
            let cols: Vec<usize> = (0..nnz).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<_>>()?;
            let weights: Vec<f64> = (0..nnz).map(|_| cur.f64()).collect::<Result<_>>()?;
            if row_ptr[n] != nnz {
                return Err(graph_err("row pointer does not match nnz"));
            }
            let mut edges = Vec::with_capacity(nnz);
            for i in 0..n {
                for e in row_ptr[i]..row_ptr[i + 1] {
                    edges.push(Edge {
                        src: i,
                        dst: cols[e],
                        weight: weights[e],
                    });
                }
            }
            relations.push((rel, WeightedGraph::from_edges(n, rel.relation(), edges)?));
        }
        if cur.off != bytes.len() {
            return Err(graph_err("trailing bytes"));
        }
        Ok(GraphCache {
            content_hash,
            n,
            k,
            relations,
        })
    }

    /// Semantic kNN, geographic kNN, and the MonoGraph geographic relation.
    pub fn build(corpus: &Corpus, k: usize) -> Result<Self> {
        let mono = mono_hetero_graph(corpus, k)?;
        Ok(GraphCache {
            content_hash: content_hash(corpus, k),
            n: corpus.len(),
            k,
            relations: vec![
                (CachedRelation::Semantic, mono.semantic),
                (CachedRelation::Geographic, geographic_knn_graph(corpus, k)?),
                (CachedRelation::MonoGeographic, mono.geographic),
            ],
        })
    }

    pub fn relation(&self, which: CachedRelation) -> Option<&WeightedGraph> {
        self.relations.iter().find(|(r, _)| *r == which).map(|(_, g)| g)
    }

    /// True when the cache was built from this corpus with this k.
    pub fn matches(&self, corpus: &Corpus, k: usize) -> bool {
        self.n == corpus.len() && self.k == k && self.content_hash == content_hash(corpus, k)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .off
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| graph_err("truncated"))?;
        let s = &self.bytes[self.off..end];
        self.off = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use ndarray::array;

    fn corpus(embs: &[&[f32]], coords: &[(f64, f64)]) -> Corpus {
        Corpus::new(
            embs.iter()
                .zip(coords)
                .enumerate()
                .map(|(i, (e, &(lat, lon)))| Post {
                    id: format!("n{i}"),
                    embedding: e.to_vec(),
                    coord: GeoCoordinate { lat, lon },
                    text: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let c = |a: ndarray::Array1<f64>, b: ndarray::Array1<f64>| cosine_similarity(a.view(), b.view());
        assert_eq!(c(array![1.0, 0.0], array![1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(c(array![1.0, 0.0], array![0.0, 1.0]).unwrap(), 0.0);
        assert!((c(array![1.0, 1.0], array![1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(matches!(
            c(array![0.0, 0.0], array![1.0, 0.0]),
            Err(Error::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn haversine_examples() {
        let p = GeoCoordinate { lat: 0.0, lon: 0.0 };
        assert_eq!(haversine_km(p, p), 0.0);
        let anti = haversine_km(p, GeoCoordinate { lat: 0.0, lon: 180.0 });
        assert!((anti - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-3);
        assert!((anti - 20015.087).abs() < 1e-3);
        let quarter = haversine_km(p, GeoCoordinate { lat: 0.0, lon: 90.0 });
        assert!((quarter - 10007.543).abs() < 1e-3);
    }

    #[test]
    fn geo_weight_examples() {
        assert_eq!(geo_weight(0.0).unwrap(), 1.0);
        assert_eq!(geo_weight(1.0).unwrap(), 0.5);
        assert!((geo_weight(9.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(geo_weight(-1.0).is_err());
    }

    #[test]
    fn orthogonal_vectors_break_ties_by_index() {
        let c = corpus(
            &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
            &[(0.0, 0.0); 3],
        );
        let nb = cosine_knn(&c.features(), 1, None).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![0]]);
        let g = semantic_knn_graph(&c, 1).unwrap();
        assert!(g.edges.iter().all(|e| e.weight == 0.0));
        assert_eq!(g.support(), [(0, 1), (0, 2), (1, 0), (2, 0)].into_iter().collect());
    }

    #[test]
    fn identical_pair_links_with_unit_weight() {
        let c = corpus(&[&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]], &[(0.0, 0.0); 3]);
        let g = semantic_knn_graph(&c, 1).unwrap();
        let e = g.edges.iter().find(|e| e.src == 0 && e.dst == 2).unwrap();
        assert!((e.weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_geographic_neighbors() {
        // 1 km along the equator is 1/111.195 degrees.
        let deg = 1.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
        let coords = [(0.0, 0.0), (0.0, deg), (0.0, 10.0 * deg)];
        let c = corpus(&[&[1.0], &[1.0], &[1.0]], &coords);
        let nb = geographic_knn(c.coords(), 1).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![1]]);
        let g = geographic_knn_graph(&c, 1).unwrap();
        let w01 = g.edges.iter().find(|e| e.src == 0 && e.dst == 1).unwrap().weight;
        assert!((w01 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn coincident_points_weight_one() {
        let c = corpus(&[&[1.0], &[2.0]], &[(10.0, 10.0), (10.0, 10.0)]);
        let g = geographic_knn_graph(&c, 1).unwrap();
        assert!(g.edges.iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn mono_pair_carries_both_relations() {
        let c = corpus(&[&[1.0, 0.2], &[0.3, 1.0]], &[(0.0, 0.0), (45.0, 90.0)]);
        let h = mono_hetero_graph(&c, 1).unwrap();
        assert_eq!(h.semantic.support(), h.geographic.support());
        let d = haversine_km(c.coords()[0], c.coords()[1]);
        let gw = h.geographic.edges[0].weight;
        assert!((gw - 1.0 / (1.0 + d)).abs() < 1e-15);
        assert!(gw < 1e-3, "far pair keeps a small but present edge");
        let f = c.features();
        let sw = cosine_similarity(f.row(0), f.row(1)).unwrap();
        assert!((h.semantic.edges[0].weight - sw).abs() < 1e-12);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let c = corpus(&[&[1.0], &[2.0]], &[(0.0, 0.0), (1.0, 1.0)]);
        assert!(semantic_knn_graph(&c, 2).is_err());
        assert!(geographic_knn_graph(&c, 0).is_err());
    }

    #[test]
    fn degenerate_embedding_reports_id() {
        let c = corpus(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]], &[(0.0, 0.0); 3]);
        match semantic_knn_graph(&c, 1) {
            Err(Error::DegenerateEmbedding(Some(id))) => assert_eq!(id, "n1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalized_adjacency_examples() {
        let iso = WeightedGraph::from_edges(1, Relation::Semantic, vec![]).unwrap();
        assert_eq!(normalize_adjacency(&iso).unwrap().to_dense(), array![[1.0]]);
        let pair = WeightedGraph::from_edges(
            2,
            Relation::Semantic,
            vec![
                Edge {
                    src: 0,
                    dst: 1,
                    weight: 1.0,
                },
                Edge {
                    src: 1,
                    dst: 0,
                    weight: 1.0,
                },
            ],
        )
        .unwrap();
        let a = normalize_adjacency(&pair).unwrap().to_dense();
        for v in a.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let asym = WeightedGraph::from_edges(
            2,
            Relation::Semantic,
            vec![Edge {
                src: 0,
                dst: 1,
                weight: 1.0,
            }],
        )
        .unwrap();
        assert!(matches!(normalize_adjacency(&asym), Err(Error::AsymmetricGraph(0, 1))));
    }

    #[test]
    fn self_loops_are_rejected() {
        assert!(WeightedGraph::from_edges(
            2,
            Relation::Semantic,
            vec![Edge {
                src: 1,
                dst: 1,
                weight: 1.0
            }]
        )
        .is_err());
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let c = corpus(
            &[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]],
            &[(0.0, 0.0), (0.1, 0.0), (1.0, 1.0), (1.1, 1.0)],
        );
        let h = mono_hetero_graph(&c, 2).unwrap();
        let cache = GraphCache {
            content_hash: content_hash(&c, 2),
            n: 4,
            k: 2,
            relations: vec![
                (CachedRelation::Semantic, h.semantic.clone()),
                (CachedRelation::MonoGeographic, h.geographic.clone()),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        cache.write(&path).unwrap();
        let back = GraphCache::read(&path).unwrap();
        assert_eq!(back, cache);
        assert!(back.matches(&c, 2));
        assert!(!back.matches(&c, 1));
    }

    #[test]
    fn built_cache_carries_all_relations() {
        let c = corpus(
            &[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]],
            &[(0.0, 0.0), (0.1, 0.0), (1.0, 1.0), (1.1, 1.0)],
        );
        let cache = GraphCache::build(&c, 2).unwrap();
        assert_eq!(
            cache.relation(CachedRelation::Semantic),
            Some(&semantic_knn_graph(&c, 2).unwrap())
        );
        assert_eq!(
            cache.relation(CachedRelation::Geographic),
            Some(&geographic_knn_graph(&c, 2).unwrap())
        );
        let mono = cache.relation(CachedRelation::MonoGeographic).unwrap();
        assert_eq!(
            mono.support(),
            cache.relation(CachedRelation::Semantic).unwrap().support()
        );
        assert!(cache.matches(&c, 2));
    }
}
