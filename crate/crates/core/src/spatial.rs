//! Topic intensity surfaces on a lat/lon grid and their spatial autocorrelation:
//! global Moran's I, Getis-Ord Gi*, and local Moran (LISA).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::GeoCoordinate;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_CELL_DEG: f64 = 0.1;
pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const SIGNIFICANCE: f64 = 0.05;
const VARIANCE_EPS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn of(coords: &[GeoCoordinate]) -> Result<Self> {
        let first = coords.first().ok_or(Error::EmptyCorpus)?;
        let mut b = BoundingBox {
            min_lat: first.lat,
            min_lon: first.lon,
            max_lat: first.lat,
            max_lon: first.lon,
        };
        for c in coords {
            b.min_lat = b.min_lat.min(c.lat);
            b.max_lat = b.max_lat.max(c.lat);
            b.min_lon = b.min_lon.min(c.lon);
            b.max_lon = b.max_lon.max(c.lon);
        }
        Ok(b)
    }

    fn contains(&self, c: &GeoCoordinate) -> bool {
        (self.min_lat..=self.max_lat).contains(&c.lat) && (self.min_lon..=self.max_lon).contains(&c.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub cell_deg: f64,
    /// Defaults to the bounding box of the posts.
    pub bbox: Option<BoundingBox>,
    /// Drop posts outside `bbox` instead of failing.
    pub clip: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cell_deg: DEFAULT_CELL_DEG,
            bbox: None,
            clip: false,
        }
    }
}

/// Regular grid of cells, row-major from the south-west corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bbox: BoundingBox,
    pub cell_deg: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(spec: &GridSpec, coords: &[GeoCoordinate]) -> Result<Self> {
        if !(spec.cell_deg > 0.0 && spec.cell_deg.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cell size must be positive, got {}",
                spec.cell_deg
            )));
        }
        let bbox = match spec.bbox {
            Some(b) => b,
            None => BoundingBox::of(coords)?,
        };
        let (h, w) = (bbox.max_lat - bbox.min_lat, bbox.max_lon - bbox.min_lon);
        if !(h > 0.0 && w > 0.0) {
            return Err(Error::InvalidParameter(format!("degenerate grid box {h}° x {w}°")));
        }
        Ok(Grid {
            bbox,
            cell_deg: spec.cell_deg,
            rows: ((h / spec.cell_deg).ceil() as usize).max(1),
            cols: ((w / spec.cell_deg).ceil() as usize).max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell of a coordinate inside the box; points on the far edges fall in the last cell.
    pub fn cell_of(&self, c: &GeoCoordinate) -> Option<usize> {
        if !self.bbox.contains(c) {
            return None;
        }
        let r = (((c.lat - self.bbox.min_lat) / self.cell_deg) as usize).min(self.rows - 1);
        let q = (((c.lon - self.bbox.min_lon) / self.cell_deg) as usize).min(self.cols - 1);
        Some(r * self.cols + q)
    }

    /// Closed polygon ring `[lon, lat]` of a cell.
    pub fn cell_polygon(&self, cell: usize) -> [[f64; 2]; 5] {
        let (r, q) = (cell / self.cols, cell % self.cols);
        let lat0 = self.bbox.min_lat + r as f64 * self.cell_deg;
        let lon0 = self.bbox.min_lon + q as f64 * self.cell_deg;
        let (lat1, lon1) = (lat0 + self.cell_deg, lon0 + self.cell_deg);
        [[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]]
    }

    fn neighbors(&self, cell: usize, queen: bool) -> Vec<usize> {
        let (r, q) = ((cell / self.cols) as isize, (cell % self.cols) as isize);
        let mut out = Vec::with_capacity(8);
        for dr in -1isize..=1 {
            for dq in -1isize..=1 {
                if (dr, dq) == (0, 0) || (!queen && dr != 0 && dq != 0) {
                    continue;
                }
                let (rr, qq) = (r + dr, q + dq);
                if rr >= 0 && qq >= 0 && (rr as usize) < self.rows && (qq as usize) < self.cols {
                    out.push(rr as usize * self.cols + qq as usize);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSurface {
    pub counts: Vec<f64>,
    /// Posts of the topic outside the box (only when clipping).
    pub clipped: usize,
}

/// Per-cell count of posts labeled `topic`.
pub fn bin_topic_counts(
    coords: &[GeoCoordinate],
    labels: &[usize],
    topic: usize,
    grid: &Grid,
    clip: bool,
) -> Result<TopicSurface> {
    if coords.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: coords.len(),
            found: labels.len(),
            context: "assignment length".into(),
        });
    }
    let mut counts = vec![0.0; grid.len()];
    let mut clipped = 0;
    for (c, &l) in coords.iter().zip(labels) {
        match grid.cell_of(c) {
            Some(cell) => {
                if l == topic {
                    counts[cell] += 1.0;
                }
            }
            None if clip => clipped += usize::from(l == topic),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "post at ({}, {}) lies outside the grid box",
                    c.lat, c.lon
                )))
            }
        }
    }
    Ok(TopicSurface { counts, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contiguity {
    Rook,
    Queen,
}

/// Sparse spatial weights, one neighbor list per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SpatialWeights {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let m = rows.len();
        for row in &rows {
            if let Some(&(j, w)) = row.iter().find(|&&(j, w)| j >= m || !(w >= 0.0 && w.is_finite())) {
                return Err(Error::InvalidParameter(format!("invalid weight {w} to unit {j}")));
            }
        }
        Ok(SpatialWeights { rows })
    }

    /// Binary contiguity on the grid, zero diagonal.
    pub fn contiguity(grid: &Grid, kind: Contiguity) -> Self {
        let queen = kind == Contiguity::Queen;
        SpatialWeights {
            rows: (0..grid.len())
                .map(|c| grid.neighbors(c, queen).into_iter().map(|j| (j, 1.0)).collect())
                .collect(),
        }
    }

    /// Binary queen contiguity plus each unit itself, as used by Gi*.
    pub fn self_inclusive(grid: &Grid) -> Self {
        let mut w = Self::contiguity(grid, Contiguity::Queen);
        for (i, row) in w.rows.iter_mut().enumerate() {
            row.push((i, 1.0));
            row.sort_by_key(|&(j, _)| j);
        }
        w
    }

    pub fn row_standardized(&self) -> Self {
        SpatialWeights {
            rows: self
                .rows
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().map(|&(_, w)| w).sum();
                    row.iter()
                        .map(|&(j, w)| (j, if s > 0.0 { w / s } else { 0.0 }))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn s0(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, w)| w).sum()
    }

    fn lag(&self, i: usize, z: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, w)| w * z[j]).sum()
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: values.len(),
                context: "spatial values".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spatial value".into()));
        }
        Ok(())
    }
}

/// Mean-centered values and their sum of squares; errors on a constant field.
fn centered(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if ss <= VARIANCE_EPS || z.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((z, ss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub p: f64,
}

fn moran_statistic(z: &[f64], ss: f64, w: &SpatialWeights, s0: f64) -> f64 {
    let cross: f64 = (0..z.len()).map(|u| z[u] * w.lag(u, z)).sum();
    z.len() as f64 / s0 * cross / ss
}

/// Global Moran's I with a two-sided permutation pseudo p-value.
pub fn morans_i(values: &[f64], w: &SpatialWeights, permutations: usize, seed_value: u64) -> Result<MoranResult> {
    w.check(values)?;
    let (z, ss) = centered(values)?;
    let s0 = w.s0();
    if s0 <= 0.0 {
        return Err(Error::InvalidParameter("weights have no links".into()));
    }
    let observed = moran_statistic(&z, ss, w, s0);
    let mut extreme = 0;
    let mut shuffled = z.clone();
    for r in 0..permutations {
        shuffled.copy_from_slice(&z);
        shuffled.shuffle(&mut seed::rng(seed_value, "moran", r as u64));
        if moran_statistic(&shuffled, ss, w, s0).abs() >= observed.abs() {
            extreme += 1;
        }
    }
    Ok(MoranResult {
        i: observed,
        p: (1 + extreme) as f64 / (1 + permutations) as f64,
    })
}

/// Gi* z-scores with global mean and variance. A constant field has no
/// deviation anywhere, so every z is 0.
pub fn getis_ord_gi_star(values: &[f64], w: &SpatialWeights) -> Result<Vec<f64>> {
    w.check(values)?;
    let m = values.len();
    if m < 3 {
        return Err(Error::InvalidParameter(format!("Gi* needs at least 3 units, got {m}")));
    }
    let n = m as f64;
    let mean = values.iter().sum::<f64>() / n;
    let s = (values.iter().map(|v| v * v).sum::<f64>() / n - mean * mean)
        .max(0.0)
        .sqrt();
    let constant = values.iter().all(|&v| v == values[0]);
    Ok((0..m)
        .map(|i| {
            if constant {
                return 0.0;
            }
            let row = w.row(i);
            let wsum: f64 = row.iter().map(|&(_, x)| x).sum();
            let w2: f64 = row.iter().map(|&(_, x)| x * x).sum();
            let denom = s * ((n * w2 - wsum * wsum) / (n - 1.0)).max(0.0).sqrt();
            if denom <= 0.0 {
                0.0
            } else {
                (w.lag(i, values) - mean * wsum) / denom
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LisaClass {
    #[serde(rename = "HH")]
    HighHigh,
    #[serde(rename = "LL")]
    LowLow,
    #[serde(rename = "HL")]
    HighLow,
    #[serde(rename = "LH")]
    LowHigh,
    #[serde(rename = "not_significant")]
    NotSignificant,
}

impl LisaClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LisaClass::HighHigh => "HH",
            LisaClass::LowLow => "LL",
            LisaClass::HighLow => "HL",
            LisaClass::LowHigh => "LH",
            LisaClass::NotSignificant => "not_significant",
        }
    }

    fn quadrant(z: f64, lag: f64) -> Self {
        match (z > 0.0, z < 0.0, lag > 0.0, lag < 0.0) {
            (true, _, true, _) => LisaClass::HighHigh,
            (_, true, _, true) => LisaClass::LowLow,
            (true, _, _, true) => LisaClass::HighLow,
            (_, true, true, _) => LisaClass::LowHigh,
            _ => LisaClass::NotSignificant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaResult {
    /// Local Moran I_u = (z_u / m₂) Σ_v w_uv z_v with m₂ = Σ z² / m.
    pub local_i: Vec<f64>,
    pub p: Vec<f64>,
    pub z: Vec<f64>,
    pub lag: Vec<f64>,
    pub class: Vec<LisaClass>,
}

/// Local Moran with conditional permutation p-values (unit held fixed, others
/// permuted), one-sided in the direction of the observed statistic.
pub fn lisa(values: &[f64], w: &SpatialWeights, permutations: usize, seed_value: u64) -> Result<LisaResult> {
    w.check(values)?;
    let m = values.len();
    let (z, ss) = centered(values)?;
    let m2 = ss / m as f64;
    let lag: Vec<f64> = (0..m).map(|u| w.lag(u, &z)).collect();
    let local_i: Vec<f64> = (0..m).map(|u| z[u] / m2 * lag[u]).collect();
    let mut p = vec![1.0; m];
    let mut class = vec![LisaClass::NotSignificant; m];
    let mut others: Vec<f64> = Vec::with_capacity(m);
    for u in 0..m {
        let row = w.row(u);
        if row.is_empty() || permutations == 0 {
            continue;
        }
        others.clear();
        others.extend((0..m).filter(|&v| v != u).map(|v| z[v]));
        let k = row.len().min(others.len());
        let mut rng = seed::rng(seed_value, "lisa", u as u64);
        let mut above = 0usize;
        for _ in 0..permutations {
            let (sample, _) = others.partial_shuffle(&mut rng, k);
            let perm_lag: f64 = row.iter().zip(sample.iter()).map(|(&(_, wt), &zv)| wt * zv).sum();
            if z[u] / m2 * perm_lag >= local_i[u] {
                above += 1;
            }
        }
        let tail = above.min(permutations - above);
        p[u] = (1 + tail) as f64 / (1 + permutations) as f64;
        if p[u] < SIGNIFICANCE {
            class[u] = LisaClass::quadrant(z[u], lag[u]);
        }
    }
    Ok(LisaResult {
        local_i,
        p,
        z,
        lag,
        class,
    })
}

/// Spatial statistics for one topic surface. Statistics that need variance
/// are `None` for constant surfaces (e.g. an empty topic).
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSpatial {
    pub topic: usize,
    pub counts: Vec<f64>,
    pub moran: Option<MoranResult>,
    pub gi_z: Vec<f64>,
    pub lisa: Option<LisaResult>,
    pub clipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialConfig {
    pub grid: GridSpec,
    pub permutations: usize,
    pub contiguity: Contiguity,
    pub seed: u64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            grid: GridSpec::default(),
            permutations: DEFAULT_PERMUTATIONS,
            contiguity: Contiguity::Queen,
            seed: 42,
        }
    }
}

pub fn analyze_topics(
    coords: &[GeoCoordinate],
    labels: &[usize],
    n_topics: usize,
    config: &SpatialConfig,
) -> Result<(Grid, Vec<TopicSpatial>)> {
    let grid = Grid::new(&config.grid, coords)?;
    let w = SpatialWeights::contiguity(&grid, config.contiguity).row_standardized();
    let w_star = SpatialWeights::self_inclusive(&grid);
    let topics = (0..n_topics)
        .map(|t| {
            let surface = bin_topic_counts(coords, labels, t, &grid, config.grid.clip)?;
            let topic_seed = seed::derive(config.seed, "spatial-topic", t as u64);
            Ok(TopicSpatial {
                topic: t,
                moran: unless_constant(morans_i(&surface.counts, &w, config.permutations, topic_seed))?,
                gi_z: if grid.len() >= 3 {
                    getis_ord_gi_star(&surface.counts, &w_star)?
                } else {
                    vec![0.0; grid.len()]
                },
                lisa: unless_constant(lisa(&surface.counts, &w, config.permutations, topic_seed))?,
                clipped: surface.clipped,
                counts: surface.counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, topics))
}

/// Maps a zero-variance failure to `None`.
fn unless_constant<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// GeoJSON FeatureCollection of grid cells with {count, gi_z, lisa_class, lisa_p}.
pub fn topic_geojson(grid: &Grid, t: &TopicSpatial) -> serde_json::Value {
    let features: Vec<serde_json::Value> = (0..grid.len())
        .map(|c| {
            let (class, p) = match &t.lisa {
                Some(l) => (l.class[c].as_str(), Some(l.p[c])),
                None => (LisaClass::NotSignificant.as_str(), None),
            };
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [grid.cell_polygon(c)]},
                "properties": {"cell": c, "count": t.counts[c], "gi_z": t.gi_z[c], "lisa_class": class, "lisa_p": p},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "topic": t.topic, "features": features})
}

/// CSV of global Moran's I per topic; blank fields for constant surfaces.
pub fn summary_csv(topics: &[TopicSpatial]) -> String {
    let mut out = String::from("topic,n_posts,morans_i,p_value,hotspots,coldspots,lisa_hh,lisa_ll,lisa_hl,lisa_lh\n");
    for t in topics {
        let count_class = |c: LisaClass| {
            t.lisa
                .as_ref()
                .map_or(0, |l| l.class.iter().filter(|&&x| x == c).count())
        };
        let (i, p) = t
            .moran
            .map_or((String::new(), String::new()), |m| (m.i.to_string(), m.p.to_string()));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            t.topic,
            t.counts.iter().sum::<f64>(),
            i,
            p,
            t.gi_z.iter().filter(|&&z| z >= 1.96).count(),
            t.gi_z.iter().filter(|&&z| z <= -1.96).count(),
            count_class(LisaClass::HighHigh),
            count_class(LisaClass::LowLow),
            count_class(LisaClass::HighLow),
            count_class(LisaClass::LowHigh),
        );
    }
    out
}

pub fn write_reports(dir: &Path, grid: &Grid, topics: &[TopicSpatial]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in topics {
        let path = dir.join(format!("topic_{}.geojson", t.topic));
        let bytes = serde_json::to_vec(&topic_geojson(grid, t))?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("spatial_summary.csv");
    std::fs::write(&path, summary_csv(topics)).map_err(|e| Error::io(&path, e))
}
