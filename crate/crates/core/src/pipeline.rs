//! End-to-end runs (train → cluster → topics → spatial), the no-graph
//! baseline, parameter sweeps, and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{
    cluster_metrics, kmeans, spectral_affinity, spectral_from_affinity, write_assignments_csv, ClusterAssignment,
    ClusterMethod, MetricsReport, SPECTRAL_AFFINITY_K,
};
use crate::corpus::{write_corpus, Corpus, CorpusFormat};
use crate::error::{Error, Result};
use crate::gnn::checkpoint::save_checkpoint;
use crate::spatial::{analyze_topics, write_reports, SpatialConfig};
use crate::topics::{evaluate_topics, write_json, QualityReport, DEFAULT_KEYWORDS};
use crate::trainer::{train, TrainConfig, TrainOutput};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub k: usize,
    pub affinity_k: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            method: ClusterMethod::Spectral,
            k: 10,
            affinity_k: SPECTRAL_AFFINITY_K,
        }
    }
}

pub fn cluster(z: &Array2<f64>, config: &ClusterConfig, seed: u64) -> Result<ClusterAssignment> {
    match config.method {
        ClusterMethod::Kmeans => kmeans(z, config.k, seed),
        ClusterMethod::Spectral => spectral_from_affinity(&spectral_affinity(z, config.affinity_k)?, config.k, seed),
    }
}

/// Full run configuration. `seed` overrides the seeds of every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub k_kw: usize,
    pub spatial: SpatialConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            k_kw: DEFAULT_KEYWORDS,
            spatial: SpatialConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.spatial.seed = c.seed;
        c
    }

    /// Loads a TOML or JSON config, or the config embedded in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            return toml::from_str(&text).map_err(|e| Error::MalformedFile {
                format: "config",
                message: format!("{}: {e}", path.display()),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("manifest_version").is_some() {
            let manifest: RunManifest = serde_json::from_value(value)?;
            return Ok(manifest.config);
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Sets one named parameter from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse {v:?} for {key}")))
        }
        fn named<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T> {
            serde_json::from_value(serde_json::Value::String(v.to_string()))
                .map_err(|_| Error::InvalidParameter(format!("unknown value {v:?} for {key}")))
        }
        let t = &mut self.train;
        match key {
            "alpha" => t.loss.alpha = num(key, value)?,
            "beta" => t.loss.beta = num(key, value)?,
            "gamma" => t.loss.gamma = num(key, value)?,
            "lambda" => t.loss.lambda_coh = num(key, value)?,
            "tau" => t.loss.tau = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "k_graph" => t.k_graph = num(key, value)?,
            "k_means" => t.k_means = num(key, value)?,
            "stride" => t.stride = num(key, value)?,
            "halo" => t.halo = num(key, value)?,
            "hidden_dim" => t.hidden_dim = num(key, value)?,
            "output_dim" => t.output_dim = num(key, value)?,
            "heads" => t.heads = num(key, value)?,
            "dropout" => t.dropout = num(key, value)?,
            "patience" => t.patience = num(key, value)?,
            "min_delta" => t.min_delta = num(key, value)?,
            "holdout_fraction" => t.holdout_fraction = num(key, value)?,
            "arch" => t.arch = named(key, value)?,
            "fusion" => t.fusion = named(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "k" => self.cluster.k = num(key, value)?,
            "affinity_k" => self.cluster.affinity_k = num(key, value)?,
            "method" => self.cluster.method = named(key, value)?,
            "k_kw" => self.k_kw = num(key, value)?,
            "cell_deg" => self.spatial.grid.cell_deg = num(key, value)?,
            "permutations" => self.spatial.permutations = num(key, value)?,
            "contiguity" => self.spatial.contiguity = named(key, value)?,
            "clip" => self.spatial.grid.clip = num(key, value)?,
            other => return Err(Error::InvalidParameter(format!("unknown parameter {other:?}"))),
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: Option<String>,
    pub sha256: Option<String>,
    pub n: usize,
    pub d: usize,
    pub has_text: bool,
}

impl InputRecord {
    pub fn describe(corpus: &Corpus, path: Option<&Path>) -> Result<Self> {
        let sha256 = match path {
            Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        Ok(InputRecord {
            path: path.map(|p| p.display().to_string()),
            sha256,
            n: corpus.len(),
            d: corpus.dim(),
            has_text: corpus.has_text(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    pub tc: Option<f64>,
    pub td: Option<f64>,
    pub tq: Option<f64>,
    pub epochs_run: Option<usize>,
    /// Epoch whose parameters were kept.
    #[serde(default)]
    pub best_epoch: Option<usize>,
    pub early_stopped: Option<bool>,
    /// Holdout intra − inter of the kept parameters.
    pub holdout: Option<f64>,
}

/// Record of one run: what was asked, what was read, what was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub input: InputRecord,
    /// Output path relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub metrics: RunMetrics,
    pub notices: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig, input: InputRecord) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            input,
            outputs: BTreeMap::new(),
            metrics: RunMetrics::default(),
            notices: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(self, &path)?;
        Ok(path)
    }
}

/// Output directory that records the hash of everything written into it.
pub struct RunDir {
    root: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn record_dir(&mut self, rel: &str) -> Result<()> {
        let dir = self.path(rel);
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
            .collect();
        names.sort();
        for name in names {
            self.record(&format!("{rel}/{name}"))?;
        }
        Ok(())
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }
}

/// Which stages a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Pipeline,
    /// Clustering and evaluation on the input embeddings, no graph model.
    Baseline,
}

impl RunKind {
    fn name(self) -> &'static str {
        match self {
            RunKind::Pipeline => "pipeline",
            RunKind::Baseline => "baseline",
        }
    }
}

/// Writes history, checkpoint and learned embeddings into `dir` and records them.
pub fn write_training_outputs(
    out: &TrainOutput,
    corpus: &Corpus,
    dir: &mut RunDir,
    manifest: &mut RunManifest,
) -> Result<()> {
    out.history.write_jsonl(&dir.path("history.jsonl"))?;
    write_json(&out.history, &dir.path("train_history.json"))?;
    save_checkpoint(&out.encoder, &dir.path("model.ckpt"))?;
    let learned = corpus.with_embeddings(out.embeddings.mapv(|v| v as f32))?;
    write_corpus(&learned, &dir.path("embeddings.embd"), CorpusFormat::Embd)?;
    for rel in ["history.jsonl", "train_history.json", "model.ckpt", "embeddings.embd"] {
        dir.record(rel)?;
    }
    manifest.metrics.epochs_run = Some(out.history.stop_epoch);
    manifest.metrics.best_epoch = Some(out.history.best_epoch);
    manifest.metrics.early_stopped = Some(out.history.early_stopped);
    manifest.metrics.holdout = out.history.final_score();
    Ok(())
}

pub const NO_TEXT_NOTICE: &str = "corpus has no text; topics and tq stages skipped";

/// Runs every stage and writes its artifacts plus `manifest.json` into `out_dir`.
pub fn run(
    kind: RunKind,
    corpus: &Corpus,
    input: Option<&Path>,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    let started = Instant::now();
    let config = config.resolved();
    let mut manifest = RunManifest::new(kind.name(), &config, InputRecord::describe(corpus, input)?);
    let mut dir = RunDir::create(out_dir)?;

    let z = match kind {
        RunKind::Baseline => corpus.features(),
        RunKind::Pipeline => {
            let out = train(corpus, &config.train).map_err(|e| e.in_stage("train"))?;
            write_training_outputs(&out, corpus, &mut dir, &mut manifest)?;
            out.embeddings
        }
    };

    let assignment = cluster(&z, &config.cluster, config.seed).map_err(|e| e.in_stage("cluster"))?;
    write_assignments_csv(&dir.path("assignments.csv"), corpus.ids(), &assignment.labels)?;
    dir.record("assignments.csv")?;
    match cluster_metrics(&z, &assignment.labels) {
        Ok(m) => {
            write_json(
                &MetricsReport {
                    inter: m.inter,
                    intra: m.intra,
                    k: assignment.k,
                    method: assignment.method,
                    seed: config.seed,
                },
                &dir.path("metrics.json"),
            )?;
            dir.record("metrics.json")?;
            manifest.metrics.intra = Some(m.intra);
            manifest.metrics.inter = Some(m.inter);
        }
        Err(e) => manifest.notices.push(format!("cluster metrics undefined: {e}")),
    }

    if corpus.has_text() {
        let report =
            evaluate_topics(corpus, &assignment.labels, assignment.k, config.k_kw).map_err(|e| e.in_stage("topics"))?;
        write_json(&report, &dir.path("topics.json"))?;
        write_json(&report.corpus, &dir.path("tq.json"))?;
        dir.record("topics.json")?;
        dir.record("tq.json")?;
        let QualityReport { tc, td, tq, .. } = report.corpus;
        manifest.metrics.tc = Some(tc);
        manifest.metrics.td = Some(td);
        manifest.metrics.tq = Some(tq);
    } else {
        manifest.notices.push(NO_TEXT_NOTICE.to_string());
    }

    let (grid, spatial) = analyze_topics(corpus.coords(), &assignment.labels, assignment.k, &config.spatial)
        .map_err(|e| e.in_stage("spatial"))?;
    write_reports(&dir.path("spatial"), &grid, &spatial)?;
    dir.record_dir("spatial")?;

    manifest.outputs = dir.outputs().clone();
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// One swept parameter and its values, parsed from `name=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (param, values) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("sweep axis {s:?} must look like name=v1,v2")))?;
        let values: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if param.trim().is_empty() || values.is_empty() {
            return Err(Error::InvalidParameter(format!("sweep axis {s:?} has no values")));
        }
        Ok(SweepAxis {
            param: param.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// Half-width of the normal-approximation 95% interval, 1.96·std/√n.
    pub ci95: f64,
}

pub fn summary_stats(values: &[f64]) -> Option<SummaryStats> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(SummaryStats {
        n,
        mean,
        std,
        ci95: 1.96 * std / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub param: String,
    pub value: String,
    pub dir: String,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
    pub tq: Option<SummaryStats>,
    pub intra: Option<SummaryStats>,
    pub inter: Option<SummaryStats>,
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("param,value,tq,tc,td,intra,inter\n");
        for c in &self.cells {
            let m = &c.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.param,
                c.value,
                opt(m.tq),
                opt(m.tc),
                opt(m.td),
                opt(m.intra),
                opt(m.inter)
            );
        }
        let rows: [(&str, fn(&SummaryStats) -> f64); 3] =
            [("mean", |s| s.mean), ("std", |s| s.std), ("ci95", |s| s.ci95)];
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{name},,{},,,{},{}",
                opt(self.tq.as_ref().map(s)),
                opt(self.intra.as_ref().map(s)),
                opt(self.inter.as_ref().map(s))
            );
        }
        out
    }
}

/// One full pipeline run per (axis, value), each varying a single parameter
/// from `base`, with mean/STD/95% CI over all cells.
pub fn sweep(
    corpus: &Corpus,
    input: Option<&Path>,
    base: &PipelineConfig,
    axes: &[SweepAxis],
    out_dir: &Path,
) -> Result<SweepSummary> {
    let mut cells = Vec::new();
    for axis in axes {
        for value in &axis.values {
            let mut config = base.clone();
            config.set(&axis.param, value)?;
            let rel = format!("cells/{}={}", axis.param, value);
            let manifest = run(RunKind::Pipeline, corpus, input, &config, &out_dir.join(&rel))?;
            cells.push(SweepCell {
                param: axis.param.clone(),
                value: value.clone(),
                dir: rel,
                metrics: manifest.metrics,
            });
        }
    }
    let collect = |f: fn(&RunMetrics) -> Option<f64>| {
        summary_stats(&cells.iter().filter_map(|c| f(&c.metrics)).collect::<Vec<_>>())
    };
    let summary = SweepSummary {
        tq: collect(|m| m.tq),
        intra: collect(|m| m.intra),
        inter: collect(|m| m.inter),
        cells,
    };
    write_json(&summary, &out_dir.join("sweep_summary.json"))?;
    let csv = out_dir.join("sweep_summary.csv");
    std::fs::write(&csv, summary.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(summary)
}
