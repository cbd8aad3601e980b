//! Epoch loop: per-epoch K-means pseudo-labels on full-corpus embeddings, then
//! sequential chunks of forward, loss, backward, and an Adam step, with early
//! stopping on the holdout (intra − inter) score.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering::kmeans;
use crate::corpus::{stride_chunks, Corpus};
use crate::error::{Error, Result};
use crate::gnn::{Activation, Arch, DropoutMasks, Encoder, EncoderConfig, Fusion, GraphOperators, Mode, Params};
use crate::graph::{
    cosine_knn, geographic_knn_graph, mono_hetero_graph, normalize_adjacency, semantic_knn_graph, WeightedGraph,
};
use crate::losses::{inter_cluster_similarity, intra_cluster_similarity, total_loss_grad, LossBreakdown, LossWeights};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub fusion: Fusion,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub output_activation: Activation,
    pub heads: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub loss: LossWeights,
    pub k_graph: usize,
    pub k_means: usize,
    pub seed: u64,
    pub stride: usize,
    /// Out-of-chunk semantic neighbors added per core node when building chunk graphs.
    pub halo: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Fraction of nodes excluded from the loss and used for early stopping.
    pub holdout_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        TrainConfig {
            arch: Arch::Mono,
            fusion: Fusion::Attention,
            hidden_dim: enc.hidden_dim,
            output_dim: enc.output_dim,
            output_activation: enc.output_activation,
            heads: enc.heads,
            dropout: enc.dropout,
            epochs: 50,
            lr: 1e-3,
            loss: LossWeights::default(),
            k_graph: 10,
            k_means: 15,
            seed: 42,
            stride: 1,
            halo: 0,
            patience: 5,
            min_delta: 1e-4,
            holdout_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            arch: self.arch,
            input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            output_activation: self.output_activation,
            heads: self.heads,
            dropout: self.dropout,
            fusion: self.fusion,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.k_graph == 0 || self.k_means == 0 || self.stride == 0 || self.patience == 0 {
            return bad("k_graph, k_means, stride, and patience must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.k_means > n {
            return bad(format!("k_means = {} exceeds the corpus size {n}", self.k_means));
        }
        if self.stride > n {
            return bad(format!("stride {} exceeds the corpus size {n}", self.stride));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    let g_tensors = grads.tensors();
    if g_tensors.len() != params.tensors().len() {
        return Err(Error::TraceMismatch("gradient and parameter sets differ".into()));
    }
    for ((name, g), (_, p)) in g_tensors.iter().zip(params.tensors()) {
        if g.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: g.len(),
                context: format!("gradient shape for {name}"),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for ((((p, (_, g)), m), v), _) in params
        .tensors_mut()
        .into_iter()
        .zip(g_tensors)
        .zip(m_all)
        .zip(v_all)
        .zip(&names)
    {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
    }
    Ok(())
}

/// Loss components of one chunk step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub epoch: usize,
    pub chunk: usize,
    pub contrast: Option<f64>,
    pub coherence: Option<f64>,
    pub align: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub chunks: Vec<ChunkRecord>,
    pub holdout: HoldoutScore,
    /// Loss anchors with no in-chunk positive, summed over chunks.
    pub skipped_anchors: usize,
}

/// Intra/inter on holdout nodes under the current pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutScore {
    pub intra: Option<f64>,
    pub inter: Option<f64>,
}

impl HoldoutScore {
    pub fn score(&self) -> Option<f64> {
        Some(self.intra? - self.inter?)
    }
}

/// Deterministic record of a run; wall time is kept separately in [`TrainTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial: HoldoutScore,
    pub epochs: Vec<EpochRecord>,
    /// Last epoch run (0 when no epoch ran).
    pub stop_epoch: usize,
    /// Epoch whose parameters are returned: the best holdout score, or the
    /// last epoch when there is no holdout. 0 means the initial parameters.
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub holdout_size: usize,
}

impl TrainHistory {
    /// Holdout score of the returned parameters.
    pub fn final_score(&self) -> Option<f64> {
        match self.best_epoch {
            0 => self.initial.score(),
            e => self.epochs[e - 1].holdout.score(),
        }
    }

    pub fn chunk_records(&self) -> impl Iterator<Item = &ChunkRecord> {
        self.epochs.iter().flat_map(|e| e.chunks.iter())
    }

    /// One JSON object per chunk step: `{epoch, chunk, contrast, coherence, align, total}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in self.chunk_records() {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTiming {
    pub total: Duration,
    pub per_epoch: Vec<Duration>,
}

pub struct TrainOutput {
    pub encoder: Encoder,
    /// Eval-mode embeddings for every node.
    pub embeddings: Array2<f64>,
    pub history: TrainHistory,
    pub timing: TrainTiming,
    /// Holdout membership per node.
    pub holdout: Vec<bool>,
}

/// Graph operators and loss bookkeeping for one chunk.
struct ChunkData {
    /// Global node index of each local row (core nodes first, then halo).
    nodes: Vec<usize>,
    ops: GraphOperators,
    features: Array2<f64>,
    /// Local rows that enter the loss (training core nodes).
    loss_rows: Vec<usize>,
    /// Positive pairs in loss-row coordinates.
    positives: Vec<(usize, usize)>,
    skipped_anchors: usize,
}

/// Normalized operators for a corpus under the given architecture, plus the
/// semantic graph used for contrastive positives.
pub fn build_operators(corpus: &Corpus, arch: Arch, k: usize) -> Result<(GraphOperators, WeightedGraph)> {
    let k = k.min(corpus.len().saturating_sub(1)).max(1);
    if corpus.len() < 2 {
        return Err(Error::InvalidParameter(
            "graph construction needs at least 2 nodes".into(),
        ));
    }
    match arch {
        Arch::Mono => {
            let g = mono_hetero_graph(corpus, k)?;
            let ops = GraphOperators {
                semantic: normalize_adjacency(&g.semantic)?,
                geographic: normalize_adjacency(&g.geographic)?,
            };
            Ok((ops, g.semantic))
        }
        Arch::Multi => {
            let s = semantic_knn_graph(corpus, k)?;
            let g = geographic_knn_graph(corpus, k)?;
            let ops = GraphOperators {
                semantic: normalize_adjacency(&s)?,
                geographic: normalize_adjacency(&g)?,
            };
            Ok((ops, s))
        }
    }
}

fn holdout_mask(n: usize, fraction: f64, seed_value: u64) -> Vec<bool> {
    let count = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value, "holdout", 0));
    let mut mask = vec![false; n];
    for &i in order.iter().take(count) {
        mask[i] = true;
    }
    mask
}

fn halo_nodes(features: &Array2<f64>, core: &[usize], halo: usize, ids: &[String]) -> Result<Vec<usize>> {
    if halo == 0 || core.len() == features.nrows() {
        return Ok(Vec::new());
    }
    let in_core: BTreeSet<usize> = core.iter().copied().collect();
    // Enough neighbors that `halo` of them fall outside the chunk.
    let k = (halo + core.len()).min(features.nrows() - 1);
    let nb = cosine_knn(features, k, Some(ids))?;
    let mut extra = BTreeSet::new();
    for &i in core {
        extra.extend(nb[i].iter().copied().filter(|j| !in_core.contains(j)).take(halo));
    }
    Ok(extra.into_iter().collect())
}

fn build_chunk(
    corpus: &Corpus,
    features: &Array2<f64>,
    core: &[usize],
    holdout: &[bool],
    config: &TrainConfig,
    full: Option<(&GraphOperators, &WeightedGraph)>,
) -> Result<ChunkData> {
    let halo = halo_nodes(features, core, config.halo, corpus.ids())?;
    let mut nodes = core.to_vec();
    nodes.extend(&halo);
    let (ops, semantic) = match full {
        Some((ops, g)) if nodes.len() == corpus.len() && nodes.iter().enumerate().all(|(a, &b)| a == b) => {
            (ops.clone(), g.clone())
        }
        _ => build_operators(&corpus.select(&nodes)?, config.arch, config.k_graph)?,
    };
    let loss_rows: Vec<usize> = (0..core.len()).filter(|&r| !holdout[nodes[r]]).collect();
    let mut position = vec![usize::MAX; nodes.len()];
    for (p, &r) in loss_rows.iter().enumerate() {
        position[r] = p;
    }
    let neighbors = semantic.neighbors();
    let mut positives = Vec::new();
    let mut skipped_anchors = 0;
    for &r in &loss_rows {
        let before = positives.len();
        for &j in &neighbors[r] {
            if position[j] != usize::MAX {
                positives.push((position[r], position[j]));
            }
        }
        if positives.len() == before {
            skipped_anchors += 1;
        }
    }
    Ok(ChunkData {
        features: features.select(Axis(0), &nodes),
        nodes,
        ops,
        loss_rows,
        positives,
        skipped_anchors,
    })
}

fn holdout_score(z: &Array2<f64>, labels: &[usize], holdout: &[bool]) -> HoldoutScore {
    let rows: Vec<usize> = (0..z.nrows()).filter(|&i| holdout[i]).collect();
    if rows.is_empty() {
        return HoldoutScore {
            intra: None,
            inter: None,
        };
    }
    let sub = z.select(Axis(0), &rows);
    let l: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    HoldoutScore {
        intra: intra_cluster_similarity(&sub, &l).ok(),
        inter: inter_cluster_similarity(&sub, &l).ok(),
    }
}

fn divergence(epoch: usize, chunk: usize, message: impl Into<String>) -> Error {
    Error::Divergence {
        epoch,
        chunk,
        message: message.into(),
    }
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutput> {
    let started = Instant::now();
    let n = corpus.len();
    config.validate(n)?;
    let features = corpus.features();
    let mut encoder = Encoder::init(
        config.encoder_config(corpus.dim()),
        seed::derive(config.seed, "encoder", 0),
    )?;
    let holdout = holdout_mask(n, config.holdout_fraction, config.seed);
    let (full_ops, full_semantic) = build_operators(corpus, config.arch, config.k_graph)?;
    let plan = stride_chunks(n, config.stride)?;
    let chunks = plan
        .chunks
        .iter()
        .map(|core| {
            build_chunk(
                corpus,
                &features,
                core,
                &holdout,
                config,
                Some((&full_ops, &full_semantic)),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let kmeans_seed = config.seed;
    let mut z = encoder.embed(&full_ops, &features)?;
    let mut labels = kmeans(&z, config.k_means, kmeans_seed)?.labels;
    let initial = holdout_score(&z, &labels, &holdout);
    let mut history = TrainHistory {
        initial,
        epochs: Vec::new(),
        stop_epoch: 0,
        best_epoch: 0,
        early_stopped: false,
        holdout_size: holdout.iter().filter(|&&h| h).count(),
    };
    let mut per_epoch = Vec::new();
    let mut adam = AdamState::new(&encoder.params);
    let mut best = initial.score();
    let mut best_state = (encoder.clone(), z.clone());
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let mut records = Vec::with_capacity(chunks.len());
        let mut skipped = 0;
        for (c, chunk) in chunks.iter().enumerate() {
            skipped += chunk.skipped_anchors;
            if chunk.loss_rows.is_empty() {
                continue;
            }
            let masks = DropoutMasks::sample(
                chunk.nodes.len(),
                config.hidden_dim,
                if config.arch == Arch::Multi {
                    config.dropout
                } else {
                    0.0
                },
                &mut seed::rng(config.seed, "dropout", ((epoch as u64) << 32) | c as u64),
            );
            let (z_chunk, trace) = encoder.forward(&chunk.ops, &chunk.features, Mode::Train(&masks))?;
            let z_loss = z_chunk.select(Axis(0), &chunk.loss_rows);
            let chunk_labels: Vec<usize> = chunk.loss_rows.iter().map(|&r| labels[chunk.nodes[r]]).collect();
            let (breakdown, d_loss): (LossBreakdown, Array2<f64>) =
                total_loss_grad(&z_loss, &chunk_labels, &chunk.positives, &config.loss)
                    .map_err(|e| divergence(epoch, c, e.to_string()))?;
            if !breakdown.total.is_finite() {
                return Err(divergence(epoch, c, format!("non-finite loss {}", breakdown.total)));
            }
            let mut d_z = Array2::zeros(z_chunk.raw_dim());
            for (p, &r) in chunk.loss_rows.iter().enumerate() {
                d_z.row_mut(r).assign(&d_loss.row(p));
            }
            let grads = encoder.backward(&chunk.ops, &trace, &d_z)?;
            adam_step(&mut encoder.params, &grads, &mut adam, config.lr, &config.adam).map_err(|e| match e {
                Error::NonFiniteGradient(t) => divergence(epoch, c, format!("non-finite gradient in {t}")),
                other => other,
            })?;
            records.push(ChunkRecord {
                epoch,
                chunk: c,
                contrast: breakdown.contrast,
                coherence: breakdown.coherence,
                align: breakdown.align,
                total: breakdown.total,
            });
        }
        z = encoder.embed(&full_ops, &features)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(divergence(epoch, chunks.len(), "non-finite embeddings"));
        }
        labels = kmeans(&z, config.k_means, kmeans_seed)?.labels;
        let score = holdout_score(&z, &labels, &holdout);
        history.epochs.push(EpochRecord {
            epoch,
            chunks: records,
            holdout: score,
            skipped_anchors: skipped,
        });
        history.stop_epoch = epoch;
        per_epoch.push(epoch_start.elapsed());
        if history.holdout_size == 0 {
            history.best_epoch = epoch;
            best_state = (encoder.clone(), z.clone());
            continue;
        }
        if let Some(s) = score.score() {
            if best.is_none_or(|b| s >= b + config.min_delta) {
                best = Some(s);
                history.best_epoch = epoch;
                best_state = (encoder.clone(), z.clone());
                stale = 0;
                continue;
            }
        }
        stale += 1;
        if stale >= config.patience {
            history.early_stopped = true;
            break;
        }
    }

    let (encoder, embeddings) = best_state;
    Ok(TrainOutput {
        encoder,
        embeddings,
        history,
        timing: TrainTiming {
            total: started.elapsed(),
            per_epoch,
        },
        holdout,
    })
}

/// Eval-mode embeddings of a corpus under a trained encoder.
pub fn embed_corpus(encoder: &Encoder, corpus: &Corpus, k_graph: usize) -> Result<Array2<f64>> {
    let (ops, _) = build_operators(corpus, encoder.config.arch, k_graph)?;
    encoder.embed(&ops, &corpus.features())
}
