use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use geotopic_core::pipeline::{PipelineConfig, SweepAxis};
use geotopic_core::CorpusFormat;

#[derive(Debug, Parser)]
#[command(name = "geotopic", version, about = "Geo-semantic topic discovery over kNN graphs")]
pub struct Cli {
    /// Run seed; every subsystem seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON config, or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted topics and spatial blobs.
    Synth(SynthArgs),
    /// Build and cache the semantic and geographic kNN graphs.
    BuildGraph(BuildGraphArgs),
    /// Train an encoder; writes checkpoint, embeddings and loss history.
    Train(RunArgs),
    /// Cluster the embeddings of a corpus.
    Cluster(RunArgs),
    /// Extract keywords per cluster and score them.
    Topics(EvalArgs),
    /// Topic quality (TC, TD, TQ) of a clustering.
    Tq(EvalArgs),
    /// Moran's I, Gi* and LISA per cluster over a regular grid.
    Spatial(EvalArgs),
    /// Train, cluster, extract topics, score and run spatial statistics.
    Pipeline(PipelineArgs),
    /// The pipeline on raw input embeddings, without a graph encoder.
    Baseline(RunArgs),
    /// Run the pipeline once per value of each swept parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Corpus format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Omit post texts.
    #[arg(long)]
    pub no_text: bool,
    #[arg(long, default_value = "embd")]
    pub format: CorpusFormat,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// `id,cluster` CSV as written by `cluster` or `pipeline`.
    #[arg(long)]
    pub assignments: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Sweep a parameter, e.g. `alpha=0.2,0.5,0.8`; repeatable.
    #[arg(long = "sweep")]
    pub sweep: Vec<SweepAxis>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Swept parameter, e.g. `alpha=0.2,0.5,0.8`; repeatable.
    #[arg(long = "sweep", required = true)]
    pub sweep: Vec<SweepAxis>,
}

/// Per-parameter overrides applied on top of the config file.
#[derive(Debug, Default, Args)]
pub struct ParamArgs {
    #[arg(long, value_parser = ["mono", "multi"])]
    pub arch: Option<String>,
    #[arg(long, value_parser = ["attention", "concat", "concat_mlp"])]
    pub fusion: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub k_graph: Option<usize>,
    #[arg(long)]
    pub k_means: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub halo: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = ["spectral", "kmeans"])]
    pub method: Option<String>,
    #[arg(long)]
    pub k_kw: Option<usize>,
    #[arg(long)]
    pub cell_deg: Option<f64>,
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Any other parameter as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ParamArgs {
    pub fn apply(&self, config: &mut PipelineConfig) -> geotopic_core::Result<()> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(T::to_string)
        }
        let flags = [
            ("arch", s(&self.arch)),
            ("fusion", s(&self.fusion)),
            ("alpha", s(&self.alpha)),
            ("beta", s(&self.beta)),
            ("gamma", s(&self.gamma)),
            ("lambda", s(&self.lambda)),
            ("tau", s(&self.tau)),
            ("lr", s(&self.lr)),
            ("epochs", s(&self.epochs)),
            ("k_graph", s(&self.k_graph)),
            ("k_means", s(&self.k_means)),
            ("stride", s(&self.stride)),
            ("halo", s(&self.halo)),
            ("hidden_dim", s(&self.hidden_dim)),
            ("output_dim", s(&self.output_dim)),
            ("heads", s(&self.heads)),
            ("dropout", s(&self.dropout)),
            ("patience", s(&self.patience)),
            ("k", s(&self.k)),
            ("method", s(&self.method)),
            ("k_kw", s(&self.k_kw)),
            ("cell_deg", s(&self.cell_deg)),
            ("permutations", s(&self.permutations)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| geotopic_core::Error::InvalidParameter(format!("expected KEY=VALUE, got {kv:?}")))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
