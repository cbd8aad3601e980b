//! `geotopic`: subcommand front end over geotopic-core.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Parser;
use geotopic_core::clustering::{
    align_assignments, cluster_metrics, read_assignments_csv, write_assignments_csv, MetricsReport,
};
use geotopic_core::graph::GraphCache;
use geotopic_core::pipeline::{
    cluster, run, sweep, write_training_outputs, InputRecord, PipelineConfig, RunDir, RunKind, RunManifest, SweepAxis,
};
use geotopic_core::spatial::{analyze_topics, write_reports};
use geotopic_core::synthetic::{generate, write_labels_csv, SynthSpec};
use geotopic_core::topics::{evaluate_topics, write_json};
use geotopic_core::{load_corpus, train, write_corpus, Corpus, CorpusFormat, Error};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an
/// error: every artifact is already on disk when a summary line is printed.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

use args::{BuildGraphArgs, Cli, Command, EvalArgs, InputArgs, ParamArgs, RunArgs, SynthArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input or usage, 1 for internal failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if !err.is_input_error() => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone();
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, a, &out),
        Command::BuildGraph(a) => cmd_build_graph(&cli, a, &out),
        Command::Train(a) => cmd_train(&cli, a, &out),
        Command::Cluster(a) => cmd_cluster(&cli, a, &out),
        Command::Topics(a) => cmd_topics(&cli, a, &out, false),
        Command::Tq(a) => cmd_topics(&cli, a, &out, true),
        Command::Spatial(a) => cmd_spatial(&cli, a, &out),
        Command::Pipeline(a) if !a.sweep.is_empty() => cmd_sweep(&cli, &a.run, &a.sweep, &out),
        Command::Pipeline(a) => cmd_run(&cli, &a.run, RunKind::Pipeline, &out),
        Command::Baseline(a) => cmd_run(&cli, a, RunKind::Baseline, &out),
        Command::Sweep(a) => cmd_sweep(&cli, &a.run, &a.sweep, &out),
    }
}

/// Defaults, then `--config`, then per-parameter flags, then `--seed`.
fn load_config(cli: &Cli, params: &ParamArgs) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    params.apply(&mut config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config.resolved())
}

fn load_input(input: &InputArgs) -> Result<Corpus> {
    let format = match input.format {
        Some(f) => f,
        None => CorpusFormat::from_path(&input.input).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "cannot infer corpus format of {}; pass --format jsonl|embd",
                input.input.display()
            ))
        })?,
    };
    Ok(load_corpus(&input.input, format)?)
}

fn report(manifest: &RunManifest, out: &Path) {
    for notice in &manifest.notices {
        eprintln!("notice: {notice}");
    }
    let m = &manifest.metrics;
    let mut line = Vec::new();
    for (name, value) in [
        ("intra", m.intra),
        ("inter", m.inter),
        ("tc", m.tc),
        ("td", m.td),
        ("tq", m.tq),
        ("holdout", m.holdout),
    ] {
        if let Some(v) = value {
            line.push(format!("{name}={v:.4}"));
        }
    }
    if let Some(e) = m.epochs_run {
        line.push(format!("epochs={e}"));
    }
    if let Some(e) = m.best_epoch {
        line.push(format!("best_epoch={e}"));
    }
    if !line.is_empty() {
        say!("{}", line.join(" "));
    }
    say!("manifest: {}", out.join("manifest.json").display());
}

fn finish(mut manifest: RunManifest, dir: &RunDir, out: &Path, started: Instant) -> Result<()> {
    manifest.outputs = dir.outputs().clone();
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    report(&manifest, out);
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, out: &Path) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => SynthSpec::standard(),
    };
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.dim {
        spec.d = v;
    }
    if let Some(v) = a.topics {
        spec.topics = v;
    }
    if let Some(v) = a.rho {
        spec.rho = v;
    }
    if let Some(v) = a.sigma {
        spec.semantic_sigma = v;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (mut corpus, labels) = generate(&spec)?;
    if a.no_text {
        corpus = Corpus::from_parts(
            corpus.ids().to_vec(),
            corpus.embeddings().clone(),
            corpus.coords().to_vec(),
            vec![None; corpus.len()],
        )?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let ext = match a.format {
        CorpusFormat::Embd => "embd",
        CorpusFormat::Jsonl => "jsonl",
    };
    let path = out.join(format!("corpus.{ext}"));
    write_corpus(&corpus, &path, a.format)?;
    write_labels_csv(&out.join("labels.csv"), corpus.ids(), &labels)?;
    write_json(&spec, &out.join("synth_spec.json"))?;
    say!("wrote {} posts to {}", corpus.len(), path.display());
    Ok(())
}

fn cmd_build_graph(cli: &Cli, a: &BuildGraphArgs, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut config = load_config(cli, &ParamArgs::default())?;
    if let Some(k) = a.k {
        config.set("k_graph", &k.to_string())?;
    }
    let corpus = load_input(&a.input)?;
    let k = config.train.k_graph;
    let cache = GraphCache::build(&corpus, k).map_err(|e| e.in_stage("build-graph"))?;
    let mut dir = RunDir::create(out)?;
    cache.write(&dir.path("graph.bin"))?;
    dir.record("graph.bin")?;
    let manifest = RunManifest::new(
        "build-graph",
        &config,
        InputRecord::describe(&corpus, Some(&a.input.input))?,
    );
    for (relation, g) in &cache.relations {
        eprintln!("{relation:?}: {} directed edges", g.edges.len());
    }
    finish(manifest, &dir, out, started)
}

fn cmd_train(cli: &Cli, a: &RunArgs, out: &Path) -> Result<()> {
    let started = Instant::now();
    let config = load_config(cli, &a.params)?;
    let corpus = load_input(&a.input)?;
    let mut manifest = RunManifest::new("train", &config, InputRecord::describe(&corpus, Some(&a.input.input))?);
    let mut dir = RunDir::create(out)?;
    let output = train(&corpus, &config.train).map_err(|e| e.in_stage("train"))?;
    write_training_outputs(&output, &corpus, &mut dir, &mut manifest)?;
    finish(manifest, &dir, out, started)
}

fn cmd_cluster(cli: &Cli, a: &RunArgs, out: &Path) -> Result<()> {
    let started = Instant::now();
    let config = load_config(cli, &a.params)?;
    let corpus = load_input(&a.input)?;
    let mut manifest = RunManifest::new(
        "cluster",
        &config,
        InputRecord::describe(&corpus, Some(&a.input.input))?,
    );
    let mut dir = RunDir::create(out)?;
    let z = corpus.features();
    let assignment = cluster(&z, &config.cluster, config.seed).map_err(|e| e.in_stage("cluster"))?;
    write_assignments_csv(&dir.path("assignments.csv"), corpus.ids(), &assignment.labels)?;
    dir.record("assignments.csv")?;
    match cluster_metrics(&z, &assignment.labels) {
        Ok(m) => {
            let metrics = MetricsReport {
                inter: m.inter,
                intra: m.intra,
                k: assignment.k,
                method: assignment.method,
                seed: config.seed,
            };
            write_json(&metrics, &dir.path("metrics.json"))?;
            dir.record("metrics.json")?;
            manifest.metrics.intra = Some(m.intra);
            manifest.metrics.inter = Some(m.inter);
        }
        Err(e) => manifest.notices.push(format!("cluster metrics undefined: {e}")),
    }
    if !assignment.empty_clusters.is_empty() {
        manifest
            .notices
            .push(format!("empty clusters: {:?}", assignment.empty_clusters));
    }
    finish(manifest, &dir, out, started)
}

/// Corpus plus labels aligned to it, and the number of clusters to report.
fn load_labeled(cli: &Cli, a: &EvalArgs) -> Result<(PipelineConfig, Corpus, Vec<usize>, usize)> {
    let config = load_config(cli, &a.params)?;
    let corpus = load_input(&a.input)?;
    let rows = read_assignments_csv(&a.assignments)?;
    let labels = align_assignments(corpus.ids(), &rows)?;
    let observed = labels.iter().max().map_or(0, |m| m + 1);
    let k = match a.params.k {
        Some(k) if k < observed => bail!(Error::InvalidParameter(format!(
            "--k {k} is smaller than the largest cluster id + 1 ({observed})"
        ))),
        Some(k) => k,
        None => observed,
    };
    Ok((config, corpus, labels, k))
}

fn cmd_topics(cli: &Cli, a: &EvalArgs, out: &Path, tq_only: bool) -> Result<()> {
    let started = Instant::now();
    let (config, corpus, labels, k) = load_labeled(cli, a)?;
    let name = if tq_only { "tq" } else { "topics" };
    let mut manifest = RunManifest::new(name, &config, InputRecord::describe(&corpus, Some(&a.input.input))?);
    let mut dir = RunDir::create(out)?;
    let report = evaluate_topics(&corpus, &labels, k, config.k_kw).map_err(|e| e.in_stage("topics"))?;
    if !tq_only {
        write_json(&report, &dir.path("topics.json"))?;
        dir.record("topics.json")?;
    }
    write_json(&report.corpus, &dir.path("tq.json"))?;
    dir.record("tq.json")?;
    manifest.metrics.tc = Some(report.corpus.tc);
    manifest.metrics.td = Some(report.corpus.td);
    manifest.metrics.tq = Some(report.corpus.tq);
    if report.corpus.invalid_topics > 0 {
        manifest.notices.push(format!(
            "{} topics have fewer than two scorable keywords and are excluded from TC",
            report.corpus.invalid_topics
        ));
    }
    finish(manifest, &dir, out, started)
}

fn cmd_spatial(cli: &Cli, a: &EvalArgs, out: &Path) -> Result<()> {
    let started = Instant::now();
    let (config, corpus, labels, k) = load_labeled(cli, a)?;
    let mut manifest = RunManifest::new(
        "spatial",
        &config,
        InputRecord::describe(&corpus, Some(&a.input.input))?,
    );
    let mut dir = RunDir::create(out)?;
    let (grid, topics) =
        analyze_topics(corpus.coords(), &labels, k, &config.spatial).map_err(|e| e.in_stage("spatial"))?;
    write_reports(&dir.path("spatial"), &grid, &topics)?;
    dir.record_dir("spatial")?;
    let clipped: usize = topics.iter().map(|t| t.clipped).sum();
    if clipped > 0 {
        manifest
            .notices
            .push(format!("{clipped} posts fell outside the grid and were dropped"));
    }
    for t in topics.iter().filter(|t| t.moran.is_none()) {
        manifest.notices.push(format!(
            "topic {}: constant surface, Moran's I and LISA undefined",
            t.topic
        ));
    }
    finish(manifest, &dir, out, started)
}

fn cmd_run(cli: &Cli, a: &RunArgs, kind: RunKind, out: &Path) -> Result<()> {
    let config = load_config(cli, &a.params)?;
    let corpus = load_input(&a.input)?;
    let manifest = run(kind, &corpus, Some(&a.input.input), &config, out)?;
    report(&manifest, out);
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &RunArgs, axes: &[SweepAxis], out: &Path) -> Result<()> {
    let config = load_config(cli, &a.params)?;
    let corpus = load_input(&a.input)?;
    let summary = sweep(&corpus, Some(&a.input.input), &config, axes, out)?;
    for cell in &summary.cells {
        let tq = cell.metrics.tq.map_or("-".to_string(), |v| format!("{v:.4}"));
        say!(
            "{}={} tq={tq} dir={}",
            cell.param,
            cell.value,
            out.join(&cell.dir).display()
        );
    }
    say!("{}", summary.to_csv().trim_end());
    say!("summary: {}", PathBuf::from(out).join("sweep_summary.csv").display());
    Ok(())
}
