//! `tricluster`: generate, fit, simplify, analyze and export temporal
//! triclustering models.

mod manifest;
mod output;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tricluster::analytics::{mutual_info_clusters, mutual_info_time};
use tricluster::simplifier::coarsen_to_informativity;
use tricluster::synthgen::vertex_names;
use tricluster::{
    generate_patterned, read_edge_list, rewire_all, shuffle_timestamps, vns_optimize, write_edge_list, Criterion,
    ModelDocument, OptimizerConfig, PatternSpec, TemporalGraph,
};

use manifest::RunManifest;
use output::{sibling, Staged};

#[derive(Parser)]
#[command(name = "tricluster", version, about = "MODL triclustering of time-evolving directed multigraphs")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "TRICLUSTER_THREADS", default_value_t = 0)]
    threads: usize,

    /// Also write a run manifest here (fit always writes one).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic edge list and its ground truth.
    Gen(GenArgs),
    /// Fit the MODL-optimal model to an edge list.
    Fit(FitArgs),
    /// Coarsen a fitted model down to a target informativity.
    Simplify(SimplifyArgs),
    /// Mutual-information report of a fitted model.
    Analyze(AnalyzeArgs),
    /// Write the cluster, segment and cell tables of a model.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// Planted clusters and intervals with noise.
    Patterned,
    /// The patterned graph with shuffled timestamps.
    Stationary,
    /// The patterned graph with every endpoint redrawn.
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "patterned")]
    protocol: Protocol,
    /// key=value file overriding the default pattern spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    edges: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Edge list to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Ground truth file; defaults to `<out stem>.truth.tsv`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Tab-separated `source target timestamp` edge list.
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// key=value optimizer config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vns_restarts: Option<usize>,
    #[arg(long)]
    vns_max_neighborhood: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pre_aggregation_threshold: Option<usize>,
}

#[derive(Args)]
struct SimplifyArgs {
    model: PathBuf,
    /// Target informativity in (0, 1].
    #[arg(long)]
    informativity: f64,
    #[arg(long, short)]
    out: PathBuf,
    /// Trace file; defaults to `<out stem>.trace.tsv`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Pairs,
    Time,
}

#[derive(Args)]
struct AnalyzeArgs {
    model: PathBuf,
    #[arg(long, value_enum, default_value = "pairs")]
    mode: Mode,
    /// Report in bits instead of nats.
    #[arg(long)]
    bits: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    model: PathBuf,
    /// Directory for clusters.tsv, segments.tsv and cells.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_model(path: &Path) -> Result<ModelDocument> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ModelDocument::read_json(BufReader::new(file)).with_context(|| format!("cannot load {}", path.display()))
}

fn read_graph(path: &Path) -> Result<TemporalGraph> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let edges = read_edge_list(BufReader::new(file)).with_context(|| format!("{}", path.display()))?;
    Ok(TemporalGraph::build(&edges, None, None)?)
}

struct Run {
    manifest: RunManifest,
    staged: Staged,
    manifest_path: Option<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(manifest: RunManifest, manifest_path: Option<PathBuf>) -> Self {
        Self { manifest, staged: Staged::default(), manifest_path, started: Instant::now() }
    }

    fn finish(mut self) -> Result<()> {
        let mut outputs = self.staged.paths();
        if let Some(path) = &self.manifest_path {
            outputs.push(path.clone());
            self.manifest.finish(self.started.elapsed(), outputs);
            let manifest = &self.manifest;
            self.staged.write(path, |w| {
                serde_json::to_writer_pretty(&mut *w, manifest)?;
                writeln!(w)?;
                Ok(())
            })?;
        }
        self.staged.commit()?;
        Ok(())
    }
}

fn gen(args: GenArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut spec = PatternSpec::default();
    let mut inputs = Vec::new();
    if let Some(path) = &args.spec {
        spec = spec.merge_key_values(&read_text(path)?)?;
        inputs.push(path.clone());
    }
    if let Some(e) = args.edges {
        spec.num_edges = e;
    }
    if let Some(n) = args.noise {
        spec.noise_fraction = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let (planted, truth) = generate_patterned(&spec)?;
    let graph = match args.protocol {
        Protocol::Patterned => planted,
        Protocol::Stationary => shuffle_timestamps(&planted, spec.seed)?,
        Protocol::Random => rewire_all(&planted, spec.seed)?,
    };
    let protocol = args.protocol.to_possible_value().unwrap().get_name().to_owned();
    let config = serde_json::json!({ "protocol": protocol, "spec": spec });
    let mut run = Run::new(RunManifest::new("gen", inputs, config, Some(spec.seed)), manifest);
    run.staged.write(&args.out, |w| Ok(write_edge_list(w, &graph)?))?;
    let truth_path = args.truth.unwrap_or_else(|| sibling(&args.out, ".truth.tsv"));
    let names = vertex_names(spec.num_vertices());
    run.staged.write(&truth_path, |w| {
        writeln!(w, "# protocol\t{protocol}")?;
        Ok(truth.write_tsv(w, &names)?)
    })?;
    run.finish()
}

fn fit(args: FitArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut config = OptimizerConfig::default();
    let mut inputs = vec![args.input.clone()];
    if let Some(path) = &args.config {
        config = config.merge_key_values(&read_text(path)?).with_context(|| format!("{}", path.display()))?;
        inputs.push(path.clone());
    }
    if let Some(v) = args.vns_restarts {
        config.vns_restarts = v;
    }
    if let Some(v) = args.vns_max_neighborhood {
        config.vns_max_neighborhood = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.pre_aggregation_threshold {
        config.pre_aggregation_threshold = v;
    }
    config.validate()?;
    let graph = read_graph(&args.input)?;
    let manifest_path = manifest.unwrap_or_else(|| sibling(&args.out, ".manifest.json"));
    let mut run = Run::new(
        RunManifest::new("fit", inputs, serde_json::to_value(&config)?, Some(config.seed)),
        Some(manifest_path),
    );
    let fitted = vns_optimize::<f64>(&graph, &config)?;
    let doc = ModelDocument::new(&fitted.model, &fitted.breakdown);
    run.staged.write(&args.out, |w| {
        doc.write_json(&mut *w)?;
        writeln!(w)?;
        Ok(())
    })?;
    run.finish()
}

fn simplify(args: SimplifyArgs, manifest: Option<PathBuf>) -> Result<()> {
    let tau = args.informativity;
    if !(tau > 0.0 && tau <= 1.0) {
        bail!("--informativity must be in (0, 1], got {tau}");
    }
    let doc = read_model(&args.model)?;
    let model = doc.to_model()?;
    let criterion = Criterion::for_model(&model);
    let (coarse, trace) = coarsen_to_informativity(&criterion, &model, tau)?;
    let out_doc = ModelDocument::scored(&criterion, &coarse)?;
    let config = serde_json::json!({ "informativity": tau });
    let mut run = Run::new(RunManifest::new("simplify", vec![args.model.clone()], config, None), manifest);
    run.staged.write(&args.out, |w| {
        out_doc.write_json(&mut *w)?;
        writeln!(w)?;
        Ok(())
    })?;
    let trace_path = args.trace.unwrap_or_else(|| sibling(&args.out, ".trace.tsv"));
    run.staged.write(&trace_path, |w| Ok(trace.write_tsv(w)?))?;
    run.finish()
}

fn analyze(args: AnalyzeArgs, manifest: Option<PathBuf>) -> Result<()> {
    let model = read_model(&args.model)?.to_model()?;
    let mut report = match args.mode {
        Mode::Pairs => mutual_info_clusters::<f64>(&model),
        Mode::Time => mutual_info_time::<f64>(&model),
    };
    if args.bits {
        report = report.to_bits();
    }
    let config = serde_json::json!({
        "mode": if args.mode == Mode::Pairs { "pairs" } else { "time" },
        "bits": args.bits,
    });
    let mut run = Run::new(RunManifest::new("analyze", vec![args.model.clone()], config, None), manifest);
    run.staged.write(&args.out, |w| Ok(report.write_tsv(w)?))?;
    run.finish()
}

fn export(args: ExportArgs, manifest: Option<PathBuf>) -> Result<()> {
    let doc = read_model(&args.model)?;
    doc.to_model()?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let mut run =
        Run::new(RunManifest::new("export", vec![args.model.clone()], serde_json::Value::Null, None), manifest);
    run.staged.write(&args.out_dir.join("clusters.tsv"), |w| Ok(doc.write_cluster_table(w)?))?;
    run.staged.write(&args.out_dir.join("segments.tsv"), |w| Ok(doc.write_segment_table(w)?))?;
    run.staged.write(&args.out_dir.join("cells.tsv"), |w| Ok(doc.write_cell_table(w)?))?;
    run.finish()
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    match cli.command {
        Command::Gen(a) => gen(a, cli.manifest),
        Command::Fit(a) => fit(a, cli.manifest),
        Command::Simplify(a) => simplify(a, cli.manifest),
        Command::Analyze(a) => analyze(a, cli.manifest),
        Command::Export(a) => export(a, cli.manifest),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
