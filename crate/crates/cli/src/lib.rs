//! `dsgtf` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use dsgtf::data::{split_subjects, synthesize_dataset, Dataset, DatasetSplit, SynthConfig, WindowedSegment};
use dsgtf::model::{gradient_check, DsGtfParams, ModelConfig};
use dsgtf::numerics::GradCheckOptions;
use dsgtf::sensor_graph::{build_adjacency, connectivity_report, AdjacencyMethod, SensorLayout};
use dsgtf::train::{
    evaluate, load_checkpoint, sweep_adjacency, train_with_progress, write_eval_csv, write_sweep_csv,
    write_training_artifacts,
};
use dsgtf::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dsgtf", version, about = "Sensor-graph attention / transformer classifier")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled dataset (manifest, layout, recordings).
    GenSynthetic(GenArgs),
    /// Build an adjacency matrix from a sensor layout and export its edge list.
    Adjacency(AdjacencyArgs),
    /// Train a model and write checkpoint.bin, metrics.csv, split.json and config.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint per subject and write the eval CSV.
    Eval(EvalArgs),
    /// Train and evaluate one model per adjacency variant and write the sweep CSV.
    Sweep(SweepArgs),
    /// Compare backward-pass gradients with central differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 18)]
    subjects: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// Samples per task recording.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Standard deviation of additive white noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON synthetic-data config; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdjacencyArgs {
    /// Layout CSV with header `channel,x,y,z`.
    #[arg(long)]
    layout: PathBuf,
    #[arg(long, default_value = "topk", value_parser = ["fc", "thresh", "topk"])]
    method: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Kernel threshold; required with `--method thresh`.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    /// Edge-list output file.
    #[arg(long)]
    out: PathBuf,
}

/// Every TrainConfig field; explicitly given flags override `--config`.
#[derive(Debug, Args)]
struct ConfigFlags {
    /// JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Segment length.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Fractional overlap of consecutive segments.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Window length; must divide d.
    #[arg(long, default_value_t = 10)]
    w: usize,
    /// RBF kernel width.
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    #[arg(long, default_value = "topk", value_parser = ["fc", "thresh", "topk"])]
    method: String,
    /// Neighbors per node for topk.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Kernel threshold for thresh.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Expected channel count; taken from the data when absent.
    #[arg(long)]
    channels: Option<usize>,
    /// GAT output features per head.
    #[arg(long, default_value_t = 8)]
    gat_out: usize,
    #[arg(long, default_value_t = 3)]
    gat_heads: usize,
    #[arg(long, default_value_t = 8)]
    enc_heads: usize,
    /// Encoder feed-forward width.
    #[arg(long, default_value_t = 256)]
    ff_hidden: usize,
    /// Per-token width after down-sampling.
    #[arg(long, default_value_t = 8)]
    token_dim: usize,
    #[arg(long, default_value_t = 12)]
    train_subjects: usize,
    #[arg(long, default_value_t = 6)]
    test_subjects: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated subject ids.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "split",
        required_unless_present = "split"
    )]
    subjects: Vec<String>,
    /// split.json from a training run; its test subjects are evaluated.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Eval CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated variants such as `topk:3,thresh:0.5,fc`.
    #[arg(long, value_delimiter = ',', required = true)]
    variants: Vec<String>,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Sweep CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Segments in the checked batch.
    #[arg(long, default_value_t = 2)]
    batch: usize,
}

/// A mistake in the invocation rather than in the run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn resolve_method(method: &str, k: usize, tau: Option<f64>) -> anyhow::Result<AdjacencyMethod> {
    Ok(match method {
        "fc" => AdjacencyMethod::FullyConnected,
        "topk" => AdjacencyMethod::TopK { k },
        "thresh" => AdjacencyMethod::Threshold {
            tau: tau.ok_or_else(|| usage("--method thresh needs --tau"))?,
        },
        other => return Err(usage(format!("unknown adjacency method {other:?}"))),
    })
}

/// Config file (or defaults), then every flag given on the command line.
fn resolve_config(flags: &ConfigFlags, m: &ArgMatches) -> anyhow::Result<TrainConfig> {
    let mut cfg: TrainConfig = match &flags.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! take {
        ($($id:literal => $field:ident = $value:expr),* $(,)?) => {
            $(if explicit(m, $id) { cfg.$field = $value; })*
        };
    }
    take! {
        "d" => segment_len = flags.d,
        "overlap" => overlap = flags.overlap,
        "w" => window = flags.w,
        "gamma" => gamma = flags.gamma,
        "lr" => lr = flags.lr,
        "batch" => batch_size = flags.batch,
        "epochs" => epochs = flags.epochs,
        "seed" => seed = flags.seed,
        "channels" => channels = flags.channels,
        "gat_out" => gat_out = flags.gat_out,
        "gat_heads" => gat_heads = flags.gat_heads,
        "enc_heads" => enc_heads = flags.enc_heads,
        "ff_hidden" => ff_hidden = flags.ff_hidden,
        "token_dim" => token_dim = flags.token_dim,
        "train_subjects" => train_subjects = flags.train_subjects,
        "test_subjects" => test_subjects = flags.test_subjects,
    }
    let (method, k, tau) = match cfg.adjacency {
        AdjacencyMethod::FullyConnected => ("fc", flags.k, flags.tau),
        AdjacencyMethod::TopK { k } => ("topk", k, flags.tau),
        AdjacencyMethod::Threshold { tau } => ("thresh", flags.k, Some(tau)),
    };
    let method = if explicit(m, "method") {
        flags.method.as_str()
    } else {
        method
    };
    let k = if explicit(m, "k") { flags.k } else { k };
    let tau = if explicit(m, "tau") { flags.tau } else { tau };
    cfg.adjacency = resolve_method(method, k, tau)?;
    cfg.validate()
        .map_err(|e| usage(format!("invalid training config: {e}")))?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn gen_synthetic(args: &GenArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if explicit(m, "subjects") {
        cfg.subjects = args.subjects;
    }
    if explicit(m, "channels") {
        cfg.channels = args.channels;
    }
    if explicit(m, "samples") {
        cfg.samples_per_task = args.samples;
    }
    if explicit(m, "noise") {
        cfg.noise = args.noise;
    }
    if explicit(m, "seed") {
        cfg.seed = args.seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let synth = synthesize_dataset(&cfg)?;
    let ds = Dataset::new(synth.layout, synth.recordings)?;
    create_dir(&args.out)?;
    let manifest = ds.save(&args.out)?;
    println!(
        "wrote {} recordings for {} subjects to {}",
        ds.recordings.len(),
        cfg.subjects,
        manifest.display()
    );
    Ok(())
}

fn adjacency(args: &AdjacencyArgs) -> anyhow::Result<()> {
    let method = resolve_method(&args.method, args.k, args.tau)?;
    let layout = SensorLayout::read_csv(&args.layout)?;
    let adj = build_adjacency(&layout, args.gamma, method)?;
    write_file(&args.out, |w| adj.write_edge_list(w))?;
    let report = connectivity_report(&adj);
    println!("edges={} isolated={}", report.edges, report.isolated);
    Ok(())
}

fn make_split(ds: &Dataset, cfg: &TrainConfig) -> anyhow::Result<DatasetSplit> {
    Ok(split_subjects(
        &ds.subject_ids(),
        cfg.train_subjects,
        cfg.test_subjects,
        cfg.seed,
    )?)
}

fn train_cmd(args: &TrainArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = resolve_config(&args.flags, m)?;
    let ds = Dataset::load(&args.manifest)?;
    let split = make_split(&ds, &cfg)?;
    let out = train_with_progress(&ds, &split, &cfg, |e| {
        eprintln!("epoch {:>3}  loss {:.6}  acc {:.6}", e.epoch, e.train_loss, e.train_acc);
    })?;
    let paths = write_training_artifacts(&args.out, &out, &split)?;
    let cfg_path = args.out.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&out.config)? + "\n")
        .with_context(|| format!("writing {}", cfg_path.display()))?;
    println!("checkpoint {}", paths.checkpoint.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> anyhow::Result<()> {
    let subjects = match &args.split {
        Some(p) => read_json::<DatasetSplit>(p)?.test_subjects,
        None => args.subjects.clone(),
    };
    let (cfg, params) = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::load(&args.manifest)?;
    let adj = build_adjacency(&ds.layout, cfg.gamma, cfg.adjacency)?;
    let report = evaluate(&params, &adj, &ds, &subjects, &cfg)?;
    write_file(&args.out, |w| write_eval_csv(w, &report))?;
    println!("mean {:.6} std {:.6}", report.mean, report.std);
    Ok(())
}

fn sweep_cmd(args: &SweepArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = resolve_config(&args.flags, m)?;
    let variants = args
        .variants
        .iter()
        .map(|v| AdjacencyMethod::parse(v).map_err(|e| usage(format!("bad variant {v:?}: {e}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let ds = Dataset::load(&args.manifest)?;
    let split = make_split(&ds, &cfg)?;
    let rows = sweep_adjacency(&ds, &split, &cfg, &variants, |r| match &r.outcome {
        Ok(rep) => eprintln!("{}: mean {:.6} std {:.6}", r.method, rep.mean, rep.std),
        Err(e) => eprintln!("{}: failed: {e}", r.method),
    });
    write_file(&args.out, |w| write_sweep_csv(w, &rows))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} variants failed; see {}",
            rows.len(),
            args.out.display()
        );
    }
    Ok(())
}

/// Toy dimensions small enough for exhaustive finite differences.
fn toy_batch(seed: u64, batch: usize, config: &ModelConfig) -> anyhow::Result<(Dataset, Vec<WindowedSegment>)> {
    let synth = synthesize_dataset(&SynthConfig {
        subjects: 2,
        channels: config.channels,
        samples_per_task: config.segment_len,
        seed,
        noise: 0.5,
        ..Default::default()
    })?;
    let ds = Dataset::new(synth.layout, synth.recordings)?;
    let mut segs = Vec::new();
    for rec in ds.recordings.iter().take(batch) {
        segs.extend(dsgtf::data::prepare_segments(
            rec,
            &dsgtf::data::PipelineConfig {
                segment_len: config.segment_len,
                overlap: 0.5,
                window: config.window,
            },
        )?);
    }
    Ok((ds, segs))
}

fn gradcheck_cmd(args: &GradcheckArgs) -> anyhow::Result<bool> {
    if !(1..=8).contains(&args.batch) {
        return Err(usage("--batch must be between 1 and 8"));
    }
    let config = ModelConfig::toy();
    let (ds, batch) = toy_batch(args.seed, args.batch, &config)?;
    let adj = build_adjacency(&ds.layout, 1.0, AdjacencyMethod::TopK { k: 2 })?;
    let params = DsGtfParams::init(&config, args.seed)?;
    let opts = GradCheckOptions {
        eps: args.eps,
        tolerance: args.tolerance,
        seed: args.seed,
        ..Default::default()
    };
    let report = gradient_check(&params, &adj, &batch, &opts)?;
    println!(
        "max relative error {:.3e} over {} coordinates in {} tensors (tolerance {:.1e}): {}",
        report.max_rel_error,
        report.coords_checked(),
        report.tensors.len(),
        report.tolerance,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn dispatch(cli: Cli, m: &ArgMatches) -> anyhow::Result<bool> {
    let sub = m
        .subcommand()
        .map(|(_, s)| s)
        .ok_or_else(|| anyhow!("missing subcommand"))?;
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, sub)?,
        Command::Adjacency(a) => adjacency(a)?,
        Command::Train(a) => train_cmd(a, sub)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Sweep(a) => sweep_cmd(a, sub)?,
        Command::Gradcheck(a) => return gradcheck_cmd(a),
    }
    Ok(true)
}

fn print_usage_help(argv: &[OsString]) {
    let mut cmd = Cli::command();
    cmd.build();
    let name = argv.get(1).and_then(|s| s.to_str()).unwrap_or("");
    let help = match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_help(),
        None => cmd.render_help(),
    };
    eprintln!("\n{help}");
}

/// Parses `argv` (program name first), runs the subcommand, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let _ = e.print();
            print_usage_help(&argv);
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, &matches) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            print_usage_help(&argv);
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
