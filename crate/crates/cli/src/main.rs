//! `graff-lp` command-line interface.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration (including
//! I/O and parse failures), 3 when training diverges.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use graff_lp::bundle::{read_bundle, write_bundle};
use graff_lp::checkpoint::{load_checkpoint, save_checkpoint};
use graff_lp::harness::{evaluate, grid_expand, measure_inference, train, GridSpace, RunReport, TrainConfig};
use graff_lp::model::{GraffConfig, Model, ModelKind};
use graff_lp::split::{transductive_split, EdgeSplit, Role, SplitConfig};
use graff_lp::synth::{generate_chain_graph, generate_grid_graph, MINE_RATE};
use graff_lp::{Error, Graph, Result};

/// Environment variable holding the worker-thread count.
const THREADS_ENV: &str = "GRAFF_LP_THREADS";

#[derive(Parser)]
#[command(name = "graff-lp", version, about = "Gradient-flow GNN link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph bundle.
    Synth(SynthArgs),
    /// Split a bundle's edges into train/val/test roles.
    Split(SplitArgs),
    /// Train a model and write checkpoint, report and GS trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split role.
    Eval(EvalArgs),
    /// Write the per-layer gradient-separability table of a checkpoint.
    GsTrace(EvalArgs),
    /// Train every configuration of a grid space.
    Grid(GridArgs),
    /// Parameter counts and inference timing across depths.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Grid,
    Chain,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "grid")]
    kind: SynthKind,
    #[arg(long, default_value_t = 30)]
    rows: usize,
    #[arg(long, default_value_t = 30)]
    cols: usize,
    #[arg(long, default_value_t = MINE_RATE)]
    mine_rate: f64,
    /// Chain length.
    #[arg(long, default_value_t = 1000)]
    nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    shortcut_rate: f64,
    #[arg(long, default_value_t = 18)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    name: Option<String>,
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON object overriding split settings, e.g. '{"ratios":[0.8,0.1,0.1]}'.
    #[arg(long)]
    config: Option<String>,
    /// Manifest file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunInputs {
    #[arg(long)]
    bundle: PathBuf,
    /// Split manifest.
    #[arg(long)]
    split: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: RunInputs,
    /// `key = value` config file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Val,
    Test,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Train => Role::Train,
            RoleArg::Val => Role::Val,
            RoleArg::Test => Role::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: RunInputs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    role: RoleArg,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    inputs: RunInputs,
    /// Grid space file, `key = v1, v2, ...` per line; defaults to the standard space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Base config for keys the space leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random subset size.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    grid_seed: u64,
    /// Reports directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    inputs: RunInputs,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9,12")]
    layers: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_inputs(inputs: &RunInputs) -> Result<(Graph, EdgeSplit)> {
    let (g, _) = read_bundle(&inputs.bundle)?;
    let split = EdgeSplit::read_manifest(&inputs.split)?;
    if split.num_nodes != g.num_nodes() {
        return Err(Error::InvalidConfig(format!(
            "manifest is for {} nodes, bundle has {}",
            split.num_nodes,
            g.num_nodes()
        )));
    }
    Ok((g, split))
}

/// Config file (if any) with `key=value` overrides on top, validated.
fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut text = match path {
        Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
        None => String::new(),
    };
    // later duplicates would be rejected, so drop overridden keys first
    let keys: Vec<&str> = overrides
        .iter()
        .map(|o| o.split_once('=').map_or(o.as_str(), |(k, _)| k).trim())
        .collect();
    text = text
        .lines()
        .filter(|l| {
            let key = l.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim();
            !keys.contains(&key)
        })
        .collect::<Vec<_>>()
        .join("\n");
    for o in overrides {
        text.push('\n');
        text.push_str(o);
    }
    TrainConfig::from_kv_str(&text)
}

fn write_run(dir: &Path, model: &Model, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_checkpoint(model, &dir.join("model.ckpt"))?;
    report.config.write(&dir.join("config.txt"))?;
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    write_file(&dir.join("gs_trace.csv"), report.test.gs.to_csv())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (g, default_name) = match a.kind {
        SynthKind::Grid => (
            generate_grid_graph(a.rows, a.cols, a.mine_rate, a.seed)?,
            format!("grid-{}x{}-s{}", a.rows, a.cols, a.seed),
        ),
        SynthKind::Chain => (
            generate_chain_graph(a.nodes, a.shortcut_rate, a.classes, a.seed)?,
            format!("chain-{}-s{}", a.nodes, a.seed),
        ),
    };
    let meta = write_bundle(&a.out, &g, a.name.as_deref().unwrap_or(&default_name))?;
    eprintln!(
        "wrote {} ({} nodes, {} edges, {} features, {} classes)",
        a.out.display(),
        meta.num_nodes,
        g.num_edges(),
        meta.feature_dim,
        meta.num_classes
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let (g, _) = read_bundle(&a.bundle)?;
    let mut cfg = match &a.config {
        Some(json) => serde_json::from_str::<SplitConfig>(json).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        None => SplitConfig::default(),
    };
    cfg.seed = a.seed;
    let split = transductive_split(&g, &cfg)?;
    split.write_manifest(&a.out)?;
    eprintln!(
        "train MP {} pos {} | val MP {} pos {} | test MP {} pos {} (directed MP counts)",
        split.train.directed_mp_count(),
        split.train.positives.len(),
        split.val.directed_mp_count(),
        split.val.positives.len(),
        split.test.directed_mp_count(),
        split.test.positives.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (g, split) = load_inputs(&a.inputs)?;
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let (model, report) = train(&g, &split, &cfg)?;
    write_run(&a.out, &model, &report)?;
    eprintln!(
        "best val AUROC {:.4} at epoch {} ({} epochs); test AUROC {:.4}; {} parameters",
        report.best_val_auroc, report.best_epoch, report.epochs_run, report.test_auroc, report.param_count
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (g, split) = load_inputs(&a.inputs)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let metrics = evaluate(&model, &g, &split, a.role.into())?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&metrics)? + "\n"))
}

fn cmd_gs_trace(a: EvalArgs) -> Result<()> {
    let (g, split) = load_inputs(&a.inputs)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let metrics = evaluate(&model, &g, &split, a.role.into())?;
    emit(a.out.as_deref(), &metrics.gs.to_csv())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let (g, split) = load_inputs(&a.inputs)?;
    let base = load_config(a.config.as_deref(), &a.overrides)?;
    let space = match &a.space {
        Some(p) => GridSpace::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => GridSpace::standard(),
    };
    let configs = grid_expand(&space, &base, a.budget, a.grid_seed)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    eprintln!("{} configurations", configs.len());
    let results: Vec<Result<RunReport>> = configs
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| {
            let (model, report) = train(&g, &split, cfg)?;
            write_run(&a.out.join(format!("run_{k:05}")), &model, &report)?;
            Ok(report)
        })
        .collect();
    let mut summary = String::from("run,best_val_auroc,test_auroc,best_epoch,epochs_run,param_count,status\n");
    let mut diverged = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => summary.push_str(&format!(
                "{k},{},{},{},{},{},ok\n",
                rep.best_val_auroc, rep.test_auroc, rep.best_epoch, rep.epochs_run, rep.param_count
            )),
            Err(e) if e.is_divergence() => {
                summary.push_str(&format!("{k},,,,,,diverged\n"));
                diverged.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    write_file(&a.out.join("summary.csv"), summary)?;
    diverged.map_or(Ok(()), Err)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let (g, split) = load_inputs(&a.inputs)?;
    let mut table = String::from("model,layers,hidden,param_count,message_passing_count,mean_seconds,sd_seconds\n");
    for kind in [ModelKind::Graff, ModelKind::Gcn, ModelKind::Mlp] {
        for &layers in &a.layers {
            let cfg = GraffConfig {
                kind,
                layers,
                hidden: a.hidden,
                ..Default::default()
            };
            let model = Model::new(cfg, g.feature_dim(), 0)?;
            let t = measure_inference(&model, &g, &split, a.repeats)?;
            let name = serde_json::to_value(kind)?;
            table.push_str(&format!(
                "{},{layers},{},{},{},{},{}\n",
                name.as_str().unwrap_or_default(),
                a.hidden,
                model.param_count(),
                model.params.message_passing_count(),
                t.mean_seconds,
                t.sd_seconds.map_or("NA".to_string(), |s| s.to_string())
            ));
        }
    }
    emit(a.out.as_deref(), &table)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::InvalidConfig(format!("{THREADS_ENV} must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GsTrace(a) => cmd_gs_trace(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
