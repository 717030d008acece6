//! `sbm`: train, evaluate and benchmark structural RBMs.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration,
//! 3 missing dataset, 4 non-finite metric, 5 dimension mismatch.

mod config;
mod dataset;
mod error;
mod evaluate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use sbm_core::evaluation::AisConfig;
use sbm_core::rbm::CdOptions;
use sbm_core::synthetic::oriented_stripes;
use sbm_core::trainer::{init_classifier, init_params, measure_gradient_time};
use sbm_core::{checkpoint, ConnectivityStructure, Grid, LogZMethod, Model, Objective, StructureSpec};
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};
use crate::evaluate::EvalMode;

#[derive(Parser)]
#[command(name = "sbm", version, about = "Structural restricted Boltzmann machines")]
struct Cli {
    /// Only machine-readable output on stdout; no progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write checkpoints, metric CSVs and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Reconstruct corrupted images and report per-image MSE.
    Denoise(DenoiseArgs),
    /// Time sparse and dense gradient computation.
    Bench(BenchArgs),
    /// Summarize a checkpoint or a structure.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    structure: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    val_dataset: Option<PathBuf>,
    /// Number of seeds (consecutive, starting at --seed).
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    cd_steps: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    ais_runs: Option<usize>,
    #[arg(long)]
    ais_betas: Option<usize>,
    /// generative or discriminative.
    #[arg(long)]
    objective: Option<String>,
    /// Output directory (default: $SBM_OUT_DIR, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

impl TrainArgs {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("structure", self.structure.as_ref().map(|s| json!(s)));
        put("dataset", self.dataset.as_ref().map(|p| json!(p)));
        put("val_dataset", self.val_dataset.as_ref().map(|p| json!(p)));
        put("seeds", self.seeds.map(|x| json!(x)));
        put("seed", self.seed.map(|x| json!(x)));
        put("total_updates", self.updates.map(|x| json!(x)));
        put("learning_rate", self.lr.map(|x| json!(x)));
        put("momentum", self.momentum.map(|x| json!(x)));
        put("batch_size", self.batch.map(|x| json!(x)));
        put("cd_steps", self.cd_steps.map(|x| json!(x)));
        put("eval_interval", self.eval_interval.map(|x| json!(x)));
        put("ais_runs", self.ais_runs.map(|x| json!(x)));
        put("ais_betas", self.ais_betas.map(|x| json!(x)));
        put("objective", self.objective.as_ref().map(|x| json!(x)));
        put("out", self.out.as_ref().map(|p| json!(p)));
        put("jobs", self.jobs.map(|x| json!(x)));
        m
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Images: .npz, directory of .npy files, .csv or IDX.
    #[arg(long)]
    dataset: PathBuf,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Archive split prefix, e.g. `test` for `test_images`.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, value_enum, default_value = "loglikelihood")]
    mode: EvalMode,
    /// auto, exact or ais.
    #[arg(long, default_value = "auto")]
    log_z: String,
    #[arg(long, default_value_t = 1000)]
    ais_runs: usize,
    #[arg(long, default_value_t = 2900)]
    ais_betas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Uncorrupted reference images.
    #[arg(long)]
    clean: PathBuf,
    /// Corrupted image sets, aligned index-wise with the clean set.
    #[arg(long, num_args = 1..)]
    corrupted: Vec<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "denoise")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Structures to time (default: the six reference SBMs).
    #[arg(long, num_args = 1..)]
    structure: Vec<String>,
    /// Grid side, or HxW.
    #[arg(long, default_value = "28")]
    grid: String,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Time the discriminative gradient of a classifier with this many classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, conflicts_with = "structure")]
    checkpoint: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    structure: Vec<String>,
    #[arg(long, default_value = "28")]
    grid: String,
}

fn parse_grid(s: &str) -> CliResult<Grid> {
    let bad = || CliError::config(format!("invalid grid {s:?}; use N or HxW"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok(Grid::new(h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => Ok(Grid::square(s.trim().parse().map_err(|_| bad())?)),
    }
}

fn parse_specs(specs: &[String]) -> CliResult<Vec<StructureSpec>> {
    if specs.is_empty() {
        return Ok(StructureSpec::reference_models());
    }
    specs.iter().map(|s| s.parse().map_err(CliError::from)).collect()
}

fn parse_log_z(s: &str) -> CliResult<LogZMethod> {
    serde_json::from_value(json!(s)).map_err(|_| CliError::config(format!("invalid --log-z {s:?}")))
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Train(args) => {
            let base = match &args.config {
                Some(p) => config::read_file(p)?,
                None => Map::new(),
            };
            let cfg = config::resolve(base, args.overrides())?;
            let manifest = train::cmd_train(&cfg, quiet)?;
            let path = cfg.out_dir().join(train::MANIFEST_FILE);
            if quiet {
                println!("{}", path.display());
            } else {
                eprintln!("wrote {} ({} seeds)", path.display(), manifest.runs.len());
            }
        }
        Command::Eval(args) => {
            let ds = dataset::load(&args.data.dataset, args.data.labels.as_deref(), args.data.split.as_deref(), None)?;
            let opts = evaluate::EvalOptions {
                mode: args.mode,
                log_z: parse_log_z(&args.log_z)?,
                ais: AisConfig { n_runs: args.ais_runs, n_betas: args.ais_betas, seed: args.seed, threads: 0 },
                out: args.out,
            };
            print_json(&evaluate::cmd_eval(&args.checkpoint, &ds, &opts)?)?;
        }
        Command::Denoise(args) => {
            let split = args.split.as_deref();
            let clean = dataset::load(&args.clean, None, split, None)?;
            let corrupted = args
                .corrupted
                .iter()
                .map(|p| dataset::load(p, None, split, None))
                .collect::<CliResult<Vec<_>>>()?;
            print_json(&evaluate::cmd_denoise(&args.checkpoint, &clean, &corrupted, args.steps, args.seed, &args.out)?)?;
        }
        Command::Bench(args) => {
            let grid = parse_grid(&args.grid)?;
            if args.reps == 0 || args.batch == 0 {
                return Err(CliError::config("--reps and --batch must be at least 1"));
            }
            let n_classes = args.classes.unwrap_or(2).max(2);
            let batch = oriented_stripes(grid, args.batch, 0.1, args.seed)?.as_batch();
            if !quiet {
                println!(
                    "{:<16} {:>6} {:>8} {:>12} {:>12} {:>12} {:>12} {:>8}",
                    "structure", "n_h", "weights", "sparse_mean", "sparse_std", "dense_mean", "dense_std", "speedup"
                );
            } else {
                println!("structure,n_hidden,n_weights,sparse_mean_s,sparse_std_s,dense_mean_s,dense_std_s,speedup");
            }
            for spec in parse_specs(&args.structure)? {
                let s = Arc::new(ConnectivityStructure::build(&spec, grid)?);
                let model = match args.classes {
                    None => Model::Generative(init_params(s.clone(), args.seed)),
                    Some(_) => Model::Classifier(init_classifier(s.clone(), n_classes, args.seed)?),
                };
                let t = measure_gradient_time(&model, &batch, args.reps, &CdOptions::default())?;
                let name = spec.to_string();
                if quiet {
                    println!(
                        "\"{name}\",{},{},{:e},{:e},{:e},{:e},{:.4}",
                        s.n_hidden(),
                        s.nnz(),
                        t.sparse.mean,
                        t.sparse.std,
                        t.dense.mean,
                        t.dense.std,
                        t.speedup()
                    );
                } else {
                    println!(
                        "{name:<16} {:>6} {:>8} {:>10.3}ms {:>10.3}ms {:>10.3}ms {:>10.3}ms {:>7.2}x",
                        s.n_hidden(),
                        s.nnz(),
                        t.sparse.mean * 1e3,
                        t.sparse.std * 1e3,
                        t.dense.mean * 1e3,
                        t.dense.std * 1e3,
                        t.speedup()
                    );
                }
            }
        }
        Command::Inspect(args) => {
            let rows: Vec<Value> = match &args.checkpoint {
                Some(p) => {
                    let m = checkpoint::load(p)?;
                    let s = m.structure();
                    vec![json!({
                        "structure": s.spec().to_string(),
                        "grid": [s.grid().height, s.grid().width],
                        "n_visible": s.n_visible(),
                        "n_hidden": s.n_hidden(),
                        "n_weights": s.nnz(),
                        "dense_weights": s.n_visible() * s.n_hidden(),
                        "n_classes": m.n_classes(),
                        "kind": match m { Model::Generative(_) => Objective::Generative, Model::Classifier(_) => Objective::Discriminative },
                    })]
                }
                None => {
                    let grid = parse_grid(&args.grid)?;
                    parse_specs(&args.structure)?
                        .iter()
                        .map(|spec| {
                            let s = ConnectivityStructure::build(spec, grid)?;
                            Ok(json!({
                                "structure": spec.to_string(),
                                "grid": [grid.height, grid.width],
                                "n_visible": s.n_visible(),
                                "n_hidden": s.n_hidden(),
                                "n_weights": s.nnz(),
                                "dense_weights": s.n_visible() * s.n_hidden(),
                            }))
                        })
                        .collect::<CliResult<_>>()?
                }
            };
            print_json(&rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
