//! `fedsim`: run tiered federated learning experiments from the shell.
//!
//! Subcommands: `run` (one experiment), `sweep` (one parameter, many
//! values), `gen-data` (write a synthetic dataset file), `eval` (score a
//! checkpoint against a dataset file). Settings come from an optional
//! config file plus repeatable `--set key=value` overrides, so every
//! config key has exactly one spelling everywhere.
//!
//! Success exits 0. Any failure prints a single machine-readable JSON
//! line `{"error": KIND, "message": ...}` to stderr and exits 1.
//! Progress and timing go to stderr; only results go to stdout.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fedsim_core::config::{apply_config_text, ExperimentConfig};
use fedsim_core::data::{load_dataset, make_synthetic, save_dataset, SynthSpec};
use fedsim_core::error::{Error, Result};
use fedsim_core::harness::{run_experiment, sweep, RunArtifacts, SweepParam, BETA_SWEEP_DEFAULT};
use fedsim_core::metrics::evaluate;
use fedsim_core::rng::{stream, Rng};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic simulator for federated learning across heterogeneous device tiers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write metrics, summaries, and checkpoints.
    Run(RunArgs),
    /// Run one experiment per parameter value and write a comparison table.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
    /// Score a model checkpoint against a dataset file.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key (e.g. --set rounds=20). Repeatable; wins
    /// over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory. Defaults to $FEDSIM_OUT or ./runs, with a
    /// per-command subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Which parameter to sweep: beta or proportion.
    #[arg(long)]
    param: String,

    /// Comma-separated values; ratio values use colons (e.g. 1:2:7).
    /// A beta sweep defaults to 0,0.2,0.5,0.8,1.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Where to write the dataset file.
    #[arg(long)]
    file: PathBuf,

    /// Dataset name stored in the file; defaults to synthetic-{seed} so
    /// the file matches the dataset an in-process run would generate.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint to score.
    #[arg(long)]
    model: PathBuf,

    /// Dataset file to score against.
    #[arg(long)]
    data: PathBuf,
}

fn build_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        apply_config_text(&mut cfg, &text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for pair in &args.set {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!("--set expects KEY=VALUE, got '{pair}'")));
        };
        cfg.set(key.trim(), value)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

/// Default output directory: $FEDSIM_OUT (or ./runs) plus a subdirectory
/// named for what is being run.
fn default_out(subdir: &str) -> PathBuf {
    std::env::var_os("FEDSIM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(subdir)
}

fn print_run(run: &RunArtifacts) {
    for t in &run.summary.tiers {
        println!(
            "seed {} tier {} (depth {}): best {:.4} @ round {}, final {:.4}",
            run.summary.seed, t.tier, t.depth, t.best_accuracy, t.best_round, t.final_accuracy
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = build_config(&args.config)?;
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(default_out(cfg.method.name()));
    }
    let start = Instant::now();
    let runs = run_experiment(&cfg)?;
    for run in &runs {
        print_run(run);
    }
    let dir = cfg.out_dir.expect("set above");
    println!("results in {}", dir.display());
    eprintln!(
        "{} run(s), {} round(s) each, {:.1}s",
        runs.len(),
        cfg.rounds,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let param = SweepParam::from_name(&args.param)?;
    let mut cfg = build_config(&args.config)?;
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(default_out(&format!("sweep-{}", param.name())));
    }
    let values: Vec<String> = if args.values.is_empty() && param == SweepParam::Beta {
        BETA_SWEEP_DEFAULT.iter().map(|b| b.to_string()).collect()
    } else {
        args.values
    };
    let start = Instant::now();
    let cells = sweep(&cfg, param, &values)?;
    for cell in &cells {
        let best: f64 = cell
            .runs
            .iter()
            .map(|r| r.summary.global.best_accuracy)
            .sum::<f64>()
            / cell.runs.len() as f64;
        println!("{} = {}: mean best accuracy {:.4}", param.name(), cell.value, best);
    }
    let dir = cfg.out_dir.expect("build_config always sets an output dir");
    println!("table in {}", dir.join("sweep.csv").display());
    eprintln!("{} cell(s), {:.1}s", cells.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let base = build_config(&args.config)?;
    let seed = base.seed;
    // Same stream an in-process run derives, so a file generated with
    // seed s reproduces that run's dataset exactly.
    let mut rng = Rng::new(seed).derive(&[stream::DATA]);
    let ds = make_synthetic(
        &SynthSpec {
            n: base.data.n,
            input_dim: base.data.input_dim,
            classes: base.data.classes,
            spread: base.data.spread,
            label_noise: base.data.label_noise,
            warp_depth: base.data.warp_depth,
            name: args.name.unwrap_or_else(|| format!("synthetic-{seed}")),
        },
        &mut rng,
    )?;
    if let Some(parent) = args.file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_dataset(&ds, &args.file)?;
    println!(
        "wrote {} ({} samples, input dim {}, {} classes)",
        args.file.display(),
        ds.len(),
        ds.input_dim(),
        ds.classes
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = fedsim_core::checkpoint::load_model(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let (accuracy, macro_f1) = evaluate(&model, &ds, &indices)?;
    let line = serde_json::json!({
        "accuracy": accuracy,
        "macro_f1": macro_f1,
        "samples": ds.len(),
        "classes": ds.classes,
        "model_depth": model.depth(),
    });
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
