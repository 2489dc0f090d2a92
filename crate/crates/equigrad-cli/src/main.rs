//! equigrad: reproducible multitask training runs from flat config files,
//! checkpoint evaluation, the analytic quadratic trace, and dataset cache
//! pre-materialization. Exit codes are a contract: 0 success, 2 invalid
//! config or inputs, 3 training divergence.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use equigrad::checkpoint::restore_checkpoint;
use equigrad::config::RunConfig;
use equigrad::metrics::evaluate;
use equigrad::quadratic::QuadraticTaskSet;
use equigrad::run::{assemble_dataset, run_train, seeded_model};
use equigrad::trainer::{single_step_update, split_only_step};

#[derive(Parser)]
#[command(name = "equigrad", version, about = "Multitask training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a run from a config file into an output directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split, printing JSON.
    Eval(EvalArgs),
    /// Trace both shared-update regimes on analytic quadratic tasks.
    QuadraticDemo(QuadraticDemoArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration, flat key=value lines.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory the run writes its artifacts into.
    #[arg(long)]
    out: PathBuf,
    /// Restart an interrupted run in place; the config must match.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate (a run's best.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// The run's config; seed and dataset keys select the data.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed (must match the training run's).
    #[arg(long)]
    seed: Option<u64>,
    /// Split to evaluate: train, val, or test.
    #[arg(long)]
    split: String,
}

#[derive(Args)]
struct QuadraticDemoArgs {
    /// Per-task curvatures, comma separated (at least two).
    #[arg(long)]
    curvatures: String,
    /// Probe step size; every curvature must satisfy inner_lr * c < 1.
    #[arg(long, default_value_t = 0.1)]
    inner_lr: f64,
    /// Shared step size for both regimes.
    #[arg(long, default_value_t = 0.1)]
    outer_lr: f64,
    /// Steps to trace per regime.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Starting shared parameter (scalar, nonzero).
    #[arg(long, default_value_t = 1.0)]
    theta0: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Compose the config's overlay dataset into the cache ahead of a run.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    use equigrad::Error;
    match e.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::InvalidArg(_)
            | Error::Idx(_)
            | Error::Checkpoint(_)
            | Error::CheckpointMismatch { .. }
            | Error::LabelOutOfRange { .. },
        ) => 2,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::QuadraticDemo(args) => cmd_quadratic_demo(args),
        Command::Dataset(DatasetCommand::Build { config, seed }) => cmd_dataset_build(config, seed),
    }
}

/// Cache root: the EQUIGRAD_CACHE_DIR environment override, or a local
/// directory next to where the tool runs.
fn cache_root() -> PathBuf {
    std::env::var_os("EQUIGRAD_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("equigrad-cache"))
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        config.trainer.seed = seed;
    }
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let summary = run_train(&config, &args.out, &cache_root(), args.resume)
        .with_context(|| format!("run in {}", args.out.display()))?;
    println!(
        "run complete: {} epochs in {:.1}s, artifacts in {}",
        summary.stopping_epoch,
        summary.wall_time_seconds,
        args.out.display()
    );
    for eval in &summary.evals {
        let accs: Vec<String> = eval.accuracy.iter().map(|a| format!("{a:.2}%")).collect();
        println!("  {}: {}", eval.split, accs.join(" / "));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let data = assemble_dataset(&config, &cache_root())?;
    let mut model = seeded_model(&config)?;
    restore_checkpoint(&args.checkpoint, model.named_params_mut())
        .with_context(|| format!("checkpoint {}", args.checkpoint.display()))?;
    let split = data.split(&args.split)?;
    let report = evaluate(&model, split, &args.split, config.trainer.batch_size)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_quadratic_demo(args: QuadraticDemoArgs) -> anyhow::Result<()> {
    use equigrad::Error;
    let curvatures: Vec<f64> = args
        .curvatures
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad curvature {v:?}")))
        })
        .collect::<Result<_, _>>()?;
    if curvatures.len() < 2 {
        return Err(Error::Config("the trace needs at least two curvatures".to_string()).into());
    }
    for &c in &curvatures {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::Config(format!("curvatures must be positive, got {c}")).into());
        }
        if args.inner_lr * c >= 1.0 {
            return Err(Error::Config(format!(
                "inner_lr {} * curvature {c} >= 1; the post-probe gradient law would invert",
                args.inner_lr
            ))
            .into());
        }
    }
    if args.steps == 0 {
        return Err(Error::Config("steps must be positive".to_string()).into());
    }
    if args.theta0 == 0.0 || !args.theta0.is_finite() {
        return Err(Error::Config("theta0 must be nonzero and finite".to_string()).into());
    }

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(io::stdout()),
    };
    let mut w = BufWriter::new(sink);
    writeln!(
        w,
        "regime,step,task,theta,grad_pre,grad_post,ratio_pre,ratio_post"
    )?;
    let tasks = curvatures.len();
    let fresh = || {
        QuadraticTaskSet::new(
            curvatures.clone(),
            vec![vec![0.0]; tasks],
            vec![args.theta0],
        )
    };
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for regime in ["direct", "single-step"] {
        let mut q = fresh()?;
        for step in 0..args.steps {
            let theta = q.theta()[0];
            let outcome = if regime == "direct" {
                split_only_step(&mut q, &(), args.outer_lr, args.outer_lr)?
            } else {
                single_step_update(&mut q, &(), args.inner_lr, args.outer_lr, args.outer_lr)?
            };
            let pre = outcome
                .pre_grad_norms
                .expect("quadratic tasks always expose gradient norms");
            let post = outcome.post_grad_norms;
            let ratio_pre = pre[0] / pre[1];
            let ratio_post = post.as_ref().map(|p| p[0] / p[1]);
            for task in 0..tasks {
                writeln!(
                    w,
                    "{regime},{step},{task},{theta},{},{},{ratio_pre},{}",
                    pre[task],
                    cell(post.as_ref().map(|p| p[task])),
                    cell(ratio_post)
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_dataset_build(config: PathBuf, seed: Option<u64>) -> anyhow::Result<()> {
    let config = load_config(&config, seed)?;
    let root = cache_root();
    let data = assemble_dataset(&config, &root)?;
    let (train, val, test) = data.sizes();
    println!(
        "dataset ready under {}: {train} train / {val} val / {test} test",
        root.display()
    );
    Ok(())
}
