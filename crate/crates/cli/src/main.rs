//! `rsm` command line: toy Boltzmann experiments, RL training, and policy
//! evaluation.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 IO/checkpoint error,
//! 4 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsm::algo::{evaluate_policy, load_checkpoint, run_training, TrainConfig};
use rsm::boltzmann::{run_boltzmann, BoltzmannConfig};
use rsm::env::make_env;
use rsm::report::{write_json, write_samples_csv, RunManifest};
use rsm::Error;

#[derive(Parser)]
#[command(
    name = "rsm",
    about = "Diffusion samplers from energy functions (reweighted score matching) and the DPMD/SDAC online-RL algorithms",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train or run a toy Boltzmann sampler and write samples + metrics.
    Boltzmann(BoltzmannArgs),
    /// Run DPMD or SDAC training on a built-in environment.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BoltzmannArgs {
    /// Target density: gmm | twomoon | gauss1d
    #[arg(long)]
    target: String,
    /// Training/sampling method: rsm | dsm | langevin
    #[arg(long)]
    method: String,
    /// Sampling distribution for the reweighted loss: gaussian | uniform
    #[arg(long, default_value = "gaussian")]
    h: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for samples.csv, metrics.json, manifest.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    t_steps: Option<usize>,
    /// linear | cosine
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    cosine_s: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
    /// batch_max | per_time_slice | per_point
    #[arg(long)]
    energy_weight_norm: Option<String>,
    /// phi | defensive
    #[arg(long)]
    proposal: Option<String>,
    #[arg(long)]
    proposal_sigma: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Langevin chain length (`--method langevin`)
    #[arg(long)]
    steps: Option<usize>,
    /// Langevin step size
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// dpmd | sdac
    #[arg(long)]
    algo: Option<String>,
    /// bandit | pointmass | pendulum
    #[arg(long)]
    env: Option<String>,
    /// JSON config file (full schema; unknown keys rejected)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Evaluate every K iterations
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    total_iters: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Json(_) | Error::GridTooCoarse { .. } => 2,
        Error::Io(_) | Error::Checkpoint(_) | Error::MissingOracle(_) => 3,
        Error::NumericalAbort { .. } | Error::NonFinite(_) | Error::TimeOutOfRange { .. } => 4,
    }
}

fn run_boltzmann_cmd(a: BoltzmannArgs) -> rsm::Result<()> {
    let mut cfg = BoltzmannConfig::table_defaults(&a.target, &a.method, &a.h, a.seed);
    if let Some(v) = a.t_steps {
        cfg.t_steps = v;
    }
    if let Some(v) = a.schedule {
        cfg.schedule = v;
    }
    if let Some(v) = a.beta_start {
        cfg.beta_start = v;
    }
    if let Some(v) = a.beta_end {
        cfg.beta_end = v;
    }
    if let Some(v) = a.cosine_s {
        cfg.cosine_s = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        cfg.steps_per_epoch = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.hidden_layers {
        cfg.hidden_layers = v;
    }
    if let Some(v) = a.hidden_width {
        cfg.hidden_width = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.k_samples {
        cfg.k_samples = v;
    }
    if let Some(v) = a.energy_weight_norm {
        cfg.energy_weight_norm = v;
    }
    if let Some(v) = a.proposal {
        cfg.proposal = v;
    }
    if let Some(v) = a.proposal_sigma {
        cfg.proposal_sigma = v;
    }
    if let Some(v) = a.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = a.steps {
        cfg.langevin_steps = v;
    }
    if let Some(v) = a.eta {
        cfg.langevin_eta = v;
    }
    std::fs::create_dir_all(&a.out)?;
    let manifest = RunManifest::new(&cfg, cfg.seed)?;
    let outcome = run_boltzmann(&cfg)?;
    write_samples_csv(&a.out.join("samples.csv"), &outcome.samples)?;
    write_json(&a.out.join("metrics.json"), &outcome.metrics)?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn run_train_cmd(a: TrainArgs) -> rsm::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let cfg: TrainConfig = serde_json::from_reader(file)?;
            cfg
        }
        None => {
            let algo = a.algo.clone().unwrap_or_else(|| "dpmd".into());
            let env = a.env.clone().unwrap_or_else(|| "pendulum".into());
            TrainConfig::defaults(&algo, &env, 0)
        }
    };
    if let Some(v) = a.algo {
        cfg.algorithm = v;
    }
    if let Some(v) = a.env {
        cfg.env = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = a.total_iters {
        cfg.total_iters = v;
    }
    cfg.validate()?;
    run_training(cfg, Some(&a.out))?;
    Ok(())
}

fn run_eval_cmd(a: EvalArgs) -> rsm::Result<()> {
    if a.episodes == 0 {
        return Err(Error::invalid("need at least one evaluation episode"));
    }
    let (state, _env) = load_checkpoint(&a.checkpoint)?;
    let mut eval_env = make_env(&state.config.env)?;
    let result = evaluate_policy(&state, eval_env.as_mut(), a.episodes, a.seed)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Boltzmann(a) => run_boltzmann_cmd(a),
        Command::Train(a) => run_train_cmd(a),
        Command::Eval(a) => run_eval_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
