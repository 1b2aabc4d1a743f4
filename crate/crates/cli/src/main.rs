use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kaleido_core::harness::{run_experiment_with, MatrixSpec};
use kaleido_core::{checks, run_matrix, RunConfig};

#[derive(Parser)]
#[command(name = "kaleido", version, about = "Goal-conditioned DDPG with KER/GER replay augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve as CSV.
    Train(TrainArgs),
    /// Run a grid of configurations over several seeds.
    Matrix {
        /// Matrix description (key = value lines).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the file's `jobs` setting.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the invariant and property self-checks.
    Check,
}

#[derive(Args)]
struct TrainArgs {
    /// Base configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    ker_n: Option<usize>,
    #[arg(long)]
    ker_mode: Option<String>,
    #[arg(long)]
    ger_k: Option<usize>,
    /// Comma-separated thresholds, one per GER application.
    #[arg(long)]
    ger_epsilons: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record elapsed seconds in the CSV (breaks byte-for-byte reproducibility).
    #[arg(long)]
    wall_clock: bool,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

impl TrainArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 8] = [
            ("env", self.env.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("ker_n", self.ker_n.map(|v| v.to_string())),
            ("ker_mode", self.ker_mode.clone()),
            ("ger_k", self.ger_k.map(|v| v.to_string())),
            ("ger_epsilons", self.ger_epsilons.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.wall_clock {
            cfg.wall_clock = true;
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.to_config()?;
    let quiet = args.quiet;
    let records = run_experiment_with(&cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  steps {:>6}  success {:.2}  critic {:.4}  actor {:.4}",
                r.epoch, r.real_steps, r.success_rate, r.critic_loss, r.actor_loss
            );
        }
    })?;
    if cfg.out.is_none() {
        println!("{}", kaleido_core::CSV_HEADER);
        for r in &records {
            println!("{}", r.csv_row());
        }
    }
    Ok(())
}

fn matrix(spec: PathBuf, out_dir: PathBuf, jobs: Option<usize>) -> Result<()> {
    let mut spec = MatrixSpec::from_file(&spec).with_context(|| format!("reading {}", spec.display()))?;
    if let Some(j) = jobs {
        spec.jobs = j.max(1);
    }
    eprintln!(
        "running {} configurations x {} seeds",
        spec.cells.len(),
        spec.seeds.len()
    );
    let report = run_matrix(&spec, &out_dir)?;
    for cell in &report.cells {
        for (seed, r) in &cell.runs {
            if let Err(e) = r {
                eprintln!("{} seed {seed} failed: {e}", cell.name);
            }
        }
    }
    print!("{}", report.auc_ordering());
    println!("summary written to {}", out_dir.join("summary.csv").display());
    Ok(())
}

fn check() -> bool {
    let mut ok = true;
    for c in checks::run_all() {
        println!(
            "[{}] {} ({:.2}s): {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.seconds,
            c.detail
        );
        ok &= c.passed;
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Matrix { spec, out_dir, jobs } => matrix(spec, out_dir, jobs),
        Command::Check => {
            return if check() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
