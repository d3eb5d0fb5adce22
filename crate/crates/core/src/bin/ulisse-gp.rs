use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ulisse_gp::workbench::commands;
use ulisse_gp::workbench::ExperimentConfig;
use ulisse_gp::Error;

#[derive(Parser)]
#[command(name = "ulisse-gp", version, about = "Gaussian-process hyperparameter sampling with SGLD and unbiased CG solves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set sgld.total_iters=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset CSV (label in the last column).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Acknowledge a multi-hour run on a large dataset.
    #[arg(long)]
    long_run: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let quote = |p: &PathBuf| format!("\"{}\"", p.display().to_string().replace('\\', "\\\\").replace('"', "\\\""));
        let mut sets = Vec::new();
        if let Some(p) = &self.data {
            sets.push(format!("dataset.path={}", quote(p)));
        }
        if let Some(p) = &self.output_dir {
            sets.push(format!("run.output_dir={}", quote(p)));
        }
        if let Some(s) = self.seed {
            sets.push(format!("run.seed={s}"));
        }
        if let Some(c) = self.chains {
            sets.push(format!("run.chains={c}"));
        }
        if let Some(w) = self.workers {
            sets.push(format!("run.workers={w}"));
        }
        if self.long_run {
            sets.push("run.long_run=true".into());
        }
        sets.extend(self.set.iter().cloned());
        ExperimentConfig::load(self.config.as_deref(), &sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and standardize the dataset; write its scaler.
    Ingest(Common),
    /// MAP estimate and Hessian preconditioner on a subset.
    Map(Common),
    /// Preconditioned SGLD chains with stochastic gradients.
    SampleSgld(Common),
    /// Random-walk Metropolis-Hastings chains on the exact posterior.
    SampleMh(Common),
    /// PSRF, effective sample sizes and running summaries for chain files.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Burn-in for chains without a recorded freeze.
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(required = true, value_name = "CHAIN_CSV")]
        files: Vec<PathBuf>,
    },
    /// Posterior predictive mean and variance at test inputs.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        chain: PathBuf,
        /// Test inputs CSV; overrides `predict.inputs`.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Condition numbers of K under parameter draws from a Gamma prior.
    ConditionSweep(Common),
    /// Relative error and cost of stochastic gradients against the exact gradient.
    GradientCheck(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    let manifest = match cli.command {
        Command::Ingest(c) => commands::ingest(&c.load()?)?,
        Command::Map(c) => commands::map(&c.load()?)?,
        Command::SampleSgld(c) => commands::sample_sgld(&c.load()?)?,
        Command::SampleMh(c) => commands::sample_mh(&c.load()?)?,
        Command::Diagnose { common, burn_in, files } => {
            commands::diagnose(&common.load()?, &files, burn_in)?
        }
        Command::Predict { common, chain, inputs, stride } => {
            let mut cfg = common.load()?;
            if inputs.is_some() {
                cfg.predict.inputs = inputs;
            }
            if stride.is_some() {
                cfg.predict.stride = stride;
            }
            cfg.validate()?;
            commands::predict(&cfg, &chain)?
        }
        Command::ConditionSweep(c) => commands::run_condition_sweep(&c.load()?)?,
        Command::GradientCheck(c) => commands::gradient_check(&c.load()?)?,
    };
    for o in &manifest.outputs {
        println!("{o}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error [{category}]: {e}");
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
