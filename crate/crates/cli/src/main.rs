use clap::{Parser, Subcommand};
use srqa_cli::config::{Overrides, RunConfig};
use srqa_core::corpus::Split;
use srqa_core::error::{Result, SrqaError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "srqa",
    version,
    about = "Extractive question answering over spliced evidence: train, evaluate, sweep, compare, synthesize"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoints plus a JSONL run log.
    Train {
        #[command(flatten)]
        ov: Overrides,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        ov: Overrides,
        /// Which split to score: train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Generate a synthetic dataset split 80/10/10.
    Synth {
        #[command(flatten)]
        ov: Overrides,
    },
    /// Train one model per (epsilon, seed) and emit a CSV of scores.
    Sweep {
        #[command(flatten)]
        ov: Overrides,
        /// Comma list of intensity values; 0 runs the unperturbed baseline.
        #[arg(long)]
        epsilons: String,
        /// Number of seeds per epsilon (seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Agreement report over two or three prediction dumps.
    Compare {
        #[arg(required = true, num_args = 2..=3)]
        dumps: Vec<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(SrqaError::config(format!(
            "unknown split {other:?}; expected train, validation or test"
        ))),
    }
}

fn parse_epsilons(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| SrqaError::config(format!("bad epsilon {v:?}: {e}")))
        })
        .collect()
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { ov } => {
            let cfg = RunConfig::load(&ov)?;
            cmd_train_entry(&cfg)
        }
        Cmd::Eval { ov, split } => {
            let cfg = RunConfig::load(&ov)?;
            let split = parse_split(&split)?;
            srqa_cli::cmd_eval(&cfg, split).map(|_| ())
        }
        Cmd::Synth { ov } => {
            let cfg = RunConfig::load(&ov)?;
            let out = cfg.out.clone();
            srqa_cli::cmd_synth(&cfg, &out, cfg.train.seed).map(|_| ())
        }
        Cmd::Sweep { ov, epsilons, seeds } => {
            let cfg = RunConfig::load(&ov)?;
            let epsilons = parse_epsilons(&epsilons)?;
            srqa_cli::cmd_sweep(&cfg, &epsilons, seeds).map(|_| ())
        }
        Cmd::Compare { dumps } => srqa_cli::cmd_compare(&dumps).map(|_| ()),
    }
}

fn cmd_train_entry(cfg: &RunConfig) -> Result<()> {
    srqa_cli::cmd_train(cfg).map(|_| ())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version print to stdout with status 0; real usage
            // errors are config errors (exit 1)
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
