use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Arg, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use reldisc::config::{ExperimentConfig, KEYS};

mod pipeline;

const OUTPUT_DIR_ENV: &str = "RELDISC_OUTPUT_DIR";

/// Relation discovery over pre-defined and novel relations.
///
/// Every command reads an optional `key = value` config file; any config key
/// can also be given as a flag (`max_epochs` becomes `--max-epochs`), and
/// flags win. `RELDISC_OUTPUT_DIR` overrides the output directory of the
/// config file.
#[derive(Parser)]
#[command(name = "reldisc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file.
    #[arg(long, short = 'c', value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset and cache the three views of every instance.
    Prepare(Common),
    /// Train on prepared artifacts; writes checkpoints and a metrics log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from `checkpoint` (default: <output_dir>/last.ckpt).
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split and report top words per cluster.
    Evaluate(Common),
    /// Label the instances of a JSON-lines file, one record per line.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Default: <output_dir>/predictions.jsonl
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Estimate the number of relations in the unlabeled split.
    EstimateK(Common),
    /// Write a small synthetic corpus, its lexicons, an encoder table and a
    /// matching config file.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        relations: usize,
        #[arg(long, default_value_t = 250)]
        per_relation: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

const CONFIG_COMMANDS: &[&str] = &["prepare", "train", "evaluate", "predict", "estimate-k"];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command_with_config_flags() -> clap::Command {
    let mut cmd = Cli::command();
    for name in CONFIG_COMMANDS {
        cmd = cmd.mut_subcommand(*name, |mut sub| {
            for key in KEYS {
                sub = sub.arg(
                    Arg::new(*key)
                        .long(flag_name(key))
                        .value_name("VALUE")
                        .help_heading("Config overrides"),
                );
            }
            sub
        });
    }
    cmd
}

/// File, then the output-directory variable, then flags.
fn resolve_config(common: &Common, flags: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => pipeline::load_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    for key in KEYS {
        if let Some(value) = flags.get_one::<String>(key) {
            cfg.set(key, value)
                .with_context(|| format!("--{}", flag_name(key)))?;
        }
    }
    cfg.validate()?;
    cfg.check_paths()?;
    Ok(cfg)
}

fn run() -> Result<ExitCode> {
    let matches = command_with_config_flags().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let flags = matches
        .subcommand()
        .map(|(_, m)| m.clone())
        .unwrap_or_default();
    match cli.command {
        Command::Prepare(common) => pipeline::prepare(&resolve_config(&common, &flags)?)?,
        Command::Train { common, resume } => {
            pipeline::train(&resolve_config(&common, &flags)?, resume)?
        }
        Command::Evaluate(common) => pipeline::evaluate(&resolve_config(&common, &flags)?)?,
        Command::Predict {
            common,
            input,
            output,
        } => {
            let failed = pipeline::predict(&resolve_config(&common, &flags)?, &input, output)?;
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::EstimateK(common) => pipeline::estimate_k(&resolve_config(&common, &flags)?)?,
        Command::Synth {
            out,
            relations,
            per_relation,
            seed,
        } => pipeline::synth(&out, relations, per_relation, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
