//! `ncelab`: generate synthetic data, train contrastive encoders over a
//! grid, diagnose embeddings, and run the sphere and mildness studies.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::DiagnoseInput;
use crate::config::ExperimentConfig;
use crate::error::{exit, CliError, CliResult};

#[derive(Parser)]
#[command(name = "ncelab", version, about = "Contrastive-learning Gaussianity laboratory")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Configuration override; may be repeated.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides `out`).
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, mut extra: Vec<String>) -> CliResult<ExperimentConfig> {
        let mut overrides = self.set.clone();
        overrides.append(&mut extra);
        if let Some(out) = &self.out {
            overrides.push(format!("out = {}", toml_string(&out.to_string_lossy())));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset as an NCEG file plus JSON metadata.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Data kind followed by KEY=VALUE overrides, e.g. `laplace n=20000`.
        #[arg(value_name = "KIND|KEY=VALUE")]
        args: Vec<String>,
    },
    /// Train one encoder per (dims × batch_sizes) cell.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue each cell from its checkpoint when one exists.
        #[arg(long)]
        resume: bool,
        /// Worker threads for grid cells.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Gaussianity diagnostics for an embedding file or a trained checkpoint.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_name = "FILE",
            conflicts_with = "checkpoint",
            required_unless_present = "checkpoint"
        )]
        embeddings: Option<PathBuf>,
        /// Checkpoint; held-out rows come from the configured dataset.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Test the unit-normalized rows instead of the raw ones.
        #[arg(long)]
        normalized: bool,
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Distance of scaled sphere projections to the Gaussian across dimensions.
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        k: Option<usize>,
        /// Comma-separated dimension grid.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Estimate the augmentation mildness of a channel.
    Hgr {
        #[command(flatten)]
        common: Common,
        /// gaussian_mix, bit_flip or component_resample.
        #[arg(long)]
        channel: Option<String>,
        /// Mixing coefficient of the Gaussian channel.
        #[arg(long)]
        mix: Option<f64>,
        /// auto, analytic_gaussian or binned_svd.
        #[arg(long)]
        method: Option<String>,
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
}

fn key_values(args: Vec<String>) -> CliResult<Vec<String>> {
    args.into_iter()
        .map(|a| {
            if a.contains('=') {
                Ok(a)
            } else {
                Err(CliError::Usage(format!("expected KEY=VALUE, got `{a}`")))
            }
        })
        .collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { common, args } => {
            let (kinds, mut rest): (Vec<String>, Vec<String>) = args.into_iter().partition(|a| !a.contains('='));
            match kinds.as_slice() {
                [] => {}
                [kind] => rest.insert(0, format!("data = {}", toml_string(kind))),
                _ => return Err(CliError::Usage("at most one data kind".into())),
            }
            let cfg = common.load(rest)?;
            let path = commands::gen(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train {
            common,
            resume,
            jobs,
            args,
        } => {
            let cfg = common.load(key_values(args)?)?;
            commands::train(&cfg, resume, jobs)?;
            println!("{}", cfg.out.join("cv_vs_batch.csv").display());
        }
        Command::Diagnose {
            common,
            embeddings,
            checkpoint,
            normalized,
            args,
        } => {
            let cfg = common.load(key_values(args)?)?;
            let input = match (&embeddings, &checkpoint) {
                (Some(p), None) => DiagnoseInput::Embeddings(p),
                (None, Some(p)) => DiagnoseInput::Checkpoint(p),
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --embeddings or --checkpoint".into(),
                    ))
                }
            };
            let report = commands::diagnose(&cfg, input, normalized)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Clt {
            common,
            k,
            dims,
            n,
            args,
        } => {
            let mut extra = key_values(args)?;
            extra.extend(k.map(|k| format!("clt_k = {k}")));
            extra.extend(n.map(|n| format!("clt_n = {n}")));
            if !dims.is_empty() {
                let list: Vec<String> = dims.iter().map(usize::to_string).collect();
                extra.push(format!("clt_dims = [{}]", list.join(", ")));
            }
            let cfg = common.load(extra)?;
            commands::clt(&cfg)?;
            println!("{}", cfg.out.join("clt.csv").display());
        }
        Command::Hgr {
            common,
            channel,
            mix,
            method,
            args,
        } => {
            let mut extra = key_values(args)?;
            extra.extend(channel.map(|c| format!("channel = {}", toml_string(&c))));
            extra.extend(mix.map(|a| format!("mix = {a}")));
            extra.extend(method.map(|m| format!("hgr_method = {}", toml_string(&m))));
            let cfg = common.load(extra)?;
            let est = commands::hgr(&cfg)?;
            println!("{}", serde_json::to_string(&est)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
