//! `fedtensor` command-line driver.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! command fails while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};
use fedtensor::report::Method;

use commands::{Ctx, Failure, RunArgs};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "fedtensor", version, about = "Federated CP tensor factorization")]
struct Cli {
    /// Seed for data generation, partitioning and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Role {
    Coordinator,
    Participant,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fedtensor::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a patient × medication × lab tensor from an events CSV.
    BuildTensor {
        #[arg(long)]
        events: PathBuf,
    },
    /// Generate a synthetic low-rank count tensor.
    Synth,
    /// Split a tensor's patients across hospitals.
    Partition {
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        hospitals: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
    },
    /// Align the feature vocabularies of several shards and print region sizes.
    Align {
        #[arg(long = "shard", required = true)]
        shards: Vec<PathBuf>,
    },
    /// Fit one model and write its trace.
    Run {
        /// federated, central or local
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Full tensor, partitioned per the config.
        #[arg(long, conflicts_with = "shards")]
        tensor: Option<PathBuf>,
        /// Pre-partitioned shards, one per hospital.
        #[arg(long = "shard")]
        shards: Vec<PathBuf>,
        #[arg(long)]
        hospitals: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
    },
    /// Run the configured experiment grid and write report.csv / report.json.
    Sweep {
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
    /// Run one party of a federated fit over TCP.
    Serve {
        #[arg(long, value_enum)]
        role: Role,
        /// Coordinator: address to listen on. Participant: address to connect to.
        #[arg(long)]
        addr: Option<String>,
        /// Coordinator: number of hospitals to wait for.
        #[arg(long)]
        hospitals: Option<usize>,
        /// Coordinator: feature-mode sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        feature_sizes: Vec<usize>,
        /// Participant: hospital id.
        #[arg(long)]
        hospital: Option<u16>,
        /// Participant: shard file.
        #[arg(long)]
        shard: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    cfg.validate().map_err(Failure::Usage)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx {
        cfg,
        out,
        seed_flag: cli.seed,
    };
    let skew_ok = |s: Option<f64>| match s {
        Some(v) if !(0.0..1.0).contains(&v) => Err(Failure::Usage(format!("--skew {v} outside [0, 1)"))),
        _ => Ok(()),
    };
    match cli.command {
        Command::BuildTensor { events } => commands::build_tensor(&ctx, &events),
        Command::Synth => commands::synth(&ctx),
        Command::Partition { tensor, hospitals, skew } => {
            skew_ok(skew)?;
            let k = hospitals.unwrap_or(ctx.cfg.federation.hospitals);
            commands::partition(&ctx, tensor.as_deref(), k, skew.unwrap_or(ctx.cfg.partition.skew))
        }
        Command::Align { shards } => commands::align(&ctx, &shards),
        Command::Run {
            method,
            tensor,
            shards,
            hospitals,
            skew,
        } => {
            skew_ok(skew)?;
            commands::run(
                &ctx,
                RunArgs {
                    method,
                    tensor: tensor.as_deref(),
                    shards: &shards,
                    hospitals,
                    skew,
                },
            )
        }
        Command::Sweep { tensor } => commands::sweep_cmd(&ctx, tensor.as_deref()),
        Command::Serve {
            role,
            addr,
            hospitals,
            feature_sizes,
            hospital,
            shard,
        } => match role {
            Role::Coordinator => {
                let addr = addr.unwrap_or_else(|| ctx.cfg.federation.listen.clone());
                let k = hospitals.unwrap_or(ctx.cfg.federation.hospitals);
                commands::serve_coordinator(&ctx, &addr, k, &feature_sizes)
            }
            Role::Participant => {
                let (Some(addr), Some(id), Some(shard)) = (addr, hospital, shard) else {
                    return Err(Failure::Usage("a participant needs --addr, --hospital and --shard".into()));
                };
                commands::serve_participant(&ctx, &addr, id, &shard)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
