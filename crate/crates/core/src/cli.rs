//! Command-line front end. The `fedveca` binary is a thin wrapper around
//! [`main_with`].

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::baselines::{compare, run_seeds, Setup};
use crate::config::{parse_config, Algo, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{write_metrics, MetricRecord, OutputFormat};
use crate::transport::TransportKind;

/// Environment variable holding the log filter (`error`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "FEDVECA_LOG";

#[derive(Debug, Parser)]
#[command(name = "fedveca", version, about = "Federated learning simulator with adaptive local step counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one algorithm and write per-round metrics.
    Run(RunArgs),
    /// Run FedVeca, the budget-matched FedNova and FedAvg, then centralized SGD.
    Compare(RunArgs),
    /// Data partition tools.
    Partition {
        #[command(subcommand)]
        action: PartitionCommand,
    },
    /// Parse and check a config file without running anything.
    ValidateConfig(ConfigArg),
}

#[derive(Debug, Subcommand)]
pub enum PartitionCommand {
    /// Print per-client label histograms.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub algo: Option<Algo>,
    /// Comma-separated seed list; overrides the config.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `inproc` or `socket:<port>`.
    #[arg(long)]
    pub transport: Option<TransportKind>,
    /// Write JSON lines instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub json: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = parse_config(&self.config)?;
        if let Some(a) = self.algo {
            cfg.algo = a;
        }
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(t) = self.transport {
            cfg.transport = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self) -> OutputFormat {
        if self.json {
            OutputFormat::JsonLines
        } else {
            OutputFormat::Csv
        }
    }
}

#[derive(Debug, Serialize)]
struct ShardSummary {
    client: usize,
    size: usize,
    labels: Vec<usize>,
}

fn summarize(records: &[MetricRecord], out: &mut dyn Write) -> Result<()> {
    let mut last: Vec<&MetricRecord> = Vec::new();
    for r in records {
        match last.iter_mut().find(|l| l.algo == r.algo && l.seed == r.seed) {
            Some(l) if l.round < r.round => *l = r,
            Some(_) => {}
            None => last.push(r),
        }
    }
    for r in last {
        writeln!(
            out,
            "{:<12} seed {:<6} round {:>4}  test loss {:.6}  accuracy {:.4}",
            r.algo, r.seed, r.round, r.loss, r.accuracy
        )?;
    }
    Ok(())
}

/// Runs the CLI against explicit arguments, writing human-readable output
/// to `out`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg).trim_end().to_string();
            return Err(Error::InvalidArgument(msg));
        }
    };
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            info!("running {} for seeds {:?}", cfg.algo, cfg.seeds);
            let records = run_seeds(cfg.algo, &cfg)?;
            write_metrics(&records, &cfg.output, args.format())?;
            summarize(&records, out)?;
            writeln!(out, "wrote {} rows to {}", records.len(), cfg.output.display())?;
        }
        Command::Compare(args) => {
            if args.algo.is_some() {
                return Err(Error::InvalidArgument(
                    "compare always runs every algorithm; drop --algo".into(),
                ));
            }
            let cfg = args.resolve()?;
            let records = compare(&cfg)?;
            write_metrics(&records, &cfg.output, args.format())?;
            summarize(&records, out)?;
            writeln!(out, "wrote {} rows to {}", records.len(), cfg.output.display())?;
        }
        Command::Partition {
            action: PartitionCommand::Inspect(args),
        } => {
            let mut cfg = parse_config(&args.config)?;
            if !args.seed.is_empty() {
                cfg.seeds = args.seed.clone();
            }
            for &seed in &cfg.seeds {
                let setup = Setup::build(&cfg, seed)?;
                let hist = setup.plan.label_histograms(&setup.train);
                let rows: Vec<ShardSummary> = hist
                    .into_iter()
                    .enumerate()
                    .map(|(client, labels)| ShardSummary {
                        client,
                        size: labels.iter().sum(),
                        labels,
                    })
                    .collect();
                if args.json {
                    for r in &rows {
                        serde_json::to_writer(&mut *out, r)?;
                        writeln!(out)?;
                    }
                } else {
                    writeln!(out, "seed {seed}, partition {:?}, {} clients", cfg.partition, rows.len())?;
                    for r in &rows {
                        let labels: Vec<String> = r.labels.iter().map(|c| c.to_string()).collect();
                        writeln!(out, "  client {:>3}  size {:>6}  labels [{}]", r.client, r.size, labels.join(" "))?;
                    }
                }
            }
        }
        Command::ValidateConfig(args) => {
            let cfg = parse_config(&args.config)?;
            cfg.validate()?;
            writeln!(out, "{}: ok ({}, {} clients, {} rounds)", args.config.display(), cfg.algo, cfg.n_clients, cfg.rounds)?;
        }
    }
    Ok(())
}

/// Initializes logging from `FEDVECA_LOG` (default `warn`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
}
