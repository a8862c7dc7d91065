//! Command-line harness: simulate, estimate, predict, calibrate, sweep and
//! verify, with reproducible seeds and provenance-stamped outputs.

mod commands;
mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use twinlab_core::io::frameset::{load, load_verified, save, to_bytes, write_csv};
use twinlab_core::io::{hex, ExperimentConfig, Report};
use twinlab_core::verify;

use table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Binary FrameSet files and JSON reports.
    Native,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "twinlab", version, about = "Twin-beam and thermal photon-correlation laboratory")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Native)]
    format: Format,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a FrameSet from a configuration.
    Simulate,
    /// Estimate photon statistics from a FrameSet.
    Estimate {
        /// FrameSet file.
        input: PathBuf,
        /// Jackknife blocks when no configuration is given.
        #[arg(long, default_value_t = 32)]
        blocks: usize,
    },
    /// Tabulate closed-form predictions for a configuration.
    Predict,
    /// Estimate detector efficiencies and compare with the injected values.
    Calibrate {
        /// Analog frames to calibrate instead of simulating them.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Fail (exit 4) when an estimate lies more than this many standard
        /// errors from its injected value.
        #[arg(long)]
        check: Option<f64>,
    },
    /// Measured against predicted along the configured sweep axis.
    Sweep,
    /// Run the acceptance criteria.
    Verify {
        /// Comma-separated criterion numbers; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

const DEFAULT_VERIFY_SEED: u64 = 20240601;

/// A statistical check that did not pass.
#[derive(Debug)]
struct StatisticalFailure(String);

impl std::fmt::Display for StatisticalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for StatisticalFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The reader of standard output went away (`| head`).
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c.downcast_ref::<io::Error>().or_else(|| match c.downcast_ref::<twinlab_core::Error>() {
            Some(twinlab_core::Error::Io(e)) => Some(e),
            _ => None,
        });
        io.is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

/// 2 for configuration errors, 3 for data errors, 4 for failed statistical
/// checks, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    use twinlab_core::Error as E;
    if e.downcast_ref::<StatisticalFailure>().is_some() {
        return 4;
    }
    match e.downcast_ref::<E>() {
        Some(E::Config(_) | E::Domain(_)) => 2,
        Some(E::Data(_) | E::Format(_) | E::Estimator(_) | E::Io(_)) => 3,
        None => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Simulate => {
            let cfg = config(cli)?;
            let fs = commands::simulate(&cfg)?;
            log::info!("simulated {} frames of {} pixels, config {}", fs.frames(), fs.pixels(), cfg.hash_hex());
            match (cli.format, &cli.out) {
                (Format::Native, Some(path)) => save(&fs, path)?,
                (Format::Native, None) => io::stdout().lock().write_all(&to_bytes(&fs)?)?,
                (Format::Csv, out) => write_csv(&fs, writer(out.as_deref())?)?,
            }
        }
        Command::Estimate { input, blocks } => {
            let cfg = cli.config.as_ref().map(|_| config(cli)).transpose()?;
            let fs = match &cfg {
                Some(c) => load_verified(input, &c.hash())?,
                None => load(input)?,
            };
            let blocks = cfg.as_ref().map_or(*blocks, |c| c.blocks);
            let t = commands::estimate(&fs, cfg.as_ref(), blocks)?;
            let protocol = cfg.as_ref().map_or("frames".to_string(), protocol_name);
            emit(cli, &t, Report::with_provenance(protocol, fs.header.seed, hex(&fs.header.config_hash), t.records()))?;
        }
        Command::Predict => {
            let cfg = config(cli)?;
            let t = commands::predict(&cfg)?;
            emit(cli, &t, Report::new(&cfg, t.records()))?;
        }
        Command::Calibrate { input, check } => {
            let cfg = config(cli)?;
            let frames = input.as_ref().map(load).transpose()?;
            let t = commands::calibrate(&cfg, frames.as_ref())?;
            emit(cli, &t, Report::new(&cfg, t.records()))?;
            let z = commands::max_abs_z(&t);
            if let Some(k) = check.filter(|&k| z > k) {
                return Err(StatisticalFailure(format!("an estimate lies {z:.2} standard errors from its injected value (limit {k})")).into());
            }
        }
        Command::Sweep => {
            let cfg = config(cli)?;
            let t = commands::sweep(&cfg)?;
            emit(cli, &t, Report::new(&cfg, t.records()))?;
        }
        Command::Verify { criteria } => verify_cmd(cli, criteria)?,
    }
    Ok(())
}

fn protocol_name(cfg: &ExperimentConfig) -> String {
    serde_json::to_value(cfg.protocol).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| twinlab_core::Error::Config("this command needs --config".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// A table as CSV, or the provenance-stamped JSON report.
fn emit<T: serde::Serialize>(cli: &Cli, t: &Table, report: Report<T>) -> Result<()> {
    let mut w = writer(cli.out.as_deref())?;
    match cli.format {
        Format::Csv => t.write_csv(&mut w)?,
        Format::Native => writeln!(w, "{}", report.to_json()?)?,
    }
    w.flush()?;
    Ok(())
}

fn verify_cmd(cli: &Cli, criteria: &[u8]) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_VERIFY_SEED);
    let ids: Vec<u8> = if criteria.is_empty() { verify::CRITERIA.iter().map(|c| c.0).collect() } else { criteria.to_vec() };
    let mut results = Vec::new();
    for &id in &ids {
        let r = verify::run(id, seed);
        eprintln!("{}", r.summary());
        for c in r.checks.iter().filter(|c| !c.pass) {
            eprintln!("    FAIL {}: {}", c.label, c.detail);
        }
        results.push(r);
    }
    let mut t = Table::new(&["criterion", "name", "check", "pass", "detail"]);
    for r in &results {
        for c in &r.checks {
            t.push(vec![
                table::int(r.id),
                table::text(&r.name),
                table::text(&c.label),
                serde_json::Value::Bool(c.pass),
                table::text(&c.detail),
            ]);
        }
    }
    if cli.out.is_some() || cli.format == Format::Csv {
        emit(cli, &t, Report::with_provenance("verify", seed, "builtin".into(), &results))?;
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.pass).map(|r| r.id.to_string()).collect();
    if !failed.is_empty() {
        return Err(StatisticalFailure(format!("criteria {} failed (seed {seed})", failed.join(", "))).into());
    }
    Ok(())
}
