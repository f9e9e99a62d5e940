use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use y00lab::lab::{self, Prepared, ScenarioConfig};
use y00lab::Error;

/// Y00 quantum-noise stream cipher laboratory.
#[derive(Parser)]
#[command(name = "y00lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transmit once and write the measurement scatter.
    Simulate(Common),
    /// Run the configured attacks and the leakage audit.
    Attack(Common),
    /// Grid of the consistent-basis ratio R(z).
    RzMap(Common),
    /// Monte Carlo attack statistics for each configured table row.
    McTable(Common),
    /// Check whether measurements can reveal the basis secret.
    Audit(Common),
    /// Compare known-plaintext narrowing across protocol types.
    Kpa(Common),
}

#[derive(Args)]
struct Common {
    /// JSON scenario file. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn prepare(&self) -> Result<Prepared> {
        let (mut config, base) = match &self.config {
            Some(path) => {
                let config = ScenarioConfig::load(path)?;
                let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
                (config, base)
            }
            None => (ScenarioConfig::default(), PathBuf::from(".")),
        };
        if let Some(out) = &self.output {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(Prepared::new(&config, &base)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate(c)
        | Command::Attack(c)
        | Command::RzMap(c)
        | Command::McTable(c)
        | Command::Audit(c)
        | Command::Kpa(c) => c,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        anyhow::ensure!(n > 0, Error::InvalidArgument("--workers must be at least 1".into()));
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    let prepared = common.prepare()?;
    let out = prepared.config.output_dir.display().to_string();
    pool.install(|| -> Result<()> {
        match &cli.command {
            Command::Simulate(_) => {
                lab::run_simulate(&prepared)?;
            }
            Command::Attack(_) => {
                let o = lab::run_scenario(&prepared)?;
                if let Some(rank) = o.true_rank {
                    println!("true secret rank: {rank}");
                }
                if let Some(s) = o.exclusion_survivors {
                    println!("exclusion survivors: {s}");
                }
                println!("{}", o.audit.verdict());
            }
            Command::RzMap(_) => {
                lab::run_rz_map(&prepared)?;
            }
            Command::McTable(_) => {
                lab::run_mc_table(&prepared)?;
            }
            Command::Audit(_) => {
                let (_, report) = lab::run_audit(&prepared)?;
                println!("{}", report.verdict());
            }
            Command::Kpa(_) => {
                lab::run_kpa(&prepared)?;
            }
        }
        Ok(())
    })?;
    eprintln!("artifacts written to {out}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidArgument(_)
        | Error::Constellation(_)
        | Error::IndexOutOfRange { .. }
        | Error::LengthMismatch { .. }
        | Error::Undefined(_) => 2,
        Error::Io { .. } | Error::Csv(_) => 3,
        Error::Invariant(_) => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
