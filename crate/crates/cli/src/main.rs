use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthinfer::harness::{
    load_case_study_config, load_sim_config, replay_simulation, run_case_study, run_simulation,
    CaseStudyConfig, RunOptions, SimConfig,
};
use synthinfer::io::{read_dataset, read_toml, write_dataset};
use synthinfer::{dgp, Error};

/// Benchmark the inferential utility of synthetic tabular data.
///
/// Progress goes to standard error (set RUST_LOG=warn to quieten it);
/// results go only to files.
#[derive(Parser)]
#[command(name = "synthinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo simulation campaign over the built-in process.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for runs.jsonl and the reports.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run the coverage study over a finite population file.
    CaseStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Regenerate the reports of a simulation from its runs.jsonl.
    Report {
        /// The runs.jsonl written by `simulate`.
        runs: PathBuf,
        /// The simulation config the runs were produced with.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a simulation or case-study config and list every problem.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write one dataset drawn from the process as CSV.
    GenData {
        /// Config whose [dgp] table sets the parameters; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunFlags {
    /// Worker threads (default: available parallelism).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Keep completed runs from an existing runs.jsonl in the output directory.
    #[arg(long)]
    resume: bool,
}

impl RunFlags {
    fn options(&self, out: &Path) -> RunOptions {
        RunOptions {
            out_dir: Some(out.to_path_buf()),
            workers: self.workers.map(|w| w as usize),
            resume: self.resume,
        }
    }
}

/// A failure and the exit code it maps to.
enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    /// Config-file problems found after loading are still config errors.
    fn runtime(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn is_case_study(path: &Path) -> Result<bool, Failure> {
    let table: toml::Table = read_toml(path).map_err(Failure::Config)?;
    Ok(table.contains_key("population"))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { config, out, run } => {
            let cfg = load_sim_config(&config).map_err(Failure::Config)?;
            let output = run_simulation(&cfg, &run.options(&out)).map_err(Failure::runtime)?;
            eprintln!(
                "{} run records, {} aggregate cells written to {}",
                output.records.len(),
                output.summary.cells.len(),
                out.display()
            );
        }
        Command::CaseStudy { config, out, run } => {
            let cfg = load_case_study_config(&config).map_err(Failure::Config)?;
            let output = run_case_study(&cfg, &run.options(&out)).map_err(Failure::runtime)?;
            eprintln!(
                "{} run records over a population of {} rows written to {}",
                output.records.len(),
                output.population_size,
                out.display()
            );
        }
        Command::Report { runs, config, out } => {
            let cfg = load_sim_config(&config).map_err(Failure::Config)?;
            let output =
                replay_simulation(&cfg, &runs, Some(&out)).map_err(Failure::runtime)?;
            eprintln!(
                "{} aggregate cells from {} run records written to {}",
                output.summary.cells.len(),
                output.records.len(),
                out.display()
            );
        }
        Command::ValidateConfig { config } => {
            if is_case_study(&config)? {
                let cfg: CaseStudyConfig =
                    load_case_study_config(&config).map_err(Failure::Config)?;
                let population = read_dataset(&cfg.population).map_err(Failure::Config)?;
                let problems = cfg.population_violations(&population.data);
                if !problems.is_empty() {
                    return Err(Failure::Config(Error::Config(problems)));
                }
                eprintln!(
                    "{}: valid case-study config ({} population rows, {} generators, {} estimators)",
                    config.display(),
                    population.data.n_rows(),
                    cfg.generators.len(),
                    cfg.estimators.len()
                );
            } else {
                let cfg: SimConfig = load_sim_config(&config).map_err(Failure::Config)?;
                eprintln!(
                    "{}: valid simulation config (K = {}, n_grid = {:?}, {} generators, {} estimators)",
                    config.display(),
                    cfg.k,
                    cfg.n_grid,
                    cfg.generators.len(),
                    cfg.estimators.len()
                );
            }
        }
        Command::GenData {
            config,
            n,
            seed,
            out,
        } => {
            let params = match &config {
                Some(path) => {
                    let cfg: SimConfig = read_toml(path).map_err(Failure::Config)?;
                    cfg.dgp.validate().map_err(Failure::Config)?;
                    cfg.dgp
                }
                None => dgp::DgpParams::default(),
            };
            let data = dgp::generate(&params, n, seed).map_err(Failure::runtime)?;
            write_dataset(&data, &out).map_err(Failure::runtime)?;
            eprintln!("{n} rows written to {}", out.display());
        }
    }
    Ok(())
}
