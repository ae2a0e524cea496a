use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eholod::harness::{
    run_convergence, run_decay_study, run_localization_sweep, run_solve, summary_table, write_csv, write_decay_csv,
    ExperimentConfig,
};
use eholod::{Error, Precision};

#[derive(Parser)]
#[command(name = "eholod", version, about = "Enriched higher-order LOD experiments for parabolic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run per coarse size H; writes convergence.csv.
    Convergence(Common),
    /// One run per localization parameter at the first H; writes localization.csv.
    Localization(Common),
    /// Exterior-energy fractions of global basis functions; writes decay.csv and decay_fit.csv.
    Decay(Common),
    /// A single run at the first H and ell, with optional dumps; writes solve.csv.
    Solve(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. `--set p=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["double", "extended"])]
    precision: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim()).map_err(Error::Config)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.precision {
            cfg.precision = p.parse::<Precision>().map_err(Error::Config)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<bool, Error> {
    match command {
        Command::Convergence(c) => {
            let cfg = c.load()?;
            let records = run_convergence(&cfg)?;
            let path = cfg.out.join("convergence.csv");
            write_csv(&path, &records)?;
            print!("{}", summary_table(&records));
            println!("wrote {}", path.display());
            Ok(records.iter().all(|r| r.is_ok()))
        }
        Command::Localization(c) => {
            let cfg = c.load()?;
            let report = run_localization_sweep(&cfg)?;
            let path = cfg.out.join("localization.csv");
            write_csv(&path, &report.records)?;
            print!("{}", summary_table(&report.records));
            match report.saturation {
                Some(ell) => println!("saturation at ell = {ell}"),
                None => println!("no successful runs"),
            }
            println!("wrote {}", path.display());
            Ok(report.records.iter().all(|r| r.is_ok()))
        }
        Command::Decay(c) => {
            let cfg = c.load()?;
            let report = run_decay_study(&cfg)?;
            write_decay_csv(&cfg.out, &report)?;
            println!("{:>7} {:>5} {:>5} {:>10} {:>7} {:>6}", "element", "local", "level", "slope", "r2", "points");
            for f in &report.fits {
                println!(
                    "{:>7} {:>5} {:>5} {:>10.4} {:>7.4} {:>6}",
                    f.element, f.local, f.level, f.slope, f.r2, f.points
                );
            }
            println!("wrote {}", cfg.out.join("decay.csv").display());
            Ok(true)
        }
        Command::Solve(c) => {
            let cfg = c.load()?;
            let record = run_solve(&cfg)?;
            let path = cfg.out.join("solve.csv");
            write_csv(&path, std::slice::from_ref(&record))?;
            print!("{}", summary_table(std::slice::from_ref(&record)));
            println!("wrote {}", path.display());
            Ok(record.is_ok())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
