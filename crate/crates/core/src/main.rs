use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use sslbpinn::export::{export_csv, export_svg_plots, load_csv, Series};
use sslbpinn::{checks, report, simulator, SimConfig};

#[derive(Parser)]
#[command(name = "sslbpinn", version, about = "Adaptive DNN tracking control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run developed and baseline arms over a seed range.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b` or a comma-separated list.
        #[arg(long, default_value = "0..9")]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the property checks.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Plot one or more trace CSVs.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        trace: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<sslbpinn::Error> for Failure {
    fn from(e: sslbpinn::Error) -> Self {
        match e {
            sslbpinn::Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Usage(format!("invalid seed list `{spec}`"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn load_config(path: &Path) -> Result<SimConfig, Failure> {
    let mut cfg = SimConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    cfg.apply_env()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            mkdir(&out)?;
            let trace = simulator::run(&cfg)?;
            let csv = out.join(format!("trace_seed{}.csv", cfg.sim.seed));
            export_csv(&trace.rows, &csv)?;
            write(&out.join("config.toml"), &cfg.to_toml_string())?;
            println!("config {}", trace.config_hash);
            println!("wrote {} rows to {}", trace.rows.len(), csv.display());
            if let Some(reason) = &trace.abort {
                eprintln!("run aborted: {reason}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Compare { config, seeds, out } => {
            let cfg = load_config(&config)?;
            let seeds = parse_seeds(&seeds)?;
            mkdir(&out)?;
            let rep = report::compare(&cfg, &seeds)?;
            let table = rep.to_table();
            print!("{table}");
            write(&out.join("comparison.txt"), &table)?;
            write(&out.join("comparison.csv"), &rep.to_csv()?)?;
            for run in rep.aborted() {
                eprintln!("seed {} {:?} aborted: {}", run.seed, run.mode, run.aborted.as_deref().unwrap_or(""));
            }
            Ok(true)
        }
        Command::Check { config } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => SimConfig::default(),
            };
            let outcomes = checks::run_all(&cfg)?;
            for o in &outcomes {
                println!("{o}");
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
        Command::Plot { trace, out } => {
            let loaded = trace
                .iter()
                .map(|p| load_csv(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> = trace
                .iter()
                .map(|p| p.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned()))
                .collect();
            let series: Vec<Series<'_>> = labels
                .iter()
                .zip(&loaded)
                .map(|(label, rows)| Series { label, rows })
                .collect();
            for path in export_svg_plots(&series, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(true)
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
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
