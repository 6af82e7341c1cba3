use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedfbn::datagen::{write_tabular, TabularSchema};
use fedfbn::experiments::{build_data, emit_reports, rerender, run_experiment, ExperimentConfig};
use fedfbn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fedfbn",
    version,
    about = "Federated learning simulator with frozen batch norm"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured arm and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated arm list, e.g. `fedfbn,fedavg`.
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
    },
    /// Generate the scenario datasets as CSV files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render summary tables from a finished run.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn load(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let out = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            arms,
        } => {
            let (mut cfg, out) = load(&config, seed, out)?;
            if let Some(a) = arms {
                cfg.arms = a;
            }
            cfg.validate()?;
            let result = run_experiment(&cfg)?;
            emit_reports(&result, &out)?;
            for a in &result.arms {
                match &a.error {
                    None => eprintln!("arm {}: ok", a.arm),
                    Some(e) => eprintln!("arm {}: failed: {e}", a.arm),
                }
            }
            println!("{}", out.join(fedfbn::experiments::SUMMARY_FILE).display());
            if result.arms.iter().all(|a| a.error.is_some()) {
                return Err(Error::Protocol("every arm failed".into()));
            }
        }
        Command::GenData { config, seed, out } => {
            let (cfg, out) = load(&config, seed, out)?;
            let data = build_data(&cfg)?;
            std::fs::create_dir_all(&out)?;
            for (name, ds) in data.datasets() {
                let path = out.join(format!("{name}.csv"));
                write_tabular(ds, &TabularSchema::for_dataset(ds), &path)?;
                println!("{}", path.display());
            }
        }
        Command::Report { dir } => {
            for f in rerender(&dir)? {
                println!("{}", dir.join(f).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
