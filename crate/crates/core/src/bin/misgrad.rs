use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use misgrad::config::parse_config;
use misgrad::experiment::{compare, parse_estimators, read_metrics, run, sweep};
use misgrad::Result;

#[derive(Parser)]
#[command(name = "misgrad", version, about = "Importance-sampled mini-batch gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Train the same configuration with several estimators and compare them.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list, e.g. `uniform,is,omis`.
        #[arg(long)]
        estimators: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Rank metric files at equal epochs and at equal wall time.
    Compare {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("misgrad: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run(&cfg, &out)?;
            let last = outcome.logs.last().expect("at least one epoch");
            println!(
                "{}: {} epochs, final train loss {:.6e}, eval loss {:.6e}",
                outcome.manifest.out_dir.display(),
                last.epoch,
                last.train_loss,
                last.eval_loss
            );
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Command::Sweep {
            config,
            estimators,
            seed,
            out,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = sweep(&cfg, &parse_estimators(&estimators)?, &out)?;
            for r in &outcome.runs {
                println!("metrics: {}", r.metrics_path.display());
            }
            print!("{}", outcome.comparison);
            println!("table: {}", outcome.table_path.display());
        }
        Command::Compare { files, csv } => {
            let parsed = files.iter().map(|f| read_metrics(f)).collect::<Result<Vec<_>>>()?;
            let table = compare(&parsed)?;
            print!("{table}");
            if let Some(p) = csv {
                std::fs::write(p, table.to_csv())?;
            }
        }
    }
    Ok(())
}
