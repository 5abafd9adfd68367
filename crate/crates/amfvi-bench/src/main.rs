use std::path::PathBuf;
use std::process::ExitCode;

use amfvi_bench::config::RunConfig;
use amfvi_bench::runner;
use clap::{Parser, Subcommand};

/// Train and evaluate adaptive mixtures of normalizing flows on the six
/// 2D benchmark targets.
#[derive(Parser, Debug)]
#[command(name = "bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma-separated dataset list.
    #[arg(long, global = true, value_delimiter = ',')]
    datasets: Option<Vec<String>>,

    /// Comma-separated model list.
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<String>>,

    /// Comma-separated replicate seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Worker-pool size for grid cells.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/eval sample CSVs and a manifest.
    Generate,
    /// Stage-1 expert training plus stage-2 weight adaptation.
    Train,
    /// Compute the five metrics over the (dataset, model, seed) grid.
    Eval,
    /// Emit sample scatter rows and the mixture-weight bar chart.
    Plot,
    /// All stages: generate, train, eval, plot.
    Run {
        /// Reset datasets/models/seeds to the full benchmark grid.
        #[arg(long)]
        all: bool,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    if let Command::Run { all: true } = cli.command {
        let full = RunConfig::default();
        cfg.datasets = full.datasets;
        cfg.models = full.models;
        cfg.seeds = full.seeds;
    }
    if let Some(d) = &cli.datasets {
        cfg.datasets = d.clone();
    }
    if let Some(m) = &cli.models {
        cfg.models = m.clone();
    }
    if let Some(s) = &cli.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let outcome: anyhow::Result<usize> = match cli.command {
        Command::Generate => runner::cmd_generate(&cfg).map(|_| 0),
        Command::Train => runner::cmd_train(&cfg).map(|failed| {
            for f in &failed {
                eprintln!(
                    "failed: {}/{} seed {}: {}",
                    f.dataset, f.model, f.seed, f.error
                );
            }
            failed.len()
        }),
        Command::Eval => runner::cmd_eval(&cfg).map(|(report, n_failed)| {
            for f in &report.failed {
                eprintln!(
                    "failed: {}/{} seed {}: {}",
                    f.dataset, f.model, f.seed, f.error
                );
            }
            println!(
                "evaluated {} cells ({} failed); reports under {}",
                report.cells.len() + n_failed,
                n_failed,
                cfg.out.display()
            );
            n_failed
        }),
        Command::Plot => runner::cmd_plot(&cfg).map(|unavailable| {
            if unavailable > 0 {
                eprintln!("{unavailable} panels unavailable (missing artifacts)");
            }
            0
        }),
        Command::Run { .. } => runner::cmd_run(&cfg),
    };

    match outcome {
        Ok(0) => ExitCode::from(0),
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
