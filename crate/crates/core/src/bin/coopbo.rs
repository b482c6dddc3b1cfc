use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use coopbo::experiment::{aggregate, run_suite_with, SuiteConfig, Table};
use coopbo::plot::{emit_plots, render_from_csv};
use coopbo::session::{serve, ServiceConfig};

#[derive(Parser)]
#[command(name = "coopbo", version, about = "Cooperative Bayesian optimization experiments and game service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment suite described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Three functions and ten prior samples per cell.
        #[arg(long)]
        paper_scale: bool,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a summary table from a results directory.
    Aggregate {
        #[arg(long)]
        dir: PathBuf,
        /// scores_by_user, scores_by_prior, entropy_by_user, score_curves or all
        #[arg(long, default_value = "all")]
        table: String,
    },
    /// Draw score curves and trajectory heatmaps.
    Plot {
        #[arg(long)]
        dir: PathBuf,
        /// Episode id to draw; repeatable. Defaults to one episode per policy.
        #[arg(long = "cell")]
        cells: Vec<String>,
        /// Redraw from the CSVs already under plots/ without reading traces.
        #[arg(long)]
        from_csv: bool,
    },
    /// Serve interactive games over HTTP.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> coopbo::Result<()> {
    match cli.command {
        Command::Run {
            config,
            paper_scale,
            seed,
            jobs,
            out,
        } => {
            let mut cfg = SuiteConfig::from_file(&config)?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let start = Instant::now();
            let summary = run_suite_with(&cfg, jobs, &|done, total, id| {
                eprintln!("[{done}/{total}] {id} ({:.0?})", start.elapsed());
            })?;
            for t in Table::ALL {
                aggregate(&summary.dir, t)?;
            }
            println!(
                "{} episodes ({} reused) -> {}",
                summary.episodes,
                summary.reused,
                summary.metrics.display()
            );
        }
        Command::Aggregate { dir, table } => {
            let tables = if table == "all" { Table::ALL.to_vec() } else { vec![table.parse()?] };
            for t in tables {
                let [_, txt] = aggregate(&dir, t)?;
                print!("{}", std::fs::read_to_string(&txt).map_err(|e| coopbo::Error::Config(e.to_string()))?);
                println!();
            }
        }
        Command::Plot { dir, cells, from_csv } => {
            let written = if from_csv { render_from_csv(&dir)? } else { emit_plots(&dir, &cells)? };
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Serve { config } => {
            let cfg = match config {
                Some(p) => ServiceConfig::from_file(&p)?,
                None => ServiceConfig::default(),
            }
            .with_env()?;
            eprintln!("listening on http://{}", cfg.listen);
            let rt = tokio::runtime::Runtime::new().map_err(|e| coopbo::Error::Config(e.to_string()))?;
            rt.block_on(serve(cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
