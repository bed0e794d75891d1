use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dspa_cli::experiment::{bench, gen_data, oracle_check, run, write_bench_csv, OracleOptions};
use dspa_cli::{CliResult, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dspa",
    version,
    about = "Distributed Gibbs sampling for Poisson image deconvolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rescale a ground-truth image, blur it and draw Poisson observations.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the chain and write estimators, intervals, metrics and the trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// This process's rank for the tcp transport.
        #[arg(long)]
        rank: Option<usize>,
        /// Continue from the snapshots in `<out>/checkpoints`.
        #[arg(long)]
        resume: bool,
    },
    /// Compare serial and distributed trajectories bit for bit.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker counts, e.g. `1,2,4`.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        iterations: u64,
        /// Also run every worker count over loopback TCP.
        #[arg(long)]
        tcp: bool,
        /// Reverse the adjoint aggregation order of the distributed chains.
        #[arg(long)]
        reverse_aggregation: bool,
    },
    /// Time fixed-length runs per worker count.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        iterations: u64,
    },
}

fn load(config: &PathBuf, out: &Option<PathBuf>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load(&config, &out)?;
            let data = gen_data(&cfg)?;
            println!(
                "wrote {}x{} truth and observations to {}",
                data.truth.height,
                data.truth.width,
                cfg.output_dir.display()
            );
        }
        Command::Run {
            config,
            out,
            rank,
            resume,
        } => {
            let cfg = load(&config, &out)?;
            if let Some(m) = run(&cfg, rank, resume)? {
                println!("{}", serde_json::to_string_pretty(&m)?);
            }
        }
        Command::OracleCheck {
            config,
            out,
            workers,
            iterations,
            tcp,
            reverse_aggregation,
        } => {
            let cfg = load(&config, &out)?;
            let opts = OracleOptions {
                iterations,
                tcp,
                reversed: reverse_aggregation,
            };
            let results = oracle_check(&cfg, &workers, opts)?;
            for r in &results {
                println!("{r}");
            }
        }
        Command::Bench {
            config,
            out,
            workers,
            iterations,
        } => {
            let cfg = load(&config, &out)?;
            let rows = bench(&cfg, &workers, iterations)?;
            std::fs::create_dir_all(&cfg.output_dir)
                .map_err(|e| dspa_cli::CliError::io(&cfg.output_dir, e))?;
            let path = cfg.output_dir.join("bench.csv");
            write_bench_csv(&path, &rows)?;
            println!("K,time_per_iter_mean,time_per_iter_std,speedup");
            for r in rows {
                println!(
                    "{},{:.6},{:.6},{:.2}",
                    r.workers, r.time_per_iter_mean, r.time_per_iter_std, r.speedup
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
