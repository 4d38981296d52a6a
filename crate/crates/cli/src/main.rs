use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedtraffic::dataio::write_csv;
use fedtraffic_cli::runner::{experiment_dir, load_summary};
use fedtraffic_cli::{emit_comparison, emit_plot_data, generate_synthetic, run_experiment, Days, ExperimentConfig, SyntheticSpec};

#[derive(Parser)]
#[command(name = "fedtraffic", version, about = "Federated traffic forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic client traces as CSV files, one per client.
    Generate {
        /// TOML file with a synthetic spec; overrides the flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        clients: usize,
        #[arg(long, default_value_t = 7)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run an experiment config.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Replaces the config's output directory.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Runs this single seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge experiment summaries into plot data and a comparison table.
    Report {
        /// Experiment directories (each holding summary.json).
        #[arg(required = true)]
        experiments: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Generate { spec, clients, days, seed, output } => {
            let spec = match spec {
                Some(path) => toml::from_str::<SyntheticSpec>(&fs::read_to_string(&path)?)?,
                None => SyntheticSpec::new(clients, Days::Fixed(days), seed),
            };
            fs::create_dir_all(&output)?;
            for ds in generate_synthetic(&spec)? {
                let path = output.join(format!("{}.csv", ds.client_id));
                write_csv(&ds, fs::File::create(&path)?)?;
                println!("{}", path.display());
            }
        }
        Command::Run { config, output, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let summary = run_experiment(&cfg)?;
            for cell in &summary.cells {
                println!(
                    "{}: test NRMSE {:.4} ± {:.4}, test MAE {:.4} ± {:.4} over {} seed(s)",
                    summary.label(cell),
                    cell.mean.test_nrmse,
                    cell.std.test_nrmse,
                    cell.mean.test_mae,
                    cell.std.test_mae,
                    cell.runs.len()
                );
            }
            println!("wrote {}", experiment_dir(&cfg).display());
        }
        Command::Report { experiments, output } => {
            let summaries = experiments
                .iter()
                .map(|dir| load_summary(&dir.join("summary.json")))
                .collect::<Result<Vec<_>, _>>()?;
            fs::create_dir_all(&output)?;
            emit_plot_data(&summaries, fs::File::create(output.join("plot_data.csv"))?)?;
            emit_comparison(&summaries, fs::File::create(output.join("comparison.csv"))?)?;
            println!("wrote {}", output.display());
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
