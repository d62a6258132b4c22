use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use converging_cli::compare::compare;
use converging_cli::run::{run_experiment, write_json};
use converging_cli::timing::{timing_bench, BenchOptions, Opponent};
use converging_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "converging", version, about = "Imitation learning from a converging supervisor")]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this seed only, instead of the config's list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Time learner queries against supervisor labels on identical states.
    TimingBench {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding params_final.json and supervisor_final.json.
        /// Without it, the config's first seed is trained in memory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// File to write the report to (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Time the learner against itself.
        #[arg(long)]
        self_compare: bool,
    },
    /// Merge run directories into long and wide CSV tables.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed_override } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .context("no output directory: pass --out or set output_dir in the config")?;
            run_experiment(&cfg, &out, seed_override, cli.quiet)?;
        }
        Command::TimingBench {
            config,
            checkpoint,
            out,
            seed_override,
            self_compare,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut opts = BenchOptions::from_config(&cfg);
            if let Some(s) = seed_override {
                opts.seed = s;
            }
            if self_compare {
                opts.opponent = Opponent::Learner;
            }
            let report = timing_bench(&cfg, checkpoint.as_deref(), &opts)?;
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if !cli.quiet {
                eprintln!(
                    "learner {:.3} ± {:.3} us ({} calls), {} {:.3} ± {:.3} us ({} calls), ratio {:.1}",
                    report.learner.mean_us,
                    report.learner.std_us,
                    report.learner.calls,
                    report.supervisor_kind,
                    report.supervisor.mean_us,
                    report.supervisor.std_us,
                    report.supervisor.calls,
                    report.ratio
                );
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Compare { runs, out } => {
            let merged = compare(&runs, &out)?;
            if !cli.quiet {
                eprintln!("merged {} runs into {}", merged.len(), out.display());
            }
        }
    }
    Ok(())
}
