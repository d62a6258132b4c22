//! `run`: execute an experiment config and write per-seed artifacts.
//!
//! Layout under the output directory, one subdirectory per seed:
//!
//! ```text
//! seed_<s>/manifest.json          schema version, config hash, seed
//! seed_<s>/rounds.csv             deterministic per-round metrics
//! seed_<s>/round_timing.csv       per-round query latencies (machine-dependent)
//! seed_<s>/regret.csv             long format: prefix, metric, value
//! seed_<s>/regret.json            full regret report
//! seed_<s>/timing.json            latency summary measured inside the loop
//! seed_<s>/params.jsonl           theta_i for every round
//! seed_<s>/params_final.json      theta_{N+1} with shape metadata
//! seed_<s>/supervisor_final.json  psi_N
//! seed_<s>/comparators.jsonl      prefix comparators (when enabled)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use converging_core::imitation::{run_loop, LoopOutcome, RoundRecord};
use converging_core::policy::{PolicyKind, PolicyParams};
use converging_core::regret::{analyze, prefix_comparators, ComparatorKind, RegretReport};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::timing::TimingReport;

pub const ROUNDS_HEADER: [&str; 5] = [
    "i",
    "loss_vs_psi_i",
    "loss_vs_psi_N",
    "episode_return_learner",
    "episode_return_supervisor",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub rounds: usize,
    pub tool_version: String,
    pub config: ExperimentConfig,
}

/// What `regret.json` holds: the report, or why none exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegretArtifact {
    Report(Box<RegretReport>),
    Unavailable { unavailable: String },
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: LoopOutcome,
    pub initial: PolicyParams,
    pub regret: Option<RegretReport>,
}

/// Runs every seed of `cfg` (or just `seed_override`) into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, seed_override: Option<u64>, quiet: bool) -> anyhow::Result<Vec<SeedRun>> {
    cfg.validate()?;
    let seeds = match seed_override {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let mut runs = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let dir = out.join(format!("seed_{seed}"));
        let run = run_seed(cfg, seed, &dir)?;
        if !quiet {
            eprintln!("{}", summary_line(&run));
        }
        runs.push(run);
    }
    Ok(runs)
}

fn summary_line(run: &SeedRun) -> String {
    let last = run.outcome.records.last().expect("at least one round");
    let mut line = format!(
        "seed {}: {} rounds, final loss {:.6}, learner return {:.4}",
        run.seed,
        run.outcome.records.len(),
        last.loss_current,
        last.mean_learner_return()
    );
    if let Some(r) = &run.regret {
        line.push_str(&format!(
            ", min slack static {:.4e} dynamic {:.4e}",
            r.min_slack_static(),
            r.min_slack_dynamic()
        ));
    }
    line.push_str(&format!(" -> {}", run.dir.display()));
    line
}

/// Trains one seed and computes its regret report without touching disk.
pub fn execute_seed(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<(LoopOutcome, PolicyParams, Option<RegretReport>)> {
    let env = cfg.env_spec()?;
    let initial = cfg.policy.initial(&env)?;
    let outcome = run_loop(&env, &cfg.supervisor, &cfg.player, &initial, &cfg.loop_config(seed))
        .with_context(|| format!("seed {seed}"))?;
    let regret = match initial.kind {
        PolicyKind::LinearAffine => Some(
            analyze(&outcome.records, &initial, cfg.player.alpha_reg, env.action_diameter())
                .with_context(|| format!("regret analysis for seed {seed}"))?,
        ),
        PolicyKind::MlpEnsemble => None,
    };
    Ok((outcome, initial, regret))
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> anyhow::Result<SeedRun> {
    let (outcome, initial, regret) = execute_seed(cfg, seed)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_sha256: cfg.hash(),
        seed,
        rounds: cfg.rounds,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_rounds_csv(&dir.join("rounds.csv"), &outcome.records)?;
    write_round_timing_csv(&dir.join("round_timing.csv"), &outcome.records)?;

    let mut regret_csv = csv_writer(&dir.join("regret.csv"))?;
    regret_csv.write_record(["prefix", "metric", "value"])?;
    match &regret {
        Some(report) => {
            for (prefix, metric, value) in report.long_rows() {
                regret_csv.write_record([prefix.to_string(), metric.to_string(), value.to_string()])?;
            }
            write_json(&dir.join("regret.json"), &RegretArtifact::Report(Box::new(report.clone())))?;
        }
        None => write_json(
            &dir.join("regret.json"),
            &RegretArtifact::Unavailable {
                unavailable: "regret comparators need a linear-affine policy".into(),
            },
        )?,
    }
    regret_csv.flush()?;

    let env = cfg.env_spec()?;
    write_json(&dir.join("timing.json"), &TimingReport::from_records(&outcome.records, env.horizon))?;

    let mut params = BufWriter::new(File::create(dir.join("params.jsonl"))?);
    for r in &outcome.records {
        serde_json::to_writer(&mut params, &ParamsLine { round: r.round, theta: &r.theta })?;
        params.write_all(b"\n")?;
    }
    params.flush()?;
    write_json(&dir.join("params_final.json"), &outcome.final_params)?;
    write_json(&dir.join("supervisor_final.json"), &outcome.final_supervisor)?;

    if cfg.flags.emit_prefix_comparators && initial.kind == PolicyKind::LinearAffine {
        let mut w = BufWriter::new(File::create(dir.join("comparators.jsonl"))?);
        for kind in [ComparatorKind::StaticSeq, ComparatorKind::StaticFinal] {
            let thetas = prefix_comparators(kind, &outcome.records, &initial, cfg.player.alpha_reg)?;
            for (k, theta) in thetas.iter().enumerate() {
                serde_json::to_writer(&mut w, &ComparatorLine { kind, prefix: k + 1, theta })?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
    }

    Ok(SeedRun {
        seed,
        dir: dir.to_path_buf(),
        outcome,
        initial,
        regret,
    })
}

#[derive(Serialize)]
struct ParamsLine<'a> {
    round: usize,
    theta: &'a [f64],
}

#[derive(Serialize)]
struct ComparatorLine<'a> {
    kind: ComparatorKind,
    prefix: usize,
    theta: &'a [f64],
}

pub fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_rounds_csv(path: &Path, records: &[RoundRecord]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(ROUNDS_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.loss_current.to_string(),
            opt(r.loss_final),
            r.mean_learner_return().to_string(),
            opt(r.supervisor_return),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_round_timing_csv(path: &Path, records: &[RoundRecord]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["i", "learner_query_us", "supervisor_query_us"])?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.learner_query_us.to_string(),
            r.supervisor_query_us.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
