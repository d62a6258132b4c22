//! Per-state query latency of the learner against the supervisor.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use converging_core::env::EnvSpec;
use converging_core::imitation::{run_loop, RoundRecord};
use converging_core::policy::{act, PolicyParams};
use converging_core::rng;
use converging_core::supervisor::{HandleKind, SupervisorHandle};

use crate::config::ExperimentConfig;
use crate::run::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingSource {
    /// Averaged over the labeling and rollout passes of a run.
    Loop,
    /// Dedicated benchmark on a fixed state set.
    Bench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub std_us: f64,
    /// Number of timed calls.
    pub calls: usize,
}

impl LatencyStats {
    fn from_samples(samples: &[f64], calls: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        LatencyStats {
            mean_us: mean,
            std_us: var.sqrt(),
            calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub source: TimingSource,
    pub supervisor_kind: String,
    pub learner: LatencyStats,
    pub supervisor: LatencyStats,
    /// Distinct states both sides were queried on.
    pub states: usize,
    pub horizon: usize,
    /// Query time for one full episode of `horizon` decisions.
    pub learner_episode_us: f64,
    pub supervisor_episode_us: f64,
    /// Supervisor latency over learner latency.
    pub ratio: f64,
}

impl TimingReport {
    fn assemble(source: TimingSource, supervisor_kind: String, learner: LatencyStats, supervisor: LatencyStats, states: usize, horizon: usize) -> Self {
        let h = horizon as f64;
        TimingReport {
            source,
            supervisor_kind,
            learner_episode_us: learner.mean_us * h,
            supervisor_episode_us: supervisor.mean_us * h,
            ratio: supervisor.mean_us / learner.mean_us,
            learner,
            supervisor,
            states,
            horizon,
        }
    }

    /// Summary of the latencies recorded while a run was played.
    pub fn from_records(records: &[RoundRecord], horizon: usize) -> Self {
        let learner: Vec<f64> = records.iter().map(|r| r.learner_query_us).collect();
        let sup: Vec<f64> = records.iter().map(|r| r.supervisor_query_us).collect();
        let states = records.iter().map(|r| r.states.len()).sum();
        let kind = "loop".to_string();
        Self::assemble(
            TimingSource::Loop,
            kind,
            LatencyStats::from_samples(&learner, states),
            LatencyStats::from_samples(&sup, states),
            states,
            horizon,
        )
    }
}

/// What the learner is timed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opponent {
    /// The trained supervisor `psi_N`.
    Supervisor,
    /// The learner itself, as a calibration of the harness.
    Learner,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub learner_calls: usize,
    pub supervisor_calls: usize,
    pub opponent: Opponent,
    pub seed: u64,
}

impl BenchOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        BenchOptions {
            learner_calls: cfg.timing.learner_calls,
            supervisor_calls: cfg.timing.supervisor_calls,
            opponent: Opponent::Supervisor,
            seed: cfg.seeds[0],
        }
    }
}

/// Loads `params_final.json` and `supervisor_final.json` from a run directory.
pub fn load_checkpoint(dir: &Path) -> anyhow::Result<(PolicyParams, SupervisorHandle)> {
    for f in ["params_final.json", "supervisor_final.json"] {
        if !dir.join(f).is_file() {
            bail!("checkpoint missing: {} has no {f}", dir.display());
        }
    }
    let params: PolicyParams = read_json(&dir.join("params_final.json"))?;
    let sup: SupervisorHandle = read_json(&dir.join("supervisor_final.json"))?;
    params.validate().context("checkpoint parameters")?;
    Ok((params, sup))
}

/// Trains the config's first seed in memory and returns `theta_{N+1}`, `psi_N`.
pub fn train_embedded(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<(PolicyParams, SupervisorHandle)> {
    let env = cfg.env_spec()?;
    let initial = cfg.policy.initial(&env)?;
    let out = run_loop(&env, &cfg.supervisor, &cfg.player, &initial, &cfg.loop_config(seed))?;
    Ok((out.final_params, out.final_supervisor))
}

/// States visited by the learner, drawn from as many episodes as needed.
pub fn learner_states(env: &EnvSpec, params: &PolicyParams, count: usize, seed: u64) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(count);
    let mut episode = 0u64;
    while states.len() < count {
        let s = rng::derive(&[seed, 0x7131, episode]);
        let traj = env.rollout(|x| act(params, x).expect("dimensions checked"), s)?;
        states.extend(traj.decision_states().iter().take(count - states.len()).cloned());
        episode += 1;
    }
    Ok(states)
}

/// Times `calls` invocations spread evenly over `states`. Each sample is the
/// mean over consecutive repeats on one state.
fn measure<F>(states: &[Vec<f64>], calls: usize, mut f: F) -> anyhow::Result<LatencyStats>
where
    F: FnMut(&[f64]) -> anyhow::Result<Vec<f64>>,
{
    let reps = calls.div_ceil(states.len());
    for s in states {
        black_box(f(s)?);
    }
    let mut samples = Vec::with_capacity(states.len());
    for s in states {
        let t0 = Instant::now();
        for _ in 0..reps {
            black_box(f(black_box(s))?);
        }
        samples.push(t0.elapsed().as_secs_f64() * 1e6 / reps as f64);
    }
    let stats = LatencyStats::from_samples(&samples, reps * states.len());
    if !(stats.mean_us > 0.0) {
        bail!("timer resolution too coarse: measured zero latency");
    }
    Ok(stats)
}

pub fn bench(env: &EnvSpec, params: &PolicyParams, sup: &SupervisorHandle, opts: &BenchOptions) -> anyhow::Result<TimingReport> {
    if opts.learner_calls == 0 || opts.supervisor_calls == 0 {
        bail!("timing call counts must be positive");
    }
    let states = learner_states(env, params, opts.supervisor_calls.min(opts.learner_calls), opts.seed)?;
    let learner = measure(&states, opts.learner_calls, |s| Ok(act(params, s)?))?;
    let (kind, supervisor) = match opts.opponent {
        Opponent::Learner => ("learner".to_string(), measure(&states, opts.learner_calls, |s| Ok(act(params, s)?))?),
        Opponent::Supervisor => {
            let kind = match &sup.kind {
                HandleKind::Synthetic { .. } => "synthetic",
                HandleKind::MpcCem { .. } => "mpc_cem",
            };
            (kind.to_string(), measure(&states, opts.supervisor_calls, |s| Ok(sup.label(s)?))?)
        }
    };
    Ok(TimingReport::assemble(TimingSource::Bench, kind, learner, supervisor, states.len(), env.horizon))
}

/// The `timing-bench` verb: checkpoint from `checkpoint`, or trained in memory.
pub fn timing_bench(cfg: &ExperimentConfig, checkpoint: Option<&Path>, opts: &BenchOptions) -> anyhow::Result<TimingReport> {
    let env = cfg.env_spec()?;
    let (params, sup) = match checkpoint {
        Some(dir) => load_checkpoint(dir)?,
        None => train_embedded(cfg, opts.seed)?,
    };
    if params.features.state_dim() != env.state_dim {
        bail!(
            "checkpoint policy expects state dimension {}, config environment has {}",
            params.features.state_dim(),
            env.state_dim
        );
    }
    bench(&env, &params, &sup, opts)
}
