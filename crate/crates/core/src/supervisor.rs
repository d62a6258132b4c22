//! Indexed supervisors `psi_i`.
//!
//! Two families are provided. Synthetic supervisors perturb a PD rule by a
//! unit-norm field scaled by a known rate `f_i`, which makes the Cauchy
//! envelope `|psi_i(s) - psi_N(s)| <= f_i` exact. Model-based supervisors
//! plan with the cross-entropy method over a learned dynamics ensemble that is
//! refit on the learner's transitions every round.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fit_dynamics, DynamicsConfig, DynamicsEnsemble, DynamicsFitReport, DynamicsModel, TransitionBuffer};
use crate::env::{EnvSpec, Trajectory};
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `c / i`
    Harmonic,
    /// `c / sqrt(i)`
    Sqrt,
    /// `c * rho^i`
    Geometric,
    /// Index-independent offset `c * u(s)`: every `psi_i` is the same rule.
    Constant,
    /// Non-converging control: offset `c * (-1)^i * u(s)`.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSchedule {
    pub kind: ScheduleKind,
    pub c: f64,
    #[serde(default)]
    pub rho: f64,
}

impl RateSchedule {
    pub fn harmonic(c: f64) -> Self {
        RateSchedule {
            kind: ScheduleKind::Harmonic,
            c,
            rho: 0.0,
        }
    }

    pub fn geometric(c: f64, rho: f64) -> Self {
        RateSchedule {
            kind: ScheduleKind::Geometric,
            c,
            rho,
        }
    }

    pub fn sqrt(c: f64) -> Self {
        RateSchedule {
            kind: ScheduleKind::Sqrt,
            c,
            rho: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        RateSchedule {
            kind: ScheduleKind::Constant,
            c,
            rho: 0.0,
        }
    }

    pub fn alternating(c: f64) -> Self {
        RateSchedule {
            kind: ScheduleKind::Alternating,
            c,
            rho: 0.0,
        }
    }

    /// A fixed supervisor (`f_i = 0`).
    pub fn fixed() -> Self {
        Self::constant(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::config("supervisor.schedule.c", "must be finite and nonnegative"));
        }
        if self.kind == ScheduleKind::Geometric && !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("supervisor.schedule.rho", "geometric schedules need rho in (0, 1)"));
        }
        Ok(())
    }

    /// The envelope `f_i` for `i >= 1`.
    pub fn rate(&self, i: usize) -> f64 {
        let i = i.max(1) as f64;
        match self.kind {
            ScheduleKind::Harmonic => self.c / i,
            ScheduleKind::Sqrt => self.c / i.sqrt(),
            ScheduleKind::Geometric => self.c * self.rho.powf(i),
            ScheduleKind::Constant | ScheduleKind::Alternating => self.c,
        }
    }

    /// Signed amplitude of the perturbation field at round `i`.
    pub fn amplitude(&self, i: usize) -> f64 {
        match self.kind {
            ScheduleKind::Alternating if i % 2 == 1 => -self.c,
            _ => self.rate(i),
        }
    }

    pub fn converges(&self) -> bool {
        matches!(self.kind, ScheduleKind::Harmonic | ScheduleKind::Sqrt | ScheduleKind::Geometric) || self.c == 0.0
    }
}

/// `psi*(s) = kp (g - p) - kd v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdRule {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdRule {
    fn default() -> Self {
        PdRule { kp: 1.5, kd: 1.8 }
    }
}

impl PdRule {
    pub fn action(&self, env: &EnvSpec, state: &[f64]) -> Vec<f64> {
        let k = env.action_dim;
        (0..k)
            .map(|j| self.kp * (env.goal[j] - state[j]) - self.kd * state[k + j])
            .collect()
    }
}

/// A smooth field with `|u(s)| <= 1`; unit norm whenever `action_dim >= 2`.
pub fn perturbation_field(state: &[f64], action_dim: usize) -> Vec<f64> {
    let k = action_dim;
    let mut phase = 0.0;
    for (j, s) in state.iter().enumerate() {
        phase += [1.3, -0.7, 0.9, 0.4][j % 4] * s;
    }
    let raw: Vec<f64> = (0..k)
        .map(|j| (phase + j as f64 * std::f64::consts::FRAC_PI_2).cos())
        .collect();
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1.0 {
        raw.iter().map(|v| v / n).collect()
    } else {
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Simulated particles per candidate; particle `j` uses ensemble member
    /// `j mod E`. Defaults to one per member.
    #[serde(default)]
    pub particles: Option<usize>,
    /// Initial sampling std as a fraction of the action half-range.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Floor on the per-coordinate sampling std, in action units.
    #[serde(default = "default_min_std")]
    pub min_std: f64,
}

fn default_init_std() -> f64 {
    1.0
}

fn default_min_std() -> f64 {
    1e-3
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 15,
            population: 200,
            elites: 20,
            iterations: 5,
            particles: None,
            init_std: default_init_std(),
            min_std: default_min_std(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("planner.horizon", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("planner.iterations", "must be at least 1"));
        }
        if self.elites == 0 || self.elites >= self.population {
            return Err(Error::config(
                "planner.elites",
                format!("CEM needs 1 <= elites < population (got elites = {}, population = {})", self.elites, self.population),
            ));
        }
        if self.particles == Some(0) {
            return Err(Error::config("planner.particles", "must be positive"));
        }
        if !(self.init_std > 0.0) || !(self.min_std > 0.0) {
            return Err(Error::config("planner.init_std/min_std", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemOptions {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub min_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemOutcome {
    pub best: Vec<f64>,
    pub best_score: f64,
    /// Best score seen so far, after each iteration.
    pub best_per_iteration: Vec<f64>,
    /// Number of coordinates clamped at the std floor, over all iterations.
    pub floor_hits: usize,
}

/// Cross-entropy maximization of `score` over the box `[lo, hi]`.
///
/// Each iteration samples `population` points from a diagonal Gaussian
/// (clipped to the box), refits mean and std to the top `elites`, and keeps
/// the best point seen overall. Requires `1 <= elites <= population`.
pub fn cem_optimize<F>(mut score: F, mean0: &[f64], std0: &[f64], lo: &[f64], hi: &[f64], opts: &CemOptions, rng: &mut ChaCha8Rng) -> CemOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(opts.elites >= 1 && opts.elites <= opts.population, "need 1 <= elites <= population");
    let dim = mean0.len();
    let mut mean = mean0.to_vec();
    let mut std = std0.to_vec();
    let mut best = mean0.to_vec();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_per_iteration = Vec::with_capacity(opts.iterations);
    let mut floor_hits = 0;
    let mut samples = vec![0.0; opts.population * dim];
    let mut scores: Vec<(f64, usize)> = Vec::with_capacity(opts.population);

    for _ in 0..opts.iterations {
        scores.clear();
        for c in 0..opts.population {
            let x = &mut samples[c * dim..(c + 1) * dim];
            for j in 0..dim {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                x[j] = (mean[j] + std[j] * z).clamp(lo[j], hi[j]);
            }
            let s = score(x);
            scores.push((if s.is_nan() { f64::NEG_INFINITY } else { s }, c));
        }
        scores.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let (top, top_idx) = scores[0];
        if top > best_score {
            best_score = top;
            best.copy_from_slice(&samples[top_idx * dim..(top_idx + 1) * dim]);
        }
        best_per_iteration.push(best_score);

        let k = opts.elites as f64;
        for j in 0..dim {
            let m = scores[..opts.elites].iter().map(|&(_, c)| samples[c * dim + j]).sum::<f64>() / k;
            let v = scores[..opts.elites]
                .iter()
                .map(|&(_, c)| (samples[c * dim + j] - m).powi(2))
                .sum::<f64>()
                / k;
            mean[j] = m;
            std[j] = v.sqrt();
            if std[j] < opts.min_std {
                std[j] = opts.min_std;
                floor_hits += 1;
            }
        }
    }
    CemOutcome {
        best,
        best_score,
        best_per_iteration,
        floor_hits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemPlan {
    /// `horizon` actions, each inside the action box.
    pub actions: Vec<Vec<f64>>,
    pub expected_return: f64,
    pub best_per_iteration: Vec<f64>,
    pub floor_hits: usize,
}

/// Average true-reward return of the flat action sequence `plan` over the
/// model's particles.
pub fn simulated_return<M: DynamicsModel + ?Sized>(model: &M, env: &EnvSpec, state: &[f64], plan: &[f64], particles: usize) -> f64 {
    let k = env.action_dim;
    let n = state.len();
    let mut scratch = model.scratch();
    let mut s = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut total = 0.0;
    for j in 0..particles {
        let member = j % model.members();
        s.copy_from_slice(state);
        for a in plan.chunks(k) {
            total += env.reward(&s, a);
            model.predict_into(member, &s, a, &mut scratch, &mut next);
            std::mem::swap(&mut s, &mut next);
        }
    }
    total / particles as f64
}

pub fn cem_plan<M: DynamicsModel + ?Sized>(model: &M, env: &EnvSpec, state: &[f64], config: &PlannerConfig, seed: u64) -> Result<CemPlan> {
    config.validate()?;
    plan_unchecked(model, env, state, config, seed)
}

fn plan_unchecked<M: DynamicsModel + ?Sized>(model: &M, env: &EnvSpec, state: &[f64], config: &PlannerConfig, seed: u64) -> Result<CemPlan> {
    ensure_dim(state, model.state_dim(), "planner state")?;
    ensure_finite(state, "planner state")?;
    let k = env.action_dim;
    let h = config.horizon;
    let lo: Vec<f64> = (0..h).flat_map(|_| env.action_low.iter().copied()).collect();
    let hi: Vec<f64> = (0..h).flat_map(|_| env.action_high.iter().copied()).collect();
    let mean0: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (l + u)).collect();
    let std0: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (u - l) * config.init_std).collect();
    let particles = config.particles.unwrap_or(model.members());
    let opts = CemOptions {
        population: config.population,
        elites: config.elites,
        iterations: config.iterations,
        min_std: config.min_std,
    };
    let mut rng = rng::stream(&[seed, purpose::PLANNER]);
    let out = cem_optimize(|plan| simulated_return(model, env, state, plan, particles), &mean0, &std0, &lo, &hi, &opts, &mut rng);
    Ok(CemPlan {
        actions: out.best.chunks(k).map(|c| c.to_vec()).collect(),
        expected_return: out.best_score,
        best_per_iteration: out.best_per_iteration,
        floor_hits: out.floor_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandleKind {
    Synthetic {
        pd: PdRule,
        schedule: RateSchedule,
    },
    MpcCem {
        ensemble: Arc<DynamicsEnsemble>,
        planner: PlannerConfig,
    },
}

/// A frozen supervisor `psi_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorHandle {
    pub index: usize,
    pub env: EnvSpec,
    /// Mixed into planner seeds together with the index and the state hash.
    pub seed: u64,
    pub kind: HandleKind,
}

impl SupervisorHandle {
    pub fn synthetic(env: EnvSpec, pd: PdRule, schedule: RateSchedule, index: usize) -> Self {
        SupervisorHandle {
            index,
            env,
            seed: 0,
            kind: HandleKind::Synthetic { pd, schedule },
        }
    }

    pub fn planner_seed(&self, state: &[f64]) -> u64 {
        rng::derive(&[self.seed, self.index as u64, rng::hash_f64s(state)])
    }

    /// The label `psi_i(s)`, always inside the action box.
    pub fn label(&self, state: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(state, self.env.state_dim, "supervisor state")?;
        ensure_finite(state, "supervisor state")?;
        let mut a = match &self.kind {
            HandleKind::Synthetic { pd, schedule } => {
                let amp = schedule.amplitude(self.index);
                let u = perturbation_field(state, self.env.action_dim);
                pd.action(&self.env, state).iter().zip(&u).map(|(a, u)| a + amp * u).collect()
            }
            HandleKind::MpcCem { ensemble, planner } => {
                let plan = plan_unchecked(ensemble.as_ref(), &self.env, state, planner, self.planner_seed(state))?;
                plan.actions[0].clone()
            }
        };
        self.env.clip_action_in_place(&mut a);
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupervisorSpec {
    Synthetic {
        #[serde(default)]
        pd: PdRule,
        schedule: RateSchedule,
    },
    MpcCem {
        #[serde(default)]
        planner: PlannerConfig,
        #[serde(default)]
        dynamics: DynamicsConfig,
        /// Random-action episodes collected before the first round.
        #[serde(default = "default_seed_rollouts")]
        seed_rollouts: usize,
    },
}

fn default_seed_rollouts() -> usize {
    1
}

impl SupervisorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SupervisorSpec::Synthetic { schedule, .. } => schedule.validate(),
            SupervisorSpec::MpcCem { planner, dynamics, .. } => {
                planner.validate()?;
                dynamics.validate()
            }
        }
    }
}

/// The evolving supervisor `psi_1, psi_2, ...` of one run.
#[derive(Debug, Clone)]
pub struct SupervisorSequence {
    env: EnvSpec,
    spec: SupervisorSpec,
    seed: u64,
    buffer: TransitionBuffer,
    current: Option<SupervisorHandle>,
    fit_reports: Vec<DynamicsFitReport>,
}

impl SupervisorSequence {
    pub fn new(env: &EnvSpec, spec: &SupervisorSpec, seed: u64) -> Result<Self> {
        env.validate()?;
        spec.validate()?;
        let mut buffer = TransitionBuffer::default();
        if let SupervisorSpec::MpcCem { seed_rollouts, .. } = spec {
            for r in 0..*seed_rollouts {
                let mut explore = rng::stream(&[seed, purpose::EXPLORE, r as u64]);
                let traj = env.rollout(
                    |_| {
                        env.action_low
                            .iter()
                            .zip(&env.action_high)
                            .map(|(lo, hi)| explore.gen_range(*lo..*hi))
                            .collect()
                    },
                    rng::derive(&[seed, purpose::EXPLORE, r as u64]),
                )?;
                buffer.push_trajectory(env, &traj, 0)?;
            }
        }
        Ok(SupervisorSequence {
            env: env.clone(),
            spec: spec.clone(),
            seed,
            buffer,
            current: None,
            fit_reports: Vec::new(),
        })
    }

    pub fn spec(&self) -> &SupervisorSpec {
        &self.spec
    }

    pub fn buffer(&self) -> &TransitionBuffer {
        &self.buffer
    }

    pub fn fit_reports(&self) -> &[DynamicsFitReport] {
        &self.fit_reports
    }

    pub fn current(&self) -> Option<&SupervisorHandle> {
        self.current.as_ref()
    }

    /// Moves to `psi_round`. Model-based supervisors first absorb the
    /// learner's new transitions and refit their ensemble.
    pub fn advance(&mut self, round: usize, learner_episodes: &[Trajectory]) -> Result<&SupervisorHandle> {
        let handle = match &self.spec {
            SupervisorSpec::Synthetic { pd, schedule } => SupervisorHandle {
                index: round,
                env: self.env.clone(),
                seed: self.seed,
                kind: HandleKind::Synthetic {
                    pd: *pd,
                    schedule: *schedule,
                },
            },
            SupervisorSpec::MpcCem { planner, dynamics, .. } => {
                for traj in learner_episodes {
                    self.buffer.push_trajectory(&self.env, traj, round)?;
                }
                let (ensemble, report) = fit_dynamics(&self.buffer, dynamics, rng::derive(&[self.seed, round as u64]))?;
                self.fit_reports.push(report);
                SupervisorHandle {
                    index: round,
                    env: self.env.clone(),
                    seed: self.seed,
                    kind: HandleKind::MpcCem {
                        ensemble: Arc::new(ensemble),
                        planner: planner.clone(),
                    },
                }
            }
        };
        self.current = Some(handle);
        Ok(self.current.as_ref().unwrap())
    }

    /// The last supervisor `psi_N`, frozen for relabeling stored states.
    pub fn snapshot_final(&self) -> Result<SupervisorHandle> {
        self.current.clone().ok_or(Error::NoRounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ExactModel;

    fn grid() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for px in [-0.2, 0.0, 0.3, 0.6] {
            for py in [-0.1, 0.2, 0.4] {
                for vx in [-0.2, 0.0, 0.1] {
                    for vy in [-0.1, 0.15] {
                        out.push(vec![px, py, vx, vy]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_rate_labels_are_the_pd_rule() {
        let env = EnvSpec::lin_reach();
        let pd = PdRule::default();
        let sup = SupervisorHandle::synthetic(env.clone(), pd, RateSchedule::fixed(), 7);
        for s in grid() {
            let want = env.clip_action(&pd.action(&env, &s));
            assert_eq!(sup.label(&s).unwrap(), want);
        }
    }

    #[test]
    fn harmonic_labels_satisfy_the_cauchy_envelope() {
        let env = EnvSpec::lin_reach();
        let pd = PdRule::default();
        let sched = RateSchedule::harmonic(0.4);
        let n = 50;
        let last = SupervisorHandle::synthetic(env.clone(), pd, sched, n);
        for s in grid() {
            let yn = last.label(&s).unwrap();
            for i in 1..n {
                let yi = SupervisorHandle::synthetic(env.clone(), pd, sched, i).label(&s).unwrap();
                let d = yi.iter().zip(&yn).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d <= 0.4 / i as f64 + 1e-15, "i={i} d={d}");
            }
        }
    }

    #[test]
    fn labels_stay_in_the_action_box() {
        let env = EnvSpec::lin_reach();
        let sup = SupervisorHandle::synthetic(env.clone(), PdRule { kp: 10.0, kd: 10.0 }, RateSchedule::alternating(0.5), 3);
        for s in grid() {
            let y = sup.label(&s).unwrap();
            assert!(y.iter().all(|a| (-1.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn field_is_unit_norm_in_the_plane() {
        for s in grid() {
            let u = perturbation_field(&s, 2);
            assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_control_flips_by_parity() {
        let s = RateSchedule::alternating(0.2);
        assert_eq!(s.amplitude(2), 0.2);
        assert_eq!(s.amplitude(3), -0.2);
        assert!(!s.converges());
        assert!(RateSchedule::geometric(1.0, 0.9).converges());
    }

    #[test]
    fn quadratic_optimum_is_recovered() {
        let target = [0.3, -0.45];
        let opts = CemOptions {
            population: 200,
            elites: 20,
            iterations: 5,
            min_std: 1e-3,
        };
        for seed in 0..5 {
            let out = cem_optimize(
                |a| -((a[0] - target[0]).powi(2) + (a[1] - target[1]).powi(2)),
                &[0.0, 0.0],
                &[1.0, 1.0],
                &[-1.0, -1.0],
                &[1.0, 1.0],
                &opts,
                &mut rng::stream(&[seed]),
            );
            let err = ((out.best[0] - target[0]).powi(2) + (out.best[1] - target[1]).powi(2)).sqrt();
            assert!(err < 0.05, "seed {seed}: err {err}");
            assert!(out.best_per_iteration.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn degenerate_population_returns_its_sample() {
        let opts = CemOptions {
            population: 1,
            elites: 1,
            iterations: 1,
            min_std: 1e-3,
        };
        let mut seen = Vec::new();
        let out = cem_optimize(
            |a| {
                seen.push(a.to_vec());
                a[0]
            },
            &[0.0, 0.0],
            &[0.5, 0.5],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &opts,
            &mut rng::stream(&[1]),
        );
        assert_eq!(seen.len(), 1);
        assert_eq!(out.best, seen[0]);
    }

    #[test]
    fn variance_floor_is_reported() {
        let opts = CemOptions {
            population: 10,
            elites: 1,
            iterations: 3,
            min_std: 0.1,
        };
        let out = cem_optimize(|a| -a[0].abs(), &[0.0], &[1.0], &[-1.0], &[1.0], &opts, &mut rng::stream(&[2]));
        assert!(out.floor_hits > 0);
    }

    #[test]
    fn planner_config_rejects_elites_equal_population() {
        let cfg = PlannerConfig {
            elites: 200,
            ..PlannerConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("elites") && err.contains("population"), "{err}");
    }

    #[test]
    fn exact_model_plan_is_deterministic() {
        let env = EnvSpec {
            noise_std: 0.0,
            ..EnvSpec::lin_reach()
        };
        let model = ExactModel(env.clone());
        let cfg = PlannerConfig {
            population: 40,
            elites: 5,
            horizon: 5,
            ..PlannerConfig::default()
        };
        let s = env.reset(0);
        let a = cem_plan(&model, &env, &s, &cfg, 3).unwrap();
        let b = cem_plan(&model, &env, &s, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.actions.len(), 5);
        assert!(a.best_per_iteration.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn snapshot_requires_a_round() {
        let env = EnvSpec::lin_reach();
        let seq = SupervisorSequence::new(
            &env,
            &SupervisorSpec::Synthetic {
                pd: PdRule::default(),
                schedule: RateSchedule::harmonic(0.4),
            },
            0,
        )
        .unwrap();
        assert!(matches!(seq.snapshot_final(), Err(Error::NoRounds)));
    }

    #[test]
    fn constant_schedule_is_index_independent() {
        let env = EnvSpec::lin_reach();
        let spec = SupervisorSpec::Synthetic {
            pd: PdRule::default(),
            schedule: RateSchedule::constant(0.3),
        };
        let mut seq = SupervisorSequence::new(&env, &spec, 0).unwrap();
        let first = seq.advance(1, &[]).unwrap().clone();
        seq.advance(9, &[]).unwrap();
        let last = seq.snapshot_final().unwrap();
        for s in grid() {
            assert_eq!(first.label(&s).unwrap(), last.label(&s).unwrap());
        }
    }
}
