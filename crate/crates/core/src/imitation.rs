//! The on-policy training loop and the learner's per-round losses.
//!
//! Each round executes the current policy `theta_i`, labels every visited
//! state with the current supervisor `psi_i` after the episode, and updates
//! the parameters with one of three online players. Once the loop ends, the
//! final supervisor `psi_N` relabels every stored state so regret can be
//! measured against it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{act_into, fit_mlp, fit_ridge, project, LabeledDataset, MlpFitConfig, PolicyKind, PolicyParams};
use crate::rng::{self, purpose};
use crate::supervisor::{SupervisorHandle, SupervisorSequence, SupervisorSpec};
use crate::dynamics::DynamicsFitReport;

/// One round of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// The parameters `theta_i` that were executed this round.
    pub theta: Vec<f64>,
    /// Decision states of all rollouts, `M * T` in total.
    pub states: Vec<Vec<f64>>,
    pub labels_current: Vec<Vec<f64>>,
    /// Labels from `psi_N`, filled in after the last round.
    pub labels_final: Option<Vec<Vec<f64>>>,
    pub loss_current: f64,
    pub loss_final: Option<f64>,
    pub learner_returns: Vec<f64>,
    /// Return of `psi_i` run as the controller from the first rollout's start
    /// state and noise, when requested.
    pub supervisor_return: Option<f64>,
    /// Mean wall-clock time per learner action query, in microseconds.
    pub learner_query_us: f64,
    /// Mean wall-clock time per supervisor label query, in microseconds.
    pub supervisor_query_us: f64,
}

impl RoundRecord {
    pub fn dataset(&self) -> LabeledDataset {
        LabeledDataset::new(self.states.clone(), self.labels_current.clone())
    }

    pub fn final_labels(&self) -> Result<&[Vec<f64>]> {
        self.labels_final.as_deref().ok_or(Error::MissingFinalLabels(self.round))
    }

    pub fn mean_learner_return(&self) -> f64 {
        self.learner_returns.iter().sum::<f64>() / self.learner_returns.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerKind {
    /// Refit on the union of every round's labeled states (follow the leader).
    DaggerAggregate,
    /// Refit on the latest round only.
    GreedyPerRound,
    /// One projected gradient step on the latest round's loss.
    Ogd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `eta_i = 1 / (alpha i)` with `alpha = 2 alpha_reg`.
    StronglyConvex,
    Constant { eta: f64 },
}

impl StepSchedule {
    pub fn eta(&self, round: usize, alpha_reg: f64) -> f64 {
        match *self {
            StepSchedule::StronglyConvex => 1.0 / (2.0 * alpha_reg * round.max(1) as f64),
            StepSchedule::Constant { eta } => eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerConfig {
    pub kind: PlayerKind,
    #[serde(default = "default_alpha_reg")]
    pub alpha_reg: f64,
    #[serde(default = "default_rollouts")]
    pub rollouts_per_round: usize,
    #[serde(default = "default_step")]
    pub step: StepSchedule,
    #[serde(default)]
    pub mlp_fit: MlpFitConfig,
}

fn default_alpha_reg() -> f64 {
    1.0
}

fn default_rollouts() -> usize {
    1
}

fn default_step() -> StepSchedule {
    StepSchedule::StronglyConvex
}

impl PlayerConfig {
    pub fn new(kind: PlayerKind) -> Self {
        PlayerConfig {
            kind,
            alpha_reg: default_alpha_reg(),
            rollouts_per_round: default_rollouts(),
            step: default_step(),
            mlp_fit: MlpFitConfig::default(),
        }
    }

    /// Strong-convexity modulus of the regularized loss for the linear policy.
    pub fn alpha(&self) -> f64 {
        2.0 * self.alpha_reg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_reg > 0.0 && self.alpha_reg.is_finite()) {
            return Err(Error::config("player.alpha_reg", "must be positive"));
        }
        if self.rollouts_per_round == 0 {
            return Err(Error::config("player.rollouts_per_round", "must be at least 1"));
        }
        if let StepSchedule::Constant { eta } = self.step {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::config("player.step.eta", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// How rollout start states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartSampling {
    /// A fresh start state for every rollout.
    #[default]
    PerRollout,
    /// One start state for the whole run.
    PerRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub rounds: usize,
    pub seed: u64,
    #[serde(default)]
    pub start_sampling: StartSampling,
    #[serde(default)]
    pub evaluate_supervisor_rollout: bool,
}

impl LoopConfig {
    pub fn new(rounds: usize, seed: u64) -> Self {
        LoopConfig {
            rounds,
            seed,
            start_sampling: StartSampling::default(),
            evaluate_supervisor_rollout: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_aligned(states: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty("loss evaluation states"));
    }
    if states.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "states vs labels",
            expected: states.len(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// `(1/n) sum |pi_theta(s) - y|^2 + alpha_reg |theta|^2`.
pub fn empirical_loss(params: &PolicyParams, states: &[Vec<f64>], labels: &[Vec<f64>], alpha_reg: f64) -> Result<f64> {
    check_aligned(states, labels)?;
    let mut out = vec![0.0; params.action_dim];
    let mut total = 0.0;
    for (s, y) in states.iter().zip(labels) {
        act_into(params, s, &mut out);
        total += out.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let reg = params.theta.iter().map(|t| t * t).sum::<f64>();
    Ok(total / states.len() as f64 + alpha_reg * reg)
}

/// Mean Euclidean distance between two aligned label sets.
pub fn mean_label_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / a.len() as f64
}

/// Exact gradient of [`empirical_loss`] with respect to `theta`.
pub fn loss_gradient(params: &PolicyParams, states: &[Vec<f64>], labels: &[Vec<f64>], alpha_reg: f64) -> Result<Vec<f64>> {
    check_aligned(states, labels)?;
    let n = states.len() as f64;
    let mut grad: Vec<f64> = params.theta.iter().map(|t| 2.0 * alpha_reg * t).collect();
    let mut out = vec![0.0; params.action_dim];
    match params.kind {
        PolicyKind::LinearAffine => {
            let f = params.features.dim();
            let mut phi = vec![0.0; f];
            for (s, y) in states.iter().zip(labels) {
                act_into(params, s, &mut out);
                params.features.write(s, &mut phi);
                for a in 0..params.action_dim {
                    let r = 2.0 * (out[a] - y[a]) / n;
                    for (g, p) in grad[a * f..(a + 1) * f].iter_mut().zip(&phi) {
                        *g += r * p;
                    }
                }
            }
        }
        PolicyKind::MlpEnsemble => {
            let net = params.net();
            let p = net.param_count();
            let members = params.theta.len() / p;
            let n_in = params.features.state_dim();
            for (s, y) in states.iter().zip(labels) {
                act_into(params, s, &mut out);
                let resid: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
                let phi = params.features.features(s);
                for m in 0..members {
                    let w = &params.theta[m * p..(m + 1) * p];
                    let cache = net.forward_cached(w, &phi[..n_in]);
                    net.backward(w, &cache, &resid, 2.0 / (n * members as f64), &mut grad[m * p..(m + 1) * p]);
                }
            }
        }
    }
    Ok(grad)
}

/// Computes `theta_{i+1}` from the history up to and including round `i`.
pub fn update(player: &PlayerConfig, history: &[RoundRecord], current: &PolicyParams, seed: u64) -> Result<PolicyParams> {
    let last = history.last().ok_or(Error::NoRounds)?;
    let fit = |data: &LabeledDataset| -> Result<PolicyParams> {
        match current.kind {
            PolicyKind::LinearAffine => fit_ridge(data, player.alpha_reg, current),
            PolicyKind::MlpEnsemble => Ok(fit_mlp(data, current, &player.mlp_fit, rng::derive(&[seed, last.round as u64]))?.0),
        }
    };
    match player.kind {
        PlayerKind::DaggerAggregate => {
            let mut data = LabeledDataset::new(Vec::new(), Vec::new());
            for r in history {
                data.extend(&r.dataset());
            }
            fit(&data)
        }
        PlayerKind::GreedyPerRound => fit(&last.dataset()),
        PlayerKind::Ogd => {
            let eta = player.step.eta(last.round, player.alpha_reg);
            let grad = loss_gradient(current, &last.states, &last.labels_current, player.alpha_reg)?;
            let theta = current.theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
            Ok(project(&current.with_theta(theta)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub records: Vec<RoundRecord>,
    /// `theta_{N+1}`, the parameters after the last update.
    pub final_params: PolicyParams,
    pub final_supervisor: SupervisorHandle,
    pub dynamics_fits: Vec<DynamicsFitReport>,
}

impl LoopOutcome {
    /// The parameters played at round `i` (1-based).
    pub fn played(&self, template: &PolicyParams, i: usize) -> PolicyParams {
        template.with_theta(self.records[i - 1].theta.clone())
    }
}

fn start_seed(cfg: &LoopConfig, round: usize, rollout: usize) -> u64 {
    match cfg.start_sampling {
        StartSampling::PerRun => rng::derive(&[cfg.seed, purpose::RESET]),
        StartSampling::PerRollout => rng::derive(&[cfg.seed, purpose::RESET, round as u64, rollout as u64]),
    }
}

fn noise_seed(cfg: &LoopConfig, round: usize, rollout: usize) -> u64 {
    rng::derive(&[cfg.seed, purpose::ROLLOUT, round as u64, rollout as u64])
}

fn label_all(sup: &SupervisorHandle, states: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let t0 = Instant::now();
    let labels = states.iter().map(|s| sup.label(s)).collect::<Result<Vec<_>>>()?;
    let us = t0.elapsed().as_secs_f64() * 1e6 / states.len().max(1) as f64;
    Ok((labels, us))
}

/// Runs `N` rounds of on-policy imitation from `initial` (`theta_1`).
pub fn run_loop(env: &EnvSpec, supervisor: &SupervisorSpec, player: &PlayerConfig, initial: &PolicyParams, cfg: &LoopConfig) -> Result<LoopOutcome> {
    env.validate()?;
    player.validate()?;
    cfg.validate()?;
    initial.validate()?;
    if initial.features.state_dim() != env.state_dim || initial.action_dim != env.action_dim {
        return Err(Error::DimensionMismatch {
            context: "policy vs environment state dimension",
            expected: env.state_dim,
            got: initial.features.state_dim(),
        });
    }
    let mut sequence = SupervisorSequence::new(env, supervisor, cfg.seed)?;
    let mut params = project(initial);
    let mut records: Vec<RoundRecord> = Vec::with_capacity(cfg.rounds);

    for i in 1..=cfg.rounds {
        let mut round = || -> Result<PolicyParams> {
            let mut trajectories: Vec<Trajectory> = Vec::with_capacity(player.rollouts_per_round);
            let mut act_time = 0.0;
            let mut act_calls = 0usize;
            for m in 0..player.rollouts_per_round {
                let start = env.reset(start_seed(cfg, i, m));
                let traj = env.rollout_from(
                    |s| {
                        let mut a = vec![0.0; params.action_dim];
                        let t0 = Instant::now();
                        act_into(&params, s, &mut a);
                        act_time += t0.elapsed().as_secs_f64();
                        act_calls += 1;
                        a
                    },
                    start,
                    noise_seed(cfg, i, m),
                )?;
                trajectories.push(traj);
            }
            let sup = sequence.advance(i, &trajectories)?.clone();
            let states: Vec<Vec<f64>> = trajectories.iter().flat_map(|t| t.decision_states().to_vec()).collect();
            let (labels, sup_us) = label_all(&sup, &states)?;
            let loss_current = empirical_loss(&params, &states, &labels, player.alpha_reg)?;
            let supervisor_return = if cfg.evaluate_supervisor_rollout {
                let mut failure = None;
                let eval = env.rollout_from(
                    |s| match sup.label(s) {
                        Ok(a) => a,
                        Err(e) => {
                            failure.get_or_insert(e);
                            vec![0.0; env.action_dim]
                        }
                    },
                    env.reset(start_seed(cfg, i, 0)),
                    noise_seed(cfg, i, 0),
                )?;
                if let Some(e) = failure {
                    return Err(e);
                }
                Some(eval.episode_return())
            } else {
                None
            };
            records.push(RoundRecord {
                round: i,
                theta: params.theta.clone(),
                states,
                labels_current: labels,
                labels_final: None,
                loss_current,
                loss_final: None,
                learner_returns: trajectories.iter().map(Trajectory::episode_return).collect(),
                supervisor_return,
                learner_query_us: act_time * 1e6 / act_calls.max(1) as f64,
                supervisor_query_us: sup_us,
            });
            update(player, &records, &params, cfg.seed)
        };
        params = round().map_err(|e| e.at_round(i))?;
    }

    let final_supervisor = sequence.snapshot_final()?;
    for r in &mut records {
        let (labels, _) = label_all(&final_supervisor, &r.states).map_err(|e| e.at_round(r.round))?;
        let played = params.with_theta(r.theta.clone());
        r.loss_final = Some(empirical_loss(&played, &r.states, &labels, player.alpha_reg)?);
        r.labels_final = Some(labels);
    }
    Ok(LoopOutcome {
        records,
        final_params: params,
        final_supervisor,
        dynamics_fits: sequence.fit_reports().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{FeatureMap, MlpShape, NormalEquations};
    use crate::supervisor::{PdRule, RateSchedule};
    use rand::Rng;

    fn linear() -> PolicyParams {
        PolicyParams::linear_zero(FeatureMap::identity(4, 2.0), 2, 50.0)
    }

    fn random_data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut r = rng::stream(&[seed]);
        let states = (0..n).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let labels = (0..n).map(|_| (0..2).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        (states, labels)
    }

    fn random_theta(seed: u64, d: usize, scale: f64) -> Vec<f64> {
        let mut r = rng::stream(&[seed, 99]);
        (0..d).map(|_| r.gen_range(-scale..scale)).collect()
    }

    fn synthetic(schedule: RateSchedule) -> SupervisorSpec {
        SupervisorSpec::Synthetic {
            pd: PdRule::default(),
            schedule,
        }
    }

    #[test]
    fn loss_is_zero_on_own_labels() {
        let p = linear().with_theta(random_theta(1, 10, 1.0));
        let (states, _) = random_data(2, 20);
        let labels: Vec<Vec<f64>> = states.iter().map(|s| crate::policy::act(&p, s).unwrap()).collect();
        assert_eq!(empirical_loss(&p, &states, &labels, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_policy_loss_is_mean_label_energy() {
        let (states, labels) = random_data(3, 30);
        let want = labels.iter().map(|y| y.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 30.0;
        assert!((empirical_loss(&linear(), &states, &labels, 1.0).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_two_loop_oracle() {
        let p = linear().with_theta(random_theta(4, 10, 2.0));
        let (states, labels) = random_data(5, 40);
        let mut total = 0.0;
        for k in 0..40 {
            let phi = p.features.features(&states[k]);
            for a in 0..2 {
                let mut z = 0.0;
                for j in 0..5 {
                    z += p.theta[a * 5 + j] * phi[j];
                }
                total += (z - labels[k][a]).powi(2);
            }
        }
        let reg: f64 = p.theta.iter().map(|t| t * t).sum();
        let want = total / 40.0 + 0.3 * reg;
        assert!((empirical_loss(&p, &states, &labels, 0.3).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn empty_states_are_rejected() {
        assert!(matches!(empirical_loss(&linear(), &[], &[], 1.0), Err(Error::Empty(_))));
    }

    fn fd_check(p: &PolicyParams, states: &[Vec<f64>], labels: &[Vec<f64>], alpha: f64) {
        let g = loss_gradient(p, states, labels, alpha).unwrap();
        let h = 1e-6;
        for k in 0..p.dim() {
            let mut t = p.theta.clone();
            t[k] += h;
            let up = empirical_loss(&p.with_theta(t.clone()), states, labels, alpha).unwrap();
            t[k] -= 2.0 * h;
            let dn = empirical_loss(&p.with_theta(t), states, labels, alpha).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "coord {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (states, labels) = random_data(6, 25);
        fd_check(&linear().with_theta(random_theta(7, 10, 1.0)), &states, &labels, 0.5);
        let shape = MlpShape {
            members: 2,
            hidden: vec![6, 5],
            ..MlpShape::default()
        };
        let mlp = PolicyParams::mlp_init(FeatureMap::identity(4, 2.0), 2, 50.0, shape, 8);
        fd_check(&mlp, &states[..8], &labels[..8], 0.1);
    }

    #[test]
    fn regularizer_gradient_with_zero_residuals() {
        let p = linear().with_theta(random_theta(9, 10, 1.0));
        let (states, _) = random_data(10, 10);
        let labels: Vec<Vec<f64>> = states.iter().map(|s| crate::policy::act(&p, s).unwrap()).collect();
        let g = loss_gradient(&p, &states, &labels, 0.7).unwrap();
        for (gi, t) in g.iter().zip(&p.theta) {
            assert!((gi - 1.4 * t).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_is_strongly_convex() {
        let (states, labels) = random_data(11, 30);
        let alpha_reg = 0.8;
        for k in 0..200 {
            let a = linear().with_theta(random_theta(100 + k, 10, 3.0));
            let b = linear().with_theta(random_theta(500 + k, 10, 3.0));
            let la = empirical_loss(&a, &states, &labels, alpha_reg).unwrap();
            let lb = empirical_loss(&b, &states, &labels, alpha_reg).unwrap();
            let g = loss_gradient(&a, &states, &labels, alpha_reg).unwrap();
            let lin: f64 = g.iter().zip(a.theta.iter().zip(&b.theta)).map(|(g, (x, y))| g * (y - x)).sum();
            let dist2: f64 = a.theta.iter().zip(&b.theta).map(|(x, y)| (y - x).powi(2)).sum();
            let resid = lb - la - lin - alpha_reg * dist2;
            assert!(resid >= -1e-10, "{resid}");
        }
    }

    fn record(round: usize, theta: Vec<f64>, seed: u64) -> RoundRecord {
        let (states, labels) = random_data(seed, 20);
        RoundRecord {
            round,
            theta,
            states,
            labels_current: labels,
            labels_final: None,
            loss_current: 0.0,
            loss_final: None,
            learner_returns: vec![0.0],
            supervisor_return: None,
            learner_query_us: 0.0,
            supervisor_query_us: 0.0,
        }
    }

    #[test]
    fn greedy_update_is_first_order_optimal() {
        let p = linear();
        let history = vec![record(1, p.theta.clone(), 12)];
        let next = update(&PlayerConfig::new(PlayerKind::GreedyPerRound), &history, &p, 0).unwrap();
        let g = loss_gradient(&next, &history[0].states, &history[0].labels_current, 1.0).unwrap();
        assert!(crate::policy::norm(&g) < 1e-8);
    }

    #[test]
    fn ogd_with_zero_step_keeps_parameters() {
        let p = linear().with_theta(random_theta(13, 10, 1.0));
        let history = vec![record(1, p.theta.clone(), 14)];
        let player = PlayerConfig {
            step: StepSchedule::Constant { eta: 0.0 },
            ..PlayerConfig::new(PlayerKind::Ogd)
        };
        assert_eq!(update(&player, &history, &p, 0).unwrap().theta, p.theta);
    }

    #[test]
    fn aggregate_update_matches_from_scratch_refit() {
        let p = linear();
        let history: Vec<RoundRecord> = (1..=4).map(|i| record(i, p.theta.clone(), 20 + i as u64)).collect();
        let next = update(&PlayerConfig::new(PlayerKind::DaggerAggregate), &history, &p, 0).unwrap();
        let states: Vec<Vec<f64>> = history.iter().flat_map(|r| r.states.clone()).collect();
        let labels: Vec<Vec<f64>> = history.iter().flat_map(|r| r.labels_current.clone()).collect();
        let ne = NormalEquations::from_samples(&p.features, &states, &labels, None);
        let want = ne.solve(1.0, p.radius);
        for (a, b) in next.theta.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn update_needs_history() {
        assert!(matches!(update(&PlayerConfig::new(PlayerKind::Ogd), &[], &linear(), 0), Err(Error::NoRounds)));
    }

    #[test]
    fn single_round_aggregate_does_not_increase_loss() {
        let env = EnvSpec::lin_reach();
        let player = PlayerConfig::new(PlayerKind::DaggerAggregate);
        let out = run_loop(&env, &synthetic(RateSchedule::fixed()), &player, &linear(), &LoopConfig::new(1, 3)).unwrap();
        let r = &out.records[0];
        let before = empirical_loss(&linear(), &r.states, &r.labels_current, 1.0).unwrap();
        let after = empirical_loss(&out.final_params, &r.states, &r.labels_current, 1.0).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn fixed_supervisor_labels_agree() {
        let env = EnvSpec::lin_reach();
        let out = run_loop(
            &env,
            &synthetic(RateSchedule::fixed()),
            &PlayerConfig::new(PlayerKind::Ogd),
            &linear(),
            &LoopConfig::new(5, 4),
        )
        .unwrap();
        for r in &out.records {
            assert_eq!(r.labels_final.as_ref().unwrap(), &r.labels_current);
            assert_eq!(r.states.len(), env.horizon);
            assert!(r.loss_current >= 0.0 && r.loss_current.is_finite());
        }
    }

    #[test]
    fn loop_is_deterministic() {
        let env = EnvSpec::lin_reach();
        let player = PlayerConfig::new(PlayerKind::DaggerAggregate);
        let cfg = LoopConfig::new(6, 11);
        let a = run_loop(&env, &synthetic(RateSchedule::harmonic(0.4)), &player, &linear(), &cfg).unwrap();
        let b = run_loop(&env, &synthetic(RateSchedule::harmonic(0.4)), &player, &linear(), &cfg).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.theta, y.theta);
            assert_eq!(x.states, y.states);
            assert_eq!(x.labels_final, y.labels_final);
            assert_eq!(x.loss_current.to_bits(), y.loss_current.to_bits());
        }
    }

    #[test]
    fn played_parameters_stay_in_the_ball() {
        let env = EnvSpec::lin_reach();
        let small = PolicyParams::linear_zero(FeatureMap::identity(4, 2.0), 2, 0.3);
        let player = PlayerConfig {
            alpha_reg: 1e-3,
            ..PlayerConfig::new(PlayerKind::Ogd)
        };
        let out = run_loop(&env, &synthetic(RateSchedule::harmonic(0.4)), &player, &small, &LoopConfig::new(8, 5)).unwrap();
        for r in &out.records {
            assert!(crate::policy::norm(&r.theta) <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn per_run_starts_repeat() {
        let env = EnvSpec::lin_reach();
        let cfg = LoopConfig {
            start_sampling: StartSampling::PerRun,
            ..LoopConfig::new(3, 9)
        };
        let out = run_loop(&env, &synthetic(RateSchedule::fixed()), &PlayerConfig::new(PlayerKind::Ogd), &linear(), &cfg).unwrap();
        assert_eq!(out.records[0].states[0], out.records[2].states[0]);
    }

    #[test]
    fn huge_steps_are_projected() {
        let env = EnvSpec::lin_reach();
        let player = PlayerConfig {
            step: StepSchedule::Constant { eta: 1e300 },
            ..PlayerConfig::new(PlayerKind::Ogd)
        };
        let out = run_loop(&env, &synthetic(RateSchedule::harmonic(0.4)), &player, &linear(), &LoopConfig::new(4, 1)).unwrap();
        assert!(out.records.iter().all(|r| crate::policy::norm(&r.theta) <= 50.0 + 1e-9));
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let env = EnvSpec::lin_reach();
        let wrong = PolicyParams::linear_zero(FeatureMap::identity(3, 2.0), 2, 50.0);
        let err = run_loop(&env, &synthetic(RateSchedule::fixed()), &PlayerConfig::new(PlayerKind::Ogd), &wrong, &LoopConfig::new(2, 1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    }

    #[test]
    fn component_errors_carry_the_round() {
        let env = EnvSpec::lin_reach();
        let spec = SupervisorSpec::MpcCem {
            planner: crate::supervisor::PlannerConfig::default(),
            dynamics: crate::dynamics::DynamicsConfig {
                batch_size: 64,
                ..Default::default()
            },
            seed_rollouts: 0,
        };
        let err = run_loop(&env, &spec, &PlayerConfig::new(PlayerKind::Ogd), &linear(), &LoopConfig::new(2, 1)).unwrap_err();
        assert!(matches!(err, Error::Round { round: 1, .. }), "{err}");
    }
}
