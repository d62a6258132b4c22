//! Finite-horizon point-mass reaching tasks.
//!
//! The state is `[p; v]` with position `p` and velocity `v` in `R^k`, where
//! `k = action_dim`. One step with time increment `dt`, damping `mu`, noise
//! scale `sigma` and clipped action `u = clip(a)`:
//!
//! ```text
//! p' = p + dt * v
//! v' = (1 - mu) * v + dt * u + dt * d(p) + sigma * w
//! r  = -|p - g|^2 - lambda * |u|^2
//! ```
//!
//! `w` is the caller-supplied noise draw. `d(p) = 0` for `LinReach`; for
//! `NonlinReach` it is the bounded drift
//! `d_j(p) = kappa * (-1)^j * sin(3 * p_{(j+1) mod k})`, so `|d_j| <= kappa`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    LinReach,
    NonlinReach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub noise_std: f64,
    pub goal: Vec<f64>,
    pub damping: f64,
    pub dt: f64,
    pub action_cost: f64,
    /// Side length of the uniform start box for positions.
    #[serde(default = "default_start_width")]
    pub start_width: f64,
    /// Center of the start box; the origin when omitted.
    #[serde(default)]
    pub start_center: Option<Vec<f64>>,
    /// Drift amplitude `kappa` for `NonlinReach`; ignored for `LinReach`.
    #[serde(default = "default_drift_gain")]
    pub drift_gain: f64,
}

fn default_start_width() -> f64 {
    0.5
}

fn default_drift_gain() -> f64 {
    0.5
}

/// A recorded episode. `states` has `horizon + 1` entries; `actions` holds the
/// raw controller outputs, before clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// The states at which actions were taken (all but the terminal state).
    pub fn decision_states(&self) -> &[Vec<f64>] {
        &self.states[..self.actions.len()]
    }
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self::lin_reach()
    }
}

impl EnvSpec {
    /// Planar reacher with default constants.
    pub fn lin_reach() -> Self {
        EnvSpec {
            kind: EnvKind::LinReach,
            state_dim: 4,
            action_dim: 2,
            horizon: 50,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            noise_std: 0.01,
            goal: vec![0.6, 0.4],
            damping: 0.1,
            dt: 0.1,
            action_cost: 0.01,
            start_width: default_start_width(),
            start_center: None,
            drift_gain: default_drift_gain(),
        }
    }

    pub fn nonlin_reach() -> Self {
        EnvSpec {
            kind: EnvKind::NonlinReach,
            ..Self::lin_reach()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.action_dim;
        if k == 0 {
            return Err(Error::config("env.action_dim", "must be positive"));
        }
        if self.state_dim != 2 * k {
            return Err(Error::config(
                "env.state_dim",
                format!("reach tasks need state_dim = 2 * action_dim = {}", 2 * k),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be at least 1"));
        }
        if self.action_low.len() != k || self.action_high.len() != k {
            return Err(Error::config("env.action_low/action_high", "length must equal action_dim"));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::config("env.action_low/action_high", "need finite low < high in every dimension"));
        }
        if self.goal.len() != k {
            return Err(Error::config("env.goal", "length must equal action_dim"));
        }
        if let Some(c) = &self.start_center {
            if c.len() != k {
                return Err(Error::config("env.start_center", "length must equal action_dim"));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("env.noise_std", "must be nonnegative"));
        }
        if !(self.action_cost >= 0.0) {
            return Err(Error::config("env.action_cost", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::config("env.damping", "must lie in [0, 1)"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("env.dt", "must be positive"));
        }
        if !(self.start_width >= 0.0) {
            return Err(Error::config("env.start_width", "must be nonnegative"));
        }
        if !(self.drift_gain >= 0.0) {
            return Err(Error::config("env.drift_gain", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn position_dim(&self) -> usize {
        self.action_dim
    }

    /// Euclidean diameter of the action box.
    pub fn action_diameter(&self) -> f64 {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest action norm in the box.
    pub fn max_action_norm(&self) -> f64 {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    pub fn clip_action_in_place(&self, action: &mut [f64]) {
        for (a, (lo, hi)) in action.iter_mut().zip(self.action_low.iter().zip(&self.action_high)) {
            *a = a.clamp(*lo, *hi);
        }
    }

    /// Initial state: positions uniform in the start box, zero velocity.
    pub fn reset(&self, seed: u64) -> Vec<f64> {
        let k = self.action_dim;
        let mut rng = rng::stream(&[seed, purpose::RESET]);
        let mut state = vec![0.0; 2 * k];
        for (j, p) in state[..k].iter_mut().enumerate() {
            let center = self.start_center.as_ref().map_or(0.0, |c| c[j]);
            let u: f64 = rng.gen();
            *p = center + self.start_width * (u - 0.5);
        }
        state
    }

    pub fn drift(&self, position: &[f64]) -> Vec<f64> {
        let k = position.len();
        match self.kind {
            EnvKind::LinReach => vec![0.0; k],
            EnvKind::NonlinReach => (0..k)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * self.drift_gain * (3.0 * position[(j + 1) % k]).sin()
                })
                .collect(),
        }
    }

    /// Reward for taking (already clipped) `applied` at `state`.
    pub fn reward(&self, state: &[f64], applied: &[f64]) -> f64 {
        let k = self.action_dim;
        let dist2: f64 = state[..k]
            .iter()
            .zip(&self.goal)
            .map(|(p, g)| (p - g).powi(2))
            .sum();
        let effort: f64 = applied.iter().map(|a| a * a).sum();
        -dist2 - self.action_cost * effort
    }

    /// Noise-free transition with an already-clipped action, written into `next`.
    /// This is the model the planner uses when given exact dynamics.
    pub fn advance_into(&self, state: &[f64], applied: &[f64], noise: Option<&[f64]>, next: &mut [f64]) {
        let k = self.action_dim;
        let (p, v) = state.split_at(k);
        let drift = match self.kind {
            EnvKind::LinReach => None,
            EnvKind::NonlinReach => Some(self.drift(p)),
        };
        for j in 0..k {
            next[j] = p[j] + self.dt * v[j];
            let mut vj = (1.0 - self.damping) * v[j] + self.dt * applied[j];
            if let Some(d) = &drift {
                vj += self.dt * d[j];
            }
            if let Some(w) = noise {
                vj += self.noise_std * w[j];
            }
            next[k + j] = vj;
        }
    }

    /// One environment step. The action is clipped to the action box first.
    pub fn step(&self, state: &[f64], action: &[f64], noise_draw: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure_dim(state, self.state_dim, "env state")?;
        ensure_dim(action, self.action_dim, "env action")?;
        ensure_dim(noise_draw, self.action_dim, "env noise draw")?;
        ensure_finite(state, "env state")?;
        ensure_finite(action, "env action")?;
        ensure_finite(noise_draw, "env noise draw")?;
        let applied = self.clip_action(action);
        let reward = self.reward(state, &applied);
        let mut next = vec![0.0; self.state_dim];
        self.advance_into(state, &applied, Some(noise_draw), &mut next);
        Ok((next, reward))
    }

    /// Noise draws for an episode started from `seed`, one per step.
    pub fn noise_draws(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(&[seed, purpose::NOISE]);
        (0..self.horizon)
            .map(|_| rng::standard_normals(&mut rng, self.action_dim))
            .collect()
    }

    pub fn rollout<C>(&self, controller: C, seed: u64) -> Result<Trajectory>
    where
        C: FnMut(&[f64]) -> Vec<f64>,
    {
        self.rollout_from(controller, self.reset(seed), seed)
    }

    /// Episode from a given start state, with process noise drawn from `seed`.
    pub fn rollout_from<C>(&self, mut controller: C, start: Vec<f64>, seed: u64) -> Result<Trajectory>
    where
        C: FnMut(&[f64]) -> Vec<f64>,
    {
        ensure_dim(&start, self.state_dim, "start state")?;
        ensure_finite(&start, "start state")?;
        let noise = self.noise_draws(seed);
        let mut state = start;
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut actions = Vec::with_capacity(self.horizon);
        let mut rewards = Vec::with_capacity(self.horizon);
        for w in &noise {
            let action = controller(&state);
            ensure_dim(&action, self.action_dim, "controller output")?;
            let (next, reward) = self.step(&state, &action, w)?;
            states.push(std::mem::replace(&mut state, next));
            actions.push(action);
            rewards.push(reward);
        }
        states.push(state);
        Ok(Trajectory {
            states,
            actions,
            rewards,
            seed,
        })
    }
}
