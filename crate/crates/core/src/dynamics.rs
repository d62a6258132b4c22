//! Learned one-step dynamics: a deterministic ensemble of small networks,
//! each predicting the normalized state change `s' - s` from normalized
//! `(s, a)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Trajectory};
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::nn::{Activation, Adam, Mlp, Workspace};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// The clipped action actually applied.
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub episode: usize,
}

/// Per-dimension affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics of `rows`; near-constant dimensions keep unit scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
        Normalizer { mean, std }
    }

    pub fn normalize(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn denormalize(&self, z: &[f64], out: &mut [f64]) {
        for j in 0..z.len() {
            out[j] = z[j] * self.std[j] + self.mean[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionBuffer {
    pub transitions: Vec<Transition>,
}

impl TransitionBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.next_state.len() != t.state.len() {
            return Err(Error::DimensionMismatch {
                context: "transition next state",
                expected: t.state.len(),
                got: t.next_state.len(),
            });
        }
        ensure_finite(&t.state, "transition state")?;
        ensure_finite(&t.action, "transition action")?;
        ensure_finite(&t.next_state, "transition next state")?;
        self.transitions.push(t);
        Ok(())
    }

    /// Appends every step of `traj`, recording the clipped applied action.
    pub fn push_trajectory(&mut self, env: &EnvSpec, traj: &Trajectory, episode: usize) -> Result<()> {
        for (t, a) in traj.actions.iter().enumerate() {
            self.push(Transition {
                state: traj.states[t].clone(),
                action: env.clip_action(a),
                next_state: traj.states[t + 1].clone(),
                episode,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            members: 3,
            hidden: vec![32],
            activation: Activation::Tanh,
            epochs: 100,
            step_size: 5e-3,
            batch_size: 16,
            holdout_fraction: 0.1,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::config("dynamics.members", "need at least one ensemble member"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("dynamics.batch_size", "must be positive"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::config("dynamics.step_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("dynamics.holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Anything the planner can roll candidate action sequences through.
pub trait DynamicsModel: Sync {
    fn members(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn scratch(&self) -> ModelScratch;
    /// Writes the predicted next state for `member` into `out`.
    fn predict_into(&self, member: usize, state: &[f64], action: &[f64], scratch: &mut ModelScratch, out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct ModelScratch {
    ws: Option<Workspace>,
    input: Vec<f64>,
    delta: Vec<f64>,
}

impl ModelScratch {
    pub fn empty() -> Self {
        ModelScratch {
            ws: None,
            input: Vec::new(),
            delta: Vec::new(),
        }
    }
}

/// The true noise-free environment step, used as an oracle model.
#[derive(Debug, Clone)]
pub struct ExactModel(pub EnvSpec);

impl DynamicsModel for ExactModel {
    fn members(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.0.state_dim
    }

    fn scratch(&self) -> ModelScratch {
        ModelScratch::empty()
    }

    fn predict_into(&self, _member: usize, state: &[f64], action: &[f64], _scratch: &mut ModelScratch, out: &mut [f64]) {
        self.0.advance_into(state, action, None, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsEnsemble {
    pub net: Mlp,
    pub weights: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsFitReport {
    /// Held-out one-step mean squared error per member, averaged over state
    /// coordinates, in state units.
    pub heldout_mse: Vec<f64>,
    pub train_size: usize,
    pub heldout_size: usize,
}

impl DynamicsEnsemble {
    /// Members whose output layer is zero: every prediction returns `s`.
    pub fn untrained(state_dim: usize, action_dim: usize, config: &DynamicsConfig, seed: u64) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&config.hidden);
        sizes.push(state_dim);
        let net = Mlp::new(sizes, config.activation);
        let seeds: Vec<u64> = (0..config.members as u64).map(|m| rng::derive(&[seed, m])).collect();
        let weights = seeds
            .iter()
            .map(|&s| net.init(&mut rng::stream(&[s, purpose::INIT]), true))
            .collect();
        DynamicsEnsemble {
            net,
            weights,
            seeds,
            input_norm: Normalizer::identity(state_dim + action_dim),
            output_norm: Normalizer::identity(state_dim),
            state_dim,
            action_dim,
        }
    }

    pub fn predict(&self, member: usize, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if member >= self.weights.len() {
            return Err(Error::IndexOutOfRange {
                index: member,
                len: self.weights.len(),
            });
        }
        ensure_dim(state, self.state_dim, "dynamics state")?;
        ensure_dim(action, self.action_dim, "dynamics action")?;
        let mut scratch = self.scratch();
        let mut out = vec![0.0; self.state_dim];
        self.predict_into(member, state, action, &mut scratch, &mut out);
        Ok(out)
    }

    /// Largest pairwise distance between member predictions.
    pub fn disagreement(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let preds: Vec<Vec<f64>> = (0..self.weights.len())
            .map(|m| self.predict(m, state, action))
            .collect::<Result<_>>()?;
        let mut worst: f64 = 0.0;
        for (i, a) in preds.iter().enumerate() {
            for b in &preds[i + 1..] {
                worst = worst.max(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
            }
        }
        Ok(worst)
    }
}

impl DynamicsModel for DynamicsEnsemble {
    fn members(&self) -> usize {
        self.weights.len()
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn scratch(&self) -> ModelScratch {
        ModelScratch {
            ws: Some(self.net.workspace()),
            input: vec![0.0; self.state_dim + self.action_dim],
            delta: vec![0.0; self.state_dim],
        }
    }

    fn predict_into(&self, member: usize, state: &[f64], action: &[f64], scratch: &mut ModelScratch, out: &mut [f64]) {
        let n = self.state_dim;
        let (mean, std) = (&self.input_norm.mean, &self.input_norm.std);
        for (j, x) in state.iter().chain(action).enumerate() {
            scratch.input[j] = (x - mean[j]) / std[j];
        }
        let ws = scratch.ws.as_mut().expect("ensemble scratch");
        self.net.forward_into(&self.weights[member], &scratch.input, ws, &mut scratch.delta);
        self.output_norm.denormalize(&scratch.delta, out);
        for j in 0..n {
            out[j] += state[j];
        }
    }
}

/// Trains each member on the first `1 - holdout_fraction` of the buffer and
/// reports its error on the remainder.
pub fn fit_dynamics(buffer: &TransitionBuffer, config: &DynamicsConfig, seed: u64) -> Result<(DynamicsEnsemble, DynamicsFitReport)> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(Error::Empty("transition buffer"));
    }
    let need = 2 * config.batch_size;
    if buffer.len() < need {
        return Err(Error::BufferTooSmall { have: buffer.len(), need });
    }
    let first = &buffer.transitions[0];
    let (n, k) = (first.state.len(), first.action.len());
    let heldout_size = ((buffer.len() as f64) * config.holdout_fraction).floor() as usize;
    let train_size = buffer.len() - heldout_size;
    let (train, heldout) = buffer.transitions.split_at(train_size);

    let inputs: Vec<Vec<f64>> = train.iter().map(|t| [t.state.as_slice(), t.action.as_slice()].concat()).collect();
    let deltas: Vec<Vec<f64>> = train
        .iter()
        .map(|t| t.next_state.iter().zip(&t.state).map(|(a, b)| a - b).collect())
        .collect();
    let input_norm = Normalizer::fit(inputs.iter().map(|v| v.as_slice()), n + k);
    let output_norm = Normalizer::fit(deltas.iter().map(|v| v.as_slice()), n);
    let x: Vec<Vec<f64>> = inputs
        .iter()
        .map(|v| {
            let mut z = vec![0.0; n + k];
            input_norm.normalize(v, &mut z);
            z
        })
        .collect();
    let y: Vec<Vec<f64>> = deltas
        .iter()
        .map(|v| {
            let mut z = vec![0.0; n];
            output_norm.normalize(v, &mut z);
            z
        })
        .collect();

    let mut ensemble = DynamicsEnsemble::untrained(n, k, config, seed);
    ensemble.input_norm = input_norm;
    ensemble.output_norm = output_norm;
    let net = ensemble.net.clone();
    let p = net.param_count();
    for (m, w) in ensemble.weights.iter_mut().enumerate() {
        let mut opt = Adam::new(p, config.step_size);
        let mut rng = rng::stream(&[ensemble.seeds[m], purpose::SHUFFLE]);
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut grad = vec![0.0; p];
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in chunk {
                    let cache = net.forward_cached(w, &x[i]);
                    let resid: Vec<f64> = cache.output().iter().zip(&y[i]).map(|(o, t)| o - t).collect();
                    net.backward(w, &cache, &resid, 2.0 / chunk.len() as f64, &mut grad);
                }
                opt.step(w, &grad);
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { member: m, epoch });
            }
        }
    }

    let mut heldout_mse = vec![0.0; ensemble.weights.len()];
    if !heldout.is_empty() {
        let mut scratch = ensemble.scratch();
        let mut pred = vec![0.0; n];
        for (m, mse) in heldout_mse.iter_mut().enumerate() {
            for t in heldout {
                ensemble.predict_into(m, &t.state, &t.action, &mut scratch, &mut pred);
                *mse += pred.iter().zip(&t.next_state).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
            }
            *mse /= heldout.len() as f64;
        }
    }
    Ok((
        ensemble,
        DynamicsFitReport {
            heldout_mse,
            train_size,
            heldout_size,
        },
    ))
}
