//! Learner policies `pi_theta: S -> A` over a flat parameter vector.
//!
//! Both kinds read the state through a [`FeatureMap`] that scales and clips
//! each coordinate, so the Jacobian of the linear policy is bounded by the
//! largest feature norm. Outputs are never clipped here; the environment
//! clips at its boundary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::nn::{Activation, Adam, Mlp};
use crate::rng::{self, purpose};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LinearAffine,
    MlpEnsemble,
}

/// `phi(s) = [clamp(scale_j * s_j, -clip, clip) for j; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub scale: Vec<f64>,
    pub clip: f64,
}

impl FeatureMap {
    pub fn new(scale: Vec<f64>, clip: f64) -> Self {
        FeatureMap { scale, clip }
    }

    pub fn identity(state_dim: usize, clip: f64) -> Self {
        FeatureMap::new(vec![1.0; state_dim], clip)
    }

    pub fn state_dim(&self) -> usize {
        self.scale.len()
    }

    /// Length of `phi(s)`, including the constant.
    pub fn dim(&self) -> usize {
        self.scale.len() + 1
    }

    pub fn write(&self, state: &[f64], out: &mut [f64]) {
        let n = self.scale.len();
        for j in 0..n {
            out[j] = (self.scale[j] * state[j]).clamp(-self.clip, self.clip);
        }
        out[n] = 1.0;
    }

    pub fn features(&self, state: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; self.dim()];
        self.write(state, &mut phi);
        phi
    }

    /// Supremum of `|phi(s)|` over all states.
    pub fn max_norm(&self) -> f64 {
        (self.scale.len() as f64 * self.clip * self.clip + 1.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpShape {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpShape {
    fn default() -> Self {
        MlpShape {
            members: 5,
            hidden: vec![20, 20],
            activation: Activation::Swish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    pub theta: Vec<f64>,
    pub features: FeatureMap,
    pub action_dim: usize,
    /// Radius `R` of the parameter ball.
    pub radius: f64,
    /// Bound `G` on the operator norm of the policy Jacobian.
    pub jacobian_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpShape>,
}

impl PolicyParams {
    /// The zero linear policy, the center of the parameter ball.
    pub fn linear_zero(features: FeatureMap, action_dim: usize, radius: f64) -> Self {
        let d = action_dim * features.dim();
        PolicyParams {
            kind: PolicyKind::LinearAffine,
            theta: vec![0.0; d],
            jacobian_bound: features.max_norm(),
            features,
            action_dim,
            radius,
            mlp: None,
        }
    }

    /// A freshly initialized ensemble. `G` starts at the linear-feature bound
    /// and should be re-measured with [`estimate_jacobian_bound`].
    pub fn mlp_init(features: FeatureMap, action_dim: usize, radius: f64, shape: MlpShape, seed: u64) -> Self {
        let net = member_net(&features, action_dim, &shape);
        let mut theta = Vec::with_capacity(shape.members * net.param_count());
        for m in 0..shape.members {
            theta.extend(net.init(&mut rng::stream(&[seed, purpose::INIT, m as u64]), false));
        }
        let params = PolicyParams {
            kind: PolicyKind::MlpEnsemble,
            theta,
            jacobian_bound: features.max_norm(),
            features,
            action_dim,
            radius,
            mlp: Some(shape),
        };
        project(&params)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        PolicyParams { theta, ..self.clone() }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.theta)
    }

    pub(crate) fn net(&self) -> Mlp {
        member_net(&self.features, self.action_dim, self.mlp.as_ref().expect("mlp shape"))
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.theta, "policy parameters")?;
        let expected = match self.kind {
            PolicyKind::LinearAffine => self.action_dim * self.features.dim(),
            PolicyKind::MlpEnsemble => {
                let shape = self.mlp.as_ref().ok_or_else(|| Error::config("policy.mlp", "missing ensemble shape"))?;
                shape.members * self.net().param_count()
            }
        };
        ensure_dim(&self.theta, expected, "policy parameters")
    }
}

fn member_net(features: &FeatureMap, action_dim: usize, shape: &MlpShape) -> Mlp {
    let mut sizes = vec![features.state_dim()];
    sizes.extend(&shape.hidden);
    sizes.push(action_dim);
    Mlp::new(sizes, shape.activation)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn act(params: &PolicyParams, state: &[f64]) -> Result<Vec<f64>> {
    ensure_dim(state, params.features.state_dim(), "policy state")?;
    ensure_finite(state, "policy state")?;
    let mut out = vec![0.0; params.action_dim];
    act_into(params, state, &mut out);
    Ok(out)
}

/// Unchecked evaluation; `state` must have the feature map's dimension.
pub fn act_into(params: &PolicyParams, state: &[f64], out: &mut [f64]) {
    match params.kind {
        PolicyKind::LinearAffine => {
            let f = params.features.dim();
            let n = f - 1;
            for (a, o) in out.iter_mut().enumerate() {
                let row = &params.theta[a * f..(a + 1) * f];
                let mut z = row[n];
                for j in 0..n {
                    z += row[j] * (params.features.scale[j] * state[j]).clamp(-params.features.clip, params.features.clip);
                }
                *o = z;
            }
        }
        PolicyKind::MlpEnsemble => {
            let net = params.net();
            let p = net.param_count();
            let members = params.theta.len() / p;
            let phi = params.features.features(state);
            let input = &phi[..params.features.state_dim()];
            let mut ws = net.workspace();
            let mut y = vec![0.0; params.action_dim];
            out.iter_mut().for_each(|o| *o = 0.0);
            for m in 0..members {
                net.forward_into(&params.theta[m * p..(m + 1) * p], input, &mut ws, &mut y);
                for (o, v) in out.iter_mut().zip(&y) {
                    *o += v / members as f64;
                }
            }
        }
    }
}

/// Exact Jacobian `d act / d theta`, shape `action_dim x d`.
pub fn policy_jacobian(params: &PolicyParams, state: &[f64]) -> Result<DMatrix<f64>> {
    ensure_dim(state, params.features.state_dim(), "policy state")?;
    let d = params.dim();
    let mut jac = DMatrix::zeros(params.action_dim, d);
    let phi = params.features.features(state);
    match params.kind {
        PolicyKind::LinearAffine => {
            let f = phi.len();
            for a in 0..params.action_dim {
                for (j, v) in phi.iter().enumerate() {
                    jac[(a, a * f + j)] = *v;
                }
            }
        }
        PolicyKind::MlpEnsemble => {
            let net = params.net();
            let p = net.param_count();
            let members = d / p;
            let input = &phi[..params.features.state_dim()];
            let mut grad = vec![0.0; p];
            let mut unit = vec![0.0; params.action_dim];
            for m in 0..members {
                let w = &params.theta[m * p..(m + 1) * p];
                let cache = net.forward_cached(w, input);
                for a in 0..params.action_dim {
                    unit.iter_mut().for_each(|u| *u = 0.0);
                    unit[a] = 1.0;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    net.backward(w, &cache, &unit, 1.0 / members as f64, &mut grad);
                    for (k, g) in grad.iter().enumerate() {
                        jac[(a, m * p + k)] = *g;
                    }
                }
            }
        }
    }
    Ok(jac)
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Largest Jacobian operator norm over `states`, times `margin`.
pub fn estimate_jacobian_bound(params: &PolicyParams, states: &[Vec<f64>], margin: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in states {
        worst = worst.max(operator_norm(&policy_jacobian(params, s)?));
    }
    Ok(worst * margin)
}

/// Euclidean projection onto the ball `|theta| <= R`. Points within a few ulps
/// of the sphere count as inside, so projecting twice changes nothing.
pub fn project(params: &PolicyParams) -> PolicyParams {
    let n = params.norm();
    if n <= params.radius * (1.0 + 1e-12) {
        params.clone()
    } else {
        let k = params.radius / n;
        params.with_theta(params.theta.iter().map(|t| t * k).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(states: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> Self {
        LabeledDataset {
            states,
            labels,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Empty("labeled dataset"));
        }
        if self.labels.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: self.states.len(),
                got: self.labels.len(),
            });
        }
        if let Some(w) = &self.weights {
            ensure_dim(w, self.states.len(), "dataset weights")?;
            if w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::NonFinite("dataset weights"));
            }
        }
        for s in &self.states {
            ensure_finite(s, "dataset states")?;
        }
        for y in &self.labels {
            ensure_finite(y, "dataset labels")?;
        }
        Ok(())
    }

    /// Largest pairwise label distance, compared against the action diameter.
    pub fn label_spread(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.labels.iter().enumerate() {
            for b in &self.labels[i + 1..] {
                worst = worst.max(norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()));
            }
        }
        worst
    }

    pub fn extend(&mut self, other: &LabeledDataset) {
        self.states.extend(other.states.iter().cloned());
        self.labels.extend(other.labels.iter().cloned());
    }
}

/// Sufficient statistics of a weighted least-squares problem for the linear
/// policy. With weights normalized to sum 1, the regularized objective is
/// `sum_a (theta_a' G theta_a - 2 theta_a' c_a) + yy + alpha |theta|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub yy: f64,
    pub weight: f64,
}

impl NormalEquations {
    pub fn zeros(feature_dim: usize, action_dim: usize) -> Self {
        NormalEquations {
            gram: DMatrix::zeros(feature_dim, feature_dim),
            cross: DMatrix::zeros(feature_dim, action_dim),
            yy: 0.0,
            weight: 0.0,
        }
    }

    pub fn add_sample(&mut self, phi: &[f64], label: &[f64], w: f64) {
        let f = phi.len();
        for i in 0..f {
            let wi = w * phi[i];
            for j in i..f {
                self.gram[(i, j)] += wi * phi[j];
            }
            for (a, y) in label.iter().enumerate() {
                self.cross[(i, a)] += wi * y;
            }
        }
        self.yy += w * label.iter().map(|y| y * y).sum::<f64>();
        self.weight += w;
    }

    /// Builds the mean-normalized statistics for a set of samples with weights
    /// summing to one (uniform when `weights` is `None`).
    pub fn from_samples(features: &FeatureMap, states: &[Vec<f64>], labels: &[Vec<f64>], weights: Option<&[f64]>) -> Self {
        let action_dim = labels.first().map_or(0, |y| y.len());
        let mut ne = NormalEquations::zeros(features.dim(), action_dim);
        let total: f64 = weights.map_or(states.len() as f64, |w| w.iter().sum());
        let mut phi = vec![0.0; features.dim()];
        for (k, (s, y)) in states.iter().zip(labels).enumerate() {
            features.write(s, &mut phi);
            let w = weights.map_or(1.0, |w| w[k]) / total;
            ne.add_sample(&phi, y, w);
        }
        ne.symmetrize();
        ne
    }

    fn symmetrize(&mut self) {
        let f = self.gram.nrows();
        for i in 0..f {
            for j in 0..i {
                self.gram[(i, j)] = self.gram[(j, i)];
            }
        }
    }

    /// `self + k * other`.
    pub fn add_scaled(&mut self, other: &NormalEquations, k: f64) {
        self.gram += &other.gram * k;
        self.cross += &other.cross * k;
        self.yy += other.yy * k;
        self.weight += other.weight * k;
    }

    pub fn scaled(&self, k: f64) -> Self {
        NormalEquations {
            gram: &self.gram * k,
            cross: &self.cross * k,
            yy: self.yy * k,
            weight: self.weight * k,
        }
    }

    /// Objective value at `theta` (row-major `action_dim x f`).
    pub fn objective(&self, theta: &[f64], alpha: f64) -> f64 {
        let f = self.gram.nrows();
        let mut value = self.yy;
        for a in 0..self.cross.ncols() {
            let row = DVector::from_column_slice(&theta[a * f..(a + 1) * f]);
            value += (row.transpose() * &self.gram * &row)[(0, 0)] - 2.0 * row.dot(&self.cross.column(a));
        }
        value + alpha * theta.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64], alpha: f64) -> Vec<f64> {
        let f = self.gram.nrows();
        let mut grad = vec![0.0; theta.len()];
        for a in 0..self.cross.ncols() {
            let row = DVector::from_column_slice(&theta[a * f..(a + 1) * f]);
            let g = (&self.gram * &row - self.cross.column(a)) * 2.0 + &row * (2.0 * alpha);
            grad[a * f..(a + 1) * f].copy_from_slice(g.as_slice());
        }
        grad
    }

    /// Minimizer over the ball `|theta| <= radius`, returned row-major.
    pub fn solve(&self, alpha: f64, radius: f64) -> Vec<f64> {
        let f = self.gram.nrows();
        let k = self.cross.ncols();
        let shifted = &self.gram + DMatrix::identity(f, f) * alpha;
        let sol = match shifted.clone().cholesky() {
            Some(ch) => ch.solve(&self.cross),
            None => shifted.lu().solve(&self.cross).unwrap_or_else(|| DMatrix::zeros(f, k)),
        };
        let unconstrained_norm = sol.norm();
        let sol = if unconstrained_norm <= radius {
            sol
        } else {
            self.solve_on_sphere(alpha, radius)
        };
        let mut theta = vec![0.0; f * k];
        for a in 0..k {
            for j in 0..f {
                theta[a * f + j] = sol[(j, a)];
            }
        }
        theta
    }

    /// Boundary case: find the multiplier `mu > 0` with
    /// `|(G + (alpha + mu) I)^{-1} C| = radius` by bisection.
    fn solve_on_sphere(&self, alpha: f64, radius: f64) -> DMatrix<f64> {
        let eig = self.gram.clone().symmetric_eigen();
        let rotated = eig.eigenvectors.transpose() * &self.cross;
        let norm_at = |mu: f64| -> f64 {
            let mut s = 0.0;
            for i in 0..rotated.nrows() {
                let denom = eig.eigenvalues[i] + alpha + mu;
                s += rotated.row(i).norm_squared() / (denom * denom);
            }
            s.sqrt()
        };
        let mut lo = 0.0;
        let mut hi = (rotated.norm() / radius).max(1e-12);
        while norm_at(hi) > radius {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut scaled = rotated.clone();
        for i in 0..scaled.nrows() {
            let denom = eig.eigenvalues[i] + alpha + hi;
            scaled.row_mut(i).scale_mut(1.0 / denom);
        }
        eig.eigenvectors * scaled
    }
}

/// Ridge fit of the linear policy: minimizes
/// `(1/n) sum |Theta phi(s_k) - y_k|^2 + alpha |theta|^2` over `|theta| <= R`.
/// `template` supplies the feature map and radius.
pub fn fit_ridge(data: &LabeledDataset, alpha: f64, template: &PolicyParams) -> Result<PolicyParams> {
    if template.kind != PolicyKind::LinearAffine {
        return Err(Error::RequiresLinear);
    }
    data.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::config("policy.alpha_reg", "ridge regularization must be positive"));
    }
    for y in &data.labels {
        ensure_dim(y, template.action_dim, "dataset labels")?;
    }
    let ne = NormalEquations::from_samples(&template.features, &data.states, &data.labels, data.weights.as_deref());
    Ok(template.with_theta(ne.solve(alpha, template.radius)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpFitConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for MlpFitConfig {
    fn default() -> Self {
        MlpFitConfig {
            epochs: 150,
            step_size: 3e-3,
            batch_size: 32,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFitReport {
    pub member_losses: Vec<f64>,
    /// Mean squared error of the ensemble mean on the training data.
    pub training_loss: f64,
}

/// Trains every ensemble member by mini-batch Adam on squared loss, each from
/// its own seed. `template` supplies features, radius and ensemble shape.
pub fn fit_mlp(data: &LabeledDataset, template: &PolicyParams, config: &MlpFitConfig, seed: u64) -> Result<(PolicyParams, MlpFitReport)> {
    data.validate()?;
    let shape = template.mlp.clone().unwrap_or_default();
    let init = PolicyParams::mlp_init(template.features.clone(), template.action_dim, template.radius, shape.clone(), seed);
    let net = init.net();
    let p = net.param_count();
    let n_in = template.features.state_dim();
    let inputs: Vec<Vec<f64>> = data
        .states
        .iter()
        .map(|s| template.features.features(s)[..n_in].to_vec())
        .collect();

    let mut theta = init.theta.clone();
    let mut member_losses = Vec::with_capacity(shape.members);
    let batch = config.batch_size.max(1);
    for m in 0..shape.members {
        let w = &mut theta[m * p..(m + 1) * p];
        let mut opt = Adam::new(p, config.step_size);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut rng = rng::stream(&[seed, purpose::SHUFFLE, m as u64]);
        let mut grad = vec![0.0; p];
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &k in chunk {
                    let cache = net.forward_cached(w, &inputs[k]);
                    let resid: Vec<f64> = cache.output().iter().zip(&data.labels[k]).map(|(o, y)| o - y).collect();
                    net.backward(w, &cache, &resid, 2.0 / chunk.len() as f64, &mut grad);
                }
                if config.weight_decay > 0.0 {
                    for (g, t) in grad.iter_mut().zip(w.iter()) {
                        *g += 2.0 * config.weight_decay * t;
                    }
                }
                opt.step(w, &grad);
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { member: m, epoch });
            }
        }
        let loss = inputs
            .iter()
            .zip(&data.labels)
            .map(|(x, y)| net.forward(w, x).iter().zip(y).map(|(o, y)| (o - y).powi(2)).sum::<f64>())
            .sum::<f64>()
            / inputs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { member: m, epoch: config.epochs });
        }
        member_losses.push(loss);
    }

    let fitted = project(&init.with_theta(theta));
    let mut out = vec![0.0; template.action_dim];
    let training_loss = data
        .states
        .iter()
        .zip(&data.labels)
        .map(|(s, y)| {
            act_into(&fitted, s, &mut out);
            out.iter().zip(y).map(|(o, y)| (o - y).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / data.len() as f64;
    Ok((
        fitted,
        MlpFitReport {
            member_losses,
            training_loss,
        },
    ))
}
