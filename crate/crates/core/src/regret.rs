//! Regret against per-round and final supervisors.
//!
//! Every quantity is evaluated on the recorded states: expectations over
//! trajectories are replaced by the per-round empirical means. Comparators
//! are closed-form ridge solutions over the parameter ball, so this module
//! needs the linear policy.
//!
//! Static comparators are recomputed for every prefix length `N'` as the
//! argmin over rounds `1..=N'`; these are the series the reduction bounds are
//! checked on. The series measured against the single full-horizon argmin are
//! reported alongside; the two agree at `N' = N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imitation::{empirical_loss, loss_gradient, mean_label_distance, RoundRecord};
use crate::policy::{act_into, norm, NormalEquations, PolicyKind, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels from the supervisor of the same round, `psi_i`.
    Current,
    /// Labels from the last supervisor, `psi_N`.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    StaticSeq,
    StaticFinal,
    DynamicSeq,
    DynamicFinal,
}

impl ComparatorKind {
    pub fn source(self) -> LabelSource {
        match self {
            ComparatorKind::StaticSeq | ComparatorKind::DynamicSeq => LabelSource::Current,
            ComparatorKind::StaticFinal | ComparatorKind::DynamicFinal => LabelSource::Final,
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, ComparatorKind::StaticSeq | ComparatorKind::StaticFinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparator {
    pub kind: ComparatorKind,
    /// Static: the prefix length `N'`. Dynamic: the round `i`.
    pub index: usize,
    pub theta: Vec<f64>,
    /// Summed regularized loss over the rounds the comparator is fit to.
    pub objective: f64,
    pub gradient_norm: f64,
    pub on_boundary: bool,
}

pub fn labels(record: &RoundRecord, source: LabelSource) -> Result<&[Vec<f64>]> {
    match source {
        LabelSource::Current => Ok(&record.labels_current),
        LabelSource::Final => record.final_labels(),
    }
}

/// `l_i(theta, source)` on round `i`'s recorded states.
pub fn round_loss(template: &PolicyParams, theta: &[f64], record: &RoundRecord, source: LabelSource, alpha_reg: f64) -> Result<f64> {
    empirical_loss(&template.with_theta(theta.to_vec()), &record.states, labels(record, source)?, alpha_reg)
}

fn round_equations(template: &PolicyParams, record: &RoundRecord, source: LabelSource) -> Result<NormalEquations> {
    Ok(NormalEquations::from_samples(&template.features, &record.states, labels(record, source)?, None))
}

fn require_linear(template: &PolicyParams) -> Result<()> {
    if template.kind == PolicyKind::LinearAffine {
        Ok(())
    } else {
        Err(Error::RequiresLinear)
    }
}

fn require_rounds(records: &[RoundRecord], n: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::NoRounds);
    }
    if n == 0 || n > records.len() {
        return Err(Error::IndexOutOfRange { index: n, len: records.len() });
    }
    Ok(())
}

fn finish(kind: ComparatorKind, index: usize, template: &PolicyParams, theta: Vec<f64>, rounds: &[RoundRecord], alpha_reg: f64) -> Result<Comparator> {
    let source = kind.source();
    let params = template.with_theta(theta);
    let mut objective = 0.0;
    let mut grad = vec![0.0; params.dim()];
    for r in rounds {
        let y = labels(r, source)?;
        objective += empirical_loss(&params, &r.states, y, alpha_reg)?;
        for (g, v) in grad.iter_mut().zip(loss_gradient(&params, &r.states, y, alpha_reg)?) {
            *g += v;
        }
    }
    Ok(Comparator {
        kind,
        index,
        on_boundary: params.norm() >= template.radius * (1.0 - 1e-9),
        theta: params.theta,
        objective,
        gradient_norm: norm(&grad),
    })
}

/// Static kinds: argmin of `sum_{i <= index} l_i`. Dynamic kinds: argmin of
/// `l_index`. Both over the ball `|theta| <= R`, with the learner's `alpha_reg`.
pub fn solve_comparator(kind: ComparatorKind, records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, index: usize) -> Result<Comparator> {
    require_linear(template)?;
    require_rounds(records, index)?;
    let rounds = if kind.is_static() { &records[..index] } else { &records[index - 1..index] };
    let mut total = NormalEquations::zeros(template.features.dim(), template.action_dim);
    for r in rounds {
        total.add_scaled(&round_equations(template, r, kind.source())?, 1.0);
    }
    let theta = total.scaled(1.0 / rounds.len() as f64).solve(alpha_reg, template.radius);
    finish(kind, index, template, theta, rounds, alpha_reg)
}

/// Static comparators for every prefix `1..=N`, built from running sums.
pub fn prefix_comparators(kind: ComparatorKind, records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64) -> Result<Vec<Vec<f64>>> {
    require_linear(template)?;
    require_rounds(records, records.len())?;
    let mut total = NormalEquations::zeros(template.features.dim(), template.action_dim);
    let mut out = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        total.add_scaled(&round_equations(template, r, kind.source())?, 1.0);
        out.push(total.scaled(1.0 / (k + 1) as f64).solve(alpha_reg, template.radius));
    }
    Ok(out)
}

fn played_losses(records: &[RoundRecord], template: &PolicyParams, source: LabelSource, alpha_reg: f64) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| round_loss(template, &r.theta, r, source, alpha_reg))
        .collect()
}

/// Static regret series, one entry per prefix `N'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSeries {
    /// Against the argmin over the same prefix.
    pub prefix: Vec<f64>,
    /// Against the single argmin over all `N` rounds.
    pub full_horizon: Vec<f64>,
}

pub fn static_regret(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, source: LabelSource) -> Result<StaticSeries> {
    let kind = match source {
        LabelSource::Current => ComparatorKind::StaticSeq,
        LabelSource::Final => ComparatorKind::StaticFinal,
    };
    let comparators = prefix_comparators(kind, records, template, alpha_reg)?;
    let played = played_losses(records, template, source, alpha_reg)?;
    let full = comparators.last().unwrap();
    let mut prefix = Vec::with_capacity(records.len());
    let mut full_horizon = Vec::with_capacity(records.len());
    let mut played_sum = 0.0;
    let mut full_sum = 0.0;
    for (k, r) in records.iter().enumerate() {
        played_sum += played[k];
        full_sum += round_loss(template, full, r, source, alpha_reg)?;
        full_horizon.push(played_sum - full_sum);
        let mut comp_sum = 0.0;
        for q in &records[..=k] {
            comp_sum += round_loss(template, &comparators[k], q, source, alpha_reg)?;
        }
        prefix.push(played_sum - comp_sum);
    }
    Ok(StaticSeries { prefix, full_horizon })
}

/// Cumulative dynamic regret `sum_{i <= N'} [l_i(theta_i) - l_i(theta_i^cmp)]`.
pub fn dynamic_regret(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, source: LabelSource) -> Result<Vec<f64>> {
    Ok(cumulative(&dynamic_gaps(records, template, alpha_reg, source)?))
}

/// Per-round gaps `l_i(theta_i) - l_i(theta_i^cmp)`.
pub fn dynamic_gaps(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, source: LabelSource) -> Result<Vec<f64>> {
    require_linear(template)?;
    require_rounds(records, records.len())?;
    records
        .iter()
        .map(|r| {
            let comp = round_equations(template, r, source)?.solve(alpha_reg, template.radius);
            Ok(round_loss(template, &r.theta, r, source, alpha_reg)? - round_loss(template, &comp, r, source, alpha_reg)?)
        })
        .collect()
}

fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// `4 delta sum_{i <= N'} mean_t |psi_N(s_t^i) - psi_i(s_t^i)|` for every prefix.
pub fn extra_term(records: &[RoundRecord], delta: f64) -> Result<Vec<f64>> {
    let per_round = records
        .iter()
        .map(|r| Ok(4.0 * delta * mean_label_distance(r.final_labels()?, &r.labels_current)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(cumulative(&per_round))
}

/// Whether the diameter step of the reduction applies on the recorded data:
/// every policy output involved must lie within `delta` of every label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterDiagnostic {
    pub delta: f64,
    /// Largest `|pi_theta(s) - y|` over played parameters and both label sets.
    pub max_residual: f64,
    /// Number of (round, state, label set) triples exceeding `delta`.
    pub violations: usize,
}

pub fn diameter_diagnostic(records: &[RoundRecord], template: &PolicyParams, delta: f64) -> Result<DiameterDiagnostic> {
    let mut out = vec![0.0; template.action_dim];
    let mut max_residual: f64 = 0.0;
    let mut violations = 0;
    for r in records {
        let params = template.with_theta(r.theta.clone());
        let finals = r.final_labels()?;
        for (k, s) in r.states.iter().enumerate() {
            act_into(&params, s, &mut out);
            for y in [&r.labels_current[k], &finals[k]] {
                let d = out.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                max_residual = max_residual.max(d);
                if d > delta {
                    violations += 1;
                }
            }
        }
    }
    Ok(DiameterDiagnostic {
        delta,
        max_residual,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCheck {
    /// RHS minus LHS of the static reduction, per prefix.
    pub slack_static: Vec<f64>,
    /// RHS minus LHS of the dynamic reduction, per prefix.
    pub slack_dynamic: Vec<f64>,
    pub diameter: DiameterDiagnostic,
}

impl ReductionCheck {
    pub fn min_slack_static(&self) -> f64 {
        self.slack_static.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_slack_dynamic(&self) -> f64 {
        self.slack_dynamic.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn slacks(seq: &[f64], fin: &[f64], extra: &[f64]) -> Vec<f64> {
    seq.iter().zip(fin).zip(extra).map(|((s, f), e)| s + e - f).collect()
}

/// Evaluates both sides of the static and dynamic reductions on every prefix.
pub fn verify_reduction(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, delta: f64) -> Result<ReductionCheck> {
    let extra = extra_term(records, delta)?;
    let s_seq = static_regret(records, template, alpha_reg, LabelSource::Current)?;
    let s_fin = static_regret(records, template, alpha_reg, LabelSource::Final)?;
    let d_seq = dynamic_regret(records, template, alpha_reg, LabelSource::Current)?;
    let d_fin = dynamic_regret(records, template, alpha_reg, LabelSource::Final)?;
    Ok(ReductionCheck {
        slack_static: slacks(&s_seq.prefix, &s_fin.prefix, &extra),
        slack_dynamic: slacks(&d_seq, &d_fin, &extra),
        diameter: diameter_diagnostic(records, template, delta)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearityStats {
    /// Least-squares slope of `log max(R, eps)` against `log N'` over the
    /// last half of the series; `-inf` when the series is identically zero.
    #[serde(with = "extended_f64")]
    pub loglog_slope: f64,
    /// `(R_N / N) / (R_{N/10} / (N/10))`, absent when the denominator is not
    /// positive.
    pub avg_ratio: Option<f64>,
}

/// JSON has no infinities; they are written as the strings `"inf"` and `"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

pub const SLOPE_FLOOR: f64 = 1e-12;

/// `series[k]` is the regret at prefix length `k + 1`.
pub fn sublinearity_stats(series: &[f64]) -> Result<SublinearityStats> {
    if series.len() < 20 {
        return Err(Error::config("regret series", format!("needs at least 20 prefixes, got {}", series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regret series"));
    }
    let n = series.len();
    if series.iter().all(|&v| v == 0.0) {
        return Ok(SublinearityStats {
            loglog_slope: f64::NEG_INFINITY,
            avg_ratio: None,
        });
    }
    let pts: Vec<(f64, f64)> = (n / 2..=n)
        .map(|np| ((np as f64).ln(), series[np - 1].max(SLOPE_FLOOR).ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let tenth = n / 10;
    let early = series[tenth - 1] / tenth as f64;
    let late = series[n - 1] / n as f64;
    Ok(SublinearityStats {
        loglog_slope: sxy / sxx,
        avg_ratio: (early > 0.0).then(|| late / early),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityReport {
    /// `g_i = max_probe |grad l_{i+1}(theta) - grad l_i(theta)|`, `i = 1..N-1`.
    pub gradient_shift: Vec<f64>,
    /// `|theta_{i+1} - theta_i|`.
    pub step: Vec<f64>,
    /// Regression of `g` on the step through the origin; `None` when every
    /// step is numerically zero.
    pub beta_hat: Option<f64>,
    /// `max(g_i - beta_hat * step_i, 0)`, or `g_i` when `beta_hat` is undefined.
    pub zeta_hat: Vec<f64>,
    /// Running means `(1/n) sum_{i <= n} zeta_hat_i`.
    pub cesaro: Vec<f64>,
    /// Running mean at the end divided by the running mean at one tenth.
    pub cesaro_ratio: Option<f64>,
    /// `2 alpha_reg`, the strong-convexity modulus.
    pub alpha: f64,
    pub alpha_exceeds_beta: Option<bool>,
}

/// Probes at the origin, the mean played parameters and the last played
/// parameters; the same probes are used for every round.
pub fn predictability_diagnostic(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64) -> Result<PredictabilityReport> {
    if records.len() < 10 {
        return Err(Error::config("predictability diagnostic", format!("needs at least 10 rounds, got {}", records.len())));
    }
    let d = template.dim();
    let mut mean = vec![0.0; d];
    for r in records {
        for (m, t) in mean.iter_mut().zip(&r.theta) {
            *m += t / records.len() as f64;
        }
    }
    let probes = [vec![0.0; d], mean, records.last().unwrap().theta.clone()];
    let grads = records
        .iter()
        .map(|r| {
            probes
                .iter()
                .map(|p| loss_gradient(&template.with_theta(p.clone()), &r.states, &r.labels_current, alpha_reg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gradient_shift = Vec::with_capacity(records.len() - 1);
    let mut step = Vec::with_capacity(records.len() - 1);
    for i in 0..records.len() - 1 {
        let g = (0..probes.len())
            .map(|p| {
                grads[i + 1][p]
                    .iter()
                    .zip(&grads[i][p])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        gradient_shift.push(g);
        step.push(
            records[i + 1]
                .theta
                .iter()
                .zip(&records[i].theta)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
        );
    }
    let sxx: f64 = step.iter().map(|x| x * x).sum();
    let beta_hat = if step.iter().all(|&x| x < 1e-12) {
        None
    } else {
        Some(step.iter().zip(&gradient_shift).map(|(x, g)| x * g).sum::<f64>() / sxx)
    };
    let zeta_hat: Vec<f64> = gradient_shift
        .iter()
        .zip(&step)
        .map(|(g, x)| (g - beta_hat.unwrap_or(0.0) * x).max(0.0))
        .collect();
    let cesaro: Vec<f64> = cumulative(&zeta_hat)
        .iter()
        .enumerate()
        .map(|(k, s)| s / (k + 1) as f64)
        .collect();
    let tenth = (cesaro.len() / 10).max(1);
    let cesaro_ratio = (cesaro[tenth - 1] > 0.0).then(|| cesaro[cesaro.len() - 1] / cesaro[tenth - 1]);
    let alpha = 2.0 * alpha_reg;
    Ok(PredictabilityReport {
        alpha_exceeds_beta: beta_hat.map(|b| alpha > b),
        gradient_shift,
        step,
        beta_hat,
        zeta_hat,
        cesaro,
        cesaro_ratio,
        alpha,
    })
}

/// One prefix length `N'` of a [`RegretReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub prefix: usize,
    pub static_seq: f64,
    pub static_final: f64,
    pub dynamic_seq: f64,
    pub dynamic_final: f64,
    pub extra_term: f64,
    pub bound_slack_static: f64,
    pub bound_slack_dynamic: f64,
    pub static_seq_full_horizon: f64,
    pub static_final_full_horizon: f64,
}

impl PrefixRow {
    pub const METRICS: [&'static str; 9] = [
        "static_seq",
        "static_final",
        "dynamic_seq",
        "dynamic_final",
        "extra_term",
        "bound_slack_static",
        "bound_slack_dynamic",
        "static_seq_full_horizon",
        "static_final_full_horizon",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.static_seq,
            self.static_final,
            self.dynamic_seq,
            self.dynamic_final,
            self.extra_term,
            self.bound_slack_static,
            self.bound_slack_dynamic,
            self.static_seq_full_horizon,
            self.static_final_full_horizon,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub static_seq: SublinearityStats,
    pub static_final: SublinearityStats,
    pub dynamic_seq: SublinearityStats,
    pub dynamic_final: SublinearityStats,
    pub extra_term: SublinearityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub rounds: usize,
    pub alpha_reg: f64,
    pub delta: f64,
    pub rows: Vec<PrefixRow>,
    pub diameter: DiameterDiagnostic,
    /// Present when the run has at least 20 rounds.
    pub sublinearity: Option<SeriesStats>,
    /// Present when the run has at least 10 rounds.
    pub predictability: Option<PredictabilityReport>,
}

impl RegretReport {
    pub fn min_slack_static(&self) -> f64 {
        self.rows.iter().map(|r| r.bound_slack_static).fold(f64::INFINITY, f64::min)
    }

    pub fn min_slack_dynamic(&self) -> f64 {
        self.rows.iter().map(|r| r.bound_slack_dynamic).fold(f64::INFINITY, f64::min)
    }

    pub fn series(&self, metric: &str) -> Option<Vec<f64>> {
        let k = PrefixRow::METRICS.iter().position(|m| *m == metric)?;
        Some(self.rows.iter().map(|r| r.values()[k]).collect())
    }

    /// `(prefix, metric, value)` triples for long-format output.
    pub fn long_rows(&self) -> Vec<(usize, &'static str, f64)> {
        let mut out = Vec::with_capacity(self.rows.len() * PrefixRow::METRICS.len());
        for r in &self.rows {
            for (m, v) in PrefixRow::METRICS.iter().zip(r.values()) {
                out.push((r.prefix, *m, v));
            }
        }
        out
    }
}

/// Full analysis of a finished run.
pub fn analyze(records: &[RoundRecord], template: &PolicyParams, alpha_reg: f64, delta: f64) -> Result<RegretReport> {
    let extra = extra_term(records, delta)?;
    let s_seq = static_regret(records, template, alpha_reg, LabelSource::Current)?;
    let s_fin = static_regret(records, template, alpha_reg, LabelSource::Final)?;
    let d_seq = dynamic_regret(records, template, alpha_reg, LabelSource::Current)?;
    let d_fin = dynamic_regret(records, template, alpha_reg, LabelSource::Final)?;
    let slack_s = slacks(&s_seq.prefix, &s_fin.prefix, &extra);
    let slack_d = slacks(&d_seq, &d_fin, &extra);
    let rows = (0..records.len())
        .map(|k| PrefixRow {
            prefix: k + 1,
            static_seq: s_seq.prefix[k],
            static_final: s_fin.prefix[k],
            dynamic_seq: d_seq[k],
            dynamic_final: d_fin[k],
            extra_term: extra[k],
            bound_slack_static: slack_s[k],
            bound_slack_dynamic: slack_d[k],
            static_seq_full_horizon: s_seq.full_horizon[k],
            static_final_full_horizon: s_fin.full_horizon[k],
        })
        .collect();
    let sublinearity = if records.len() >= 20 {
        Some(SeriesStats {
            static_seq: sublinearity_stats(&s_seq.prefix)?,
            static_final: sublinearity_stats(&s_fin.prefix)?,
            dynamic_seq: sublinearity_stats(&d_seq)?,
            dynamic_final: sublinearity_stats(&d_fin)?,
            extra_term: sublinearity_stats(&extra)?,
        })
    } else {
        None
    };
    let predictability = if records.len() >= 10 {
        Some(predictability_diagnostic(records, template, alpha_reg)?)
    } else {
        None
    };
    Ok(RegretReport {
        rounds: records.len(),
        alpha_reg,
        delta,
        rows,
        diameter: diameter_diagnostic(records, template, delta)?,
        sublinearity,
        predictability,
    })
}
