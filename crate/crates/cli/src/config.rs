//! Experiment description files (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use converging_core::env::{EnvKind, EnvSpec};
use converging_core::imitation::{LoopConfig, PlayerConfig, StartSampling};
use converging_core::policy::{FeatureMap, MlpShape, PolicyKind, PolicyParams};
use converging_core::supervisor::SupervisorSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment section: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub preset: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_low: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_high: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_gain: Option<f64>,
}

impl EnvConfig {
    pub fn preset(kind: EnvKind) -> Self {
        EnvConfig {
            preset: kind,
            horizon: None,
            noise_std: None,
            goal: None,
            action_low: None,
            action_high: None,
            damping: None,
            dt: None,
            action_cost: None,
            start_width: None,
            start_center: None,
            drift_gain: None,
        }
    }

    pub fn build(&self) -> converging_core::Result<EnvSpec> {
        let mut env = match self.preset {
            EnvKind::LinReach => EnvSpec::lin_reach(),
            EnvKind::NonlinReach => EnvSpec::nonlin_reach(),
        };
        if let Some(goal) = &self.goal {
            let k = goal.len();
            env.goal = goal.clone();
            env.action_dim = k;
            env.state_dim = 2 * k;
            env.action_low = vec![-1.0; k];
            env.action_high = vec![1.0; k];
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    env.$f = v.clone();
                }
            )*};
        }
        set!(horizon, noise_std, action_low, action_high, damping, dt, action_cost, start_width, drift_gain);
        if self.start_center.is_some() {
            env.start_center = self.start_center.clone();
        }
        env.validate()?;
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Radius `R` of the parameter ball.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Per-coordinate feature scale; ones when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scale: Option<Vec<f64>>,
    #[serde(default = "default_feature_clip")]
    pub feature_clip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpShape>,
    /// Seed offset for ensemble initialization.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_radius() -> f64 {
    50.0
}

fn default_feature_clip() -> f64 {
    2.0
}

impl PolicyConfig {
    pub fn linear() -> Self {
        PolicyConfig {
            kind: PolicyKind::LinearAffine,
            radius: default_radius(),
            feature_scale: None,
            feature_clip: default_feature_clip(),
            mlp: None,
            init_seed: 0,
        }
    }

    /// The initial parameters `theta_1`: zero for the linear policy, a seeded
    /// initialization for the ensemble.
    pub fn initial(&self, env: &EnvSpec) -> converging_core::Result<PolicyParams> {
        use converging_core::Error;
        if !(self.radius > 0.0) {
            return Err(Error::config("policy.radius", "must be positive"));
        }
        if !(self.feature_clip > 0.0) {
            return Err(Error::config("policy.feature_clip", "must be positive"));
        }
        let scale = self.feature_scale.clone().unwrap_or_else(|| vec![1.0; env.state_dim]);
        if scale.len() != env.state_dim {
            return Err(Error::config("policy.feature_scale", format!("needs {} entries", env.state_dim)));
        }
        let features = FeatureMap::new(scale, self.feature_clip);
        let params = match self.kind {
            PolicyKind::LinearAffine => PolicyParams::linear_zero(features, env.action_dim, self.radius),
            PolicyKind::MlpEnsemble => {
                let shape = self.mlp.clone().unwrap_or_default();
                if shape.members == 0 || shape.hidden.iter().any(|&h| h == 0) {
                    return Err(Error::config("policy.mlp", "members and hidden widths must be positive"));
                }
                PolicyParams::mlp_init(features, env.action_dim, self.radius, shape, self.init_seed)
            }
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default)]
    pub evaluate_supervisor_rollout: bool,
    #[serde(default)]
    pub emit_prefix_comparators: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            evaluate_supervisor_rollout: false,
            emit_prefix_comparators: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    #[serde(default = "default_learner_calls")]
    pub learner_calls: usize,
    #[serde(default = "default_supervisor_calls")]
    pub supervisor_calls: usize,
}

fn default_learner_calls() -> usize {
    1000
}

fn default_supervisor_calls() -> usize {
    50
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            learner_calls: default_learner_calls(),
            supervisor_calls: default_supervisor_calls(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub start_sampling: StartSampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub flags: Flags,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub supervisor: SupervisorSpec,
    pub player: PlayerConfig,
    #[serde(default)]
    pub timing: TimingConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "invalid configuration: schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            );
        }
        if self.rounds == 0 {
            bail!("invalid configuration: rounds: must be at least 1");
        }
        if self.seeds.is_empty() {
            bail!("invalid configuration: seeds: list at least one seed");
        }
        if self.timing.learner_calls == 0 || self.timing.supervisor_calls == 0 {
            bail!("invalid configuration: timing: call counts must be positive");
        }
        let env = self.env.build()?;
        self.policy.initial(&env)?;
        self.supervisor.validate()?;
        self.player.validate()?;
        Ok(())
    }

    pub fn env_spec(&self) -> anyhow::Result<EnvSpec> {
        Ok(self.env.build()?)
    }

    pub fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig {
            rounds: self.rounds,
            seed,
            start_sampling: self.start_sampling,
            evaluate_supervisor_rollout: self.flags.evaluate_supervisor_rollout,
        }
    }

    /// SHA-256 of the canonical JSON form, independent of TOML formatting.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
