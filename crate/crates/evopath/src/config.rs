//! JSON run configuration.
//!
//! Every field has a default except `seed` and `scenarios`. Unknown keys are
//! rejected so that typos surface as errors instead of silent defaults.

use std::path::{Path, PathBuf};

use evopath_core::{
    DisplacementNorm, EvoConfig, HyperGrid, HyperState, SceneKind, SceneSpec, TrainConfig,
};
use serde::{Deserialize, Serialize};

/// A config problem, always naming the key at fault.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{key}: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub evo: EvoSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub hyper: HyperSection,
    /// Train, validation and test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub metrics: MetricsSection,
    /// Output directory, relative to the config file.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
}

/// One scenario: either `kind` (synthetic) or `file` (trajectory text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_speed")]
    pub speed: [f64; 2],
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Generator seed; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Window stride for file sources.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoSection {
    pub rho1: f64,
    pub rho2: f64,
    pub rho_h: f64,
    pub penalty_a: f64,
    pub generations: usize,
    pub submodels: usize,
    pub param_unit: Option<usize>,
    pub rank_decay: f64,
    pub min_layers: usize,
}

impl Default for EvoSection {
    fn default() -> Self {
        let d = EvoConfig::default();
        EvoSection {
            rho1: d.rho1,
            rho2: d.rho2,
            rho_h: d.rho_h,
            penalty_a: d.penalty_a,
            generations: d.generations,
            submodels: d.submodels,
            param_unit: d.param_unit,
            rank_decay: d.rank_decay,
            min_layers: d.min_layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// One or two hidden widths: encoder, then decoder.
    pub widths: Vec<usize>,
    pub modes_k: usize,
    pub t_obs: usize,
    pub t_pred: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            widths: vec![32, 32],
            modes_k: 3,
            t_obs: 8,
            t_pred: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainingSection {
            steps: d.steps,
            batch_size: d.batch_size,
            momentum: d.momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub values: Vec<f64>,
    /// 1-based starting position.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSection {
    pub learning_rate: GridSection,
    pub weight_decay: GridSection,
}

impl Default for HyperSection {
    fn default() -> Self {
        let d = HyperState::default();
        let grid = |g: &HyperGrid| GridSection {
            values: g.values().to_vec(),
            index: g.index(),
        };
        HyperSection {
            learning_rate: grid(&d.learning_rate),
            weight_decay: grid(&d.weight_decay),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub miss_threshold: f64,
    /// Use squared displacements in ADE, FDE and joint ADE.
    pub squared: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            miss_threshold: evopath_core::metrics::MISS_THRESHOLD,
            squared: false,
        }
    }
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_output() -> PathBuf {
    PathBuf::from("evopath-out")
}

fn default_count() -> usize {
    160
}

fn default_agents() -> usize {
    2
}

fn default_sigma() -> f64 {
    0.02
}

fn default_speed() -> [f64; 2] {
    [0.8, 1.6]
}

fn default_dt() -> f64 {
    0.4
}

fn default_stride() -> usize {
    1
}

/// Where a scenario's samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(SceneSpec),
    File { path: PathBuf, stride: usize },
}

impl RunConfig {
    /// Parses and validates a config document. Relative paths stay as
    /// written; see [`RunConfig::resolve_paths`].
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(serde_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(&std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf()));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
        for s in &mut self.scenarios {
            if let Some(f) = &mut s.file {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenarios.is_empty() {
            return Err(ConfigError::new("scenarios", "at least one scenario is required"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            let key = |k: &str| format!("scenarios[{i}].{k}");
            if s.id.is_empty() || s.id.chars().any(|c| c.is_whitespace() || c.is_control()) {
                return Err(ConfigError::new(key("id"), "must be non-empty without whitespace"));
            }
            if s.id == "meta" {
                return Err(ConfigError::new(key("id"), "'meta' is reserved for the meta-model"));
            }
            if !ids.insert(&s.id) {
                return Err(ConfigError::new(key("id"), format!("duplicate scenario '{}'", s.id)));
            }
            match (&s.kind, &s.file) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(ConfigError::new(key("kind"), "give exactly one of 'kind' or 'file'"))
                }
                (Some(k), None) => {
                    k.parse::<SceneKind>().map_err(|e| ConfigError::new(key("kind"), e))?;
                }
                (None, Some(_)) => {}
            }
            if s.count == 0 {
                return Err(ConfigError::new(key("count"), "must be at least 1"));
            }
            if s.agents == 0 {
                return Err(ConfigError::new(key("agents"), "must be at least 1"));
            }
            if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
                return Err(ConfigError::new(key("sigma"), "must be finite and non-negative"));
            }
            if !(s.speed[0] > 0.0 && s.speed[0] <= s.speed[1] && s.speed[1].is_finite()) {
                return Err(ConfigError::new(key("speed"), "must be [lo, hi] with 0 < lo <= hi"));
            }
            if !(s.dt > 0.0 && s.dt.is_finite()) {
                return Err(ConfigError::new(key("dt"), "must be positive"));
            }
            if s.stride == 0 {
                return Err(ConfigError::new(key("stride"), "must be at least 1"));
            }
        }
        self.evo_config()
            .validate()
            .map_err(|e| match e {
                evopath_core::EvoError::Config(msg) => {
                    let field = msg.split_whitespace().next().unwrap_or("evo");
                    ConfigError::new(format!("evo.{field}"), msg)
                }
                other => ConfigError::new("evo", other.to_string()),
            })?;
        if self.evo.param_unit == Some(0) {
            return Err(ConfigError::new("evo.param_unit", "must be at least 1"));
        }
        if self.model.widths.is_empty() || self.model.widths.len() > 2 || self.model.widths.contains(&0) {
            return Err(ConfigError::new("model.widths", "give one or two positive widths"));
        }
        if self.model.modes_k == 0 {
            return Err(ConfigError::new("model.modes_k", "must be at least 1"));
        }
        if self.model.t_obs == 0 {
            return Err(ConfigError::new("model.t_obs", "must be at least 1"));
        }
        if self.model.t_pred == 0 {
            return Err(ConfigError::new("model.t_pred", "must be at least 1"));
        }
        if self.training.batch_size == 0 {
            return Err(ConfigError::new("training.batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.training.momentum) {
            return Err(ConfigError::new("training.momentum", "must lie in [0, 1)"));
        }
        for (name, g) in [
            ("hyper.learning_rate", &self.hyper.learning_rate),
            ("hyper.weight_decay", &self.hyper.weight_decay),
        ] {
            HyperGrid::new(g.values.clone(), g.index).map_err(|e| ConfigError::new(name, e.to_string()))?;
        }
        if self.hyper.learning_rate.values.iter().any(|&v| v <= 0.0) {
            return Err(ConfigError::new("hyper.learning_rate", "values must be positive"));
        }
        if self.hyper.weight_decay.values.iter().any(|&v| v < 0.0) {
            return Err(ConfigError::new("hyper.weight_decay", "values must be non-negative"));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("split", "fractions must be positive and sum to 1"));
        }
        if !(self.metrics.miss_threshold > 0.0 && self.metrics.miss_threshold.is_finite()) {
            return Err(ConfigError::new("metrics.miss_threshold", "must be positive"));
        }
        Ok(())
    }

    pub fn evo_config(&self) -> EvoConfig {
        let e = &self.evo;
        EvoConfig {
            rho1: e.rho1,
            rho2: e.rho2,
            rho_h: e.rho_h,
            penalty_a: e.penalty_a,
            generations: e.generations,
            submodels: e.submodels,
            param_unit: e.param_unit,
            rank_decay: e.rank_decay,
            min_layers: e.min_layers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            momentum: self.training.momentum,
        }
    }

    pub fn hyper_state(&self) -> HyperState {
        let grid = |g: &GridSection| HyperGrid::new(g.values.clone(), g.index).expect("validated grid");
        HyperState {
            learning_rate: grid(&self.hyper.learning_rate),
            weight_decay: grid(&self.hyper.weight_decay),
        }
    }

    pub fn norm(&self) -> DisplacementNorm {
        if self.metrics.squared {
            DisplacementNorm::Squared
        } else {
            DisplacementNorm::Euclidean
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioConfig> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// The normalized config as stored in pool manifests: defaults filled
    /// in, output directory omitted.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Rebuilds a config from a manifest echo.
    pub fn from_echo(value: &serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_value(value.clone()).map_err(serde_error)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    /// A synthetic scenario of `kind` with default generator settings.
    pub fn synthetic(id: impl Into<String>, kind: SceneKind) -> Self {
        ScenarioConfig {
            id: id.into(),
            kind: Some(kind.name().into()),
            file: None,
            count: default_count(),
            agents: default_agents(),
            sigma: default_sigma(),
            speed: default_speed(),
            dt: default_dt(),
            seed: None,
            stride: default_stride(),
        }
    }

    pub fn source(&self, run_seed: u64, model: &ModelSection) -> Source {
        match (&self.kind, &self.file) {
            (_, Some(path)) => Source::File {
                path: path.clone(),
                stride: self.stride,
            },
            (Some(kind), None) => {
                let kind = kind.parse().expect("validated kind");
                let mut spec = SceneSpec::new(kind, self.seed.unwrap_or(run_seed));
                spec.count = self.count;
                spec.agents = self.agents;
                spec.sigma = self.sigma;
                spec.speed = (self.speed[0], self.speed[1]);
                spec.dt = self.dt;
                spec.t_obs = model.t_obs;
                spec.t_pred = model.t_pred;
                Source::Synthetic(spec)
            }
            (None, None) => unreachable!("validated scenario source"),
        }
    }
}

/// Turns serde's message into a [`ConfigError`] keyed by the field it
/// mentions.
fn serde_error(e: serde_json::Error) -> ConfigError {
    let msg = e.to_string();
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string();
    ConfigError::new(key, msg)
}
