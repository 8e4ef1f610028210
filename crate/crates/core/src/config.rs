//! Structured training configuration: TOML file format, environment-variable
//! overrides, algorithm presets, and a stable config hash.
//!
//! Unknown keys are errors, in the file and in the environment alike;
//! silent default drift is the main reproducibility hazard.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::objective::ObjectiveConfig;
use crate::seeding::fnv1a;
use crate::tasks::CurriculumSpec;
use crate::uec::UecConfig;

/// Prefix for environment-variable overrides. A key like
/// `UECLAB_OBJECTIVE__EPS_HIGH=0.3` overrides `objective.eps_high`;
/// top-level keys use a single segment (`UECLAB_LEARNING_RATE=0.5`).
pub const ENV_PREFIX: &str = "UECLAB_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Dapo,
    Uec,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Dapo => "dapo",
            Algorithm::Uec => "uec",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "dapo" => Ok(Algorithm::Dapo),
            "uec" => Ok(Algorithm::Uec),
            other => Err(LabError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKindConfig {
    Tabular,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub kind: PolicyKindConfig,
    pub linear_features: usize,
    pub linear_ngram: usize,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKindConfig::Tabular,
            linear_features: 256,
            linear_ngram: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub temperature: f64,
    pub top_p: f64,
    pub samples_per_task: usize,
    pub k_values: Vec<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            top_p: 0.95,
            samples_per_task: 32,
            k_values: vec![1, 4, 16],
        }
    }
}

/// Full training configuration; sections mirror the subsystem configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Absent means the kind-dependent desk-scale default: 0.1 tabular,
    /// 0.01 linear.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub dump_trajectories: bool,
    pub objective: ObjectiveConfig,
    pub uec: UecConfig,
    pub curriculum: CurriculumSpec,
    pub policy: PolicySpec,
    pub eval: EvalSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Grpo,
            learning_rate: None,
            batch_size: 6,
            max_steps: 300,
            eval_every: 50,
            checkpoint_every: 100,
            seed: 0,
            dump_trajectories: false,
            objective: ObjectiveConfig::default(),
            uec: UecConfig::default(),
            curriculum: CurriculumSpec::default(),
            policy: PolicySpec::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Effective learning rate after the kind-dependent default.
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.policy.kind {
            PolicyKindConfig::Tabular => 0.1,
            PolicyKindConfig::Linear => 0.01,
        })
    }

    /// Apply algorithm forcing and validate. grpo forces symmetric clip
    /// bounds and disables exploration and replay; dapo keeps its asymmetric
    /// bounds but also runs without the controller; uec enables both gates.
    pub fn resolved(&self) -> Result<TrainConfig> {
        let mut cfg = self.clone();
        match cfg.algorithm {
            Algorithm::Grpo => {
                cfg.objective.eps_high = cfg.objective.eps_low;
                cfg.uec.explore = false;
                cfg.uec.replay = false;
            }
            Algorithm::Dapo => {
                cfg.uec.explore = false;
                cfg.uec.replay = false;
            }
            Algorithm::Uec => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.uec.validate()?;
        if self.batch_size == 0 {
            return Err(LabError::invalid("batch_size must be >= 1"));
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return Err(LabError::invalid("eval_every and checkpoint_every must be >= 1"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(LabError::invalid("learning_rate must be positive"));
            }
        }
        if self.eval.samples_per_task == 0 || self.eval.k_values.is_empty() {
            return Err(LabError::invalid("eval needs samples_per_task >= 1 and k values"));
        }
        if let Some(&kmax) = self.eval.k_values.iter().max() {
            if kmax > self.eval.samples_per_task {
                return Err(LabError::invalid("every eval k must be <= samples_per_task"));
            }
        }
        if !(self.eval.temperature > 0.0) {
            return Err(LabError::invalid("eval temperature must be positive"));
        }
        if !(0.0 < self.eval.top_p && self.eval.top_p <= 1.0) {
            return Err(LabError::invalid("eval top_p must be in (0, 1]"));
        }
        if self.policy.linear_features == 0 || self.policy.linear_ngram == 0 {
            return Err(LabError::invalid("linear featurizer needs features and ngram >= 1"));
        }
        Ok(())
    }

    /// Parse a TOML document, then apply `UECLAB_*` environment overrides.
    pub fn from_toml_str(text: &str, env: &[(String, String)]) -> Result<TrainConfig> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| LabError::Config(format!("bad config file: {e}")))?;
        for (key, value) in env {
            let Some(path) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let segments: Vec<String> = path.split("__").map(|s| s.to_lowercase()).collect();
            insert_override(&mut table, &segments, value)?;
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| LabError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        let env: Vec<(String, String)> = std::env::vars().collect();
        Self::from_toml_str(&text, &env)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(format!("serialize config: {e}")))
    }

    /// Stable hash of the resolved configuration.
    pub fn hash(&self) -> Result<u64> {
        Ok(fnv1a(0xcbf29ce484222325, self.to_toml_string()?.as_bytes()))
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if raw.contains(',') {
        let items: Vec<toml::Value> = raw
            .split(',')
            .map(|s| parse_env_value(s.trim()))
            .collect();
        return toml::Value::Array(items);
    }
    toml::Value::String(raw.to_string())
}

fn insert_override(table: &mut toml::Table, segments: &[String], raw: &str) -> Result<()> {
    match segments {
        [] => Err(LabError::Config("empty override path".into())),
        [leaf] => {
            table.insert(leaf.clone(), parse_env_value(raw));
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(inner) => insert_override(inner, rest, raw),
                _ => Err(LabError::Config(format!(
                    "override path {head} does not name a section"
                ))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_resolve() {
        let cfg = TrainConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, TrainConfig::default());
        let resolved = cfg.resolved().unwrap();
        // grpo forces symmetric bounds and disables the controller.
        assert_eq!(resolved.objective.eps_high, resolved.objective.eps_low);
        assert!(!resolved.uec.explore);
        assert!(!resolved.uec.replay);
        assert!((cfg.effective_learning_rate() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        let err = TrainConfig::from_toml_str("learning_rte = 0.5\n", &[]).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
        let err = TrainConfig::from_toml_str("[objective]\nepsilon = 0.2\n", &[]).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn sections_and_values_parse() {
        let text = r#"
algorithm = "uec"
learning_rate = 2.0
batch_size = 8
max_steps = 100

[objective]
eps_low = 0.2
eps_high = 0.3

[uec]
g = 5
g_prime = 20
t_prime = 1.2
s_prime = 256

[curriculum]
size = 24
hard_fraction = 0.25
"#;
        let cfg = TrainConfig::from_toml_str(text, &[]).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Uec);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.uec.s_prime, 256);
        assert!((cfg.objective.eps_high - 0.3).abs() < 1e-12);
        assert!((cfg.curriculum.hard_fraction - 0.25).abs() < 1e-12);
        let resolved = cfg.resolved().unwrap();
        assert!(resolved.uec.explore && resolved.uec.replay);
    }

    #[test]
    fn environment_overrides_apply() {
        let env = vec![
            ("UECLAB_LEARNING_RATE".to_string(), "0.5".to_string()),
            ("UECLAB_OBJECTIVE__EPS_HIGH".to_string(), "0.3".to_string()),
            ("UECLAB_UEC__T_PRIME".to_string(), "1.1".to_string()),
            ("UECLAB_EVAL__K_VALUES".to_string(), "1,4".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        let cfg = TrainConfig::from_toml_str("", &env).unwrap();
        assert_eq!(cfg.learning_rate, Some(0.5));
        assert!((cfg.objective.eps_high - 0.3).abs() < 1e-12);
        assert!((cfg.uec.t_prime - 1.1).abs() < 1e-12);
        assert_eq!(cfg.eval.k_values, vec![1, 4]);
    }

    #[test]
    fn unknown_environment_key_fails() {
        let env = vec![("UECLAB_NO_SUCH_KEY".to_string(), "1".to_string())];
        assert!(matches!(
            TrainConfig::from_toml_str("", &env),
            Err(LabError::Config(_))
        ));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = TrainConfig::default().hash().unwrap();
        let b = TrainConfig::default().hash().unwrap();
        assert_eq!(a, b);
        let mut cfg = TrainConfig::default();
        cfg.seed = 1;
        assert_ne!(cfg.hash().unwrap(), a);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_toml_str("batch_size = 0\n", &[]).is_err());
        assert!(TrainConfig::from_toml_str("[eval]\ntop_p = 0.0\n", &[]).is_err());
        assert!(
            TrainConfig::from_toml_str("[eval]\nsamples_per_task = 4\nk_values = [8]\n", &[])
                .is_err()
        );
    }
}
