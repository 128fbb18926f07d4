use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use subdyn::latent::{AeConfig, IntegratorConfig};
use subdyn::scenario::{build_scenario, ScenarioSpec};

use crate::{CliError, Common};

/// Everything a command needs besides file paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub ae: AeConfig,
    pub integrator: IntegratorConfig,
    pub supervised: bool,
    /// Rollout length; `None` follows the ground-truth sequence.
    pub steps: Option<usize>,
    pub repeats: usize,
    /// Sequence label used by rollout, eval and bench.
    pub sequence: Option<String>,
}

impl RunConfig {
    pub fn defaults(scenario: ScenarioSpec) -> Self {
        let ae = AeConfig::new(scenario.latent_dim);
        Self {
            scenario,
            ae,
            integrator: IntegratorConfig::default(),
            supervised: false,
            steps: None,
            repeats: 100,
            sequence: None,
        }
    }
}

/// Recursively overwrites `base` with the keys present in `over`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    // a manifest carries its resolved configuration under "config"
    Ok(match value.get("config") {
        Some(c) if value.get("command").is_some() => c.clone(),
        _ => value,
    })
}

/// Built-in scenario defaults, then the config file, then flags.
pub fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let file = common.config.as_deref().map(read_config_file).transpose()?;
    let name = match (&common.scenario, &file) {
        (Some(n), _) => n.clone(),
        (None, Some(f)) => f
            .pointer("/scenario/name")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Usage("--scenario is required".into()))?
            .to_string(),
        (None, None) => return Err(CliError::Usage("--scenario is required".into())),
    };
    let spec = build_scenario(&name).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = RunConfig::defaults(spec);
    if let Some(f) = &file {
        let mut v = serde_json::to_value(&cfg)?;
        merge(&mut v, f);
        cfg = serde_json::from_value(v).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    }
    cfg.scenario.name = name;
    if let Some(n) = common.frames {
        cfg.scenario.frames = n;
        for s in cfg.scenario.sequences.iter_mut().chain(cfg.scenario.test_sequences.iter_mut()) {
            s.frames = n;
        }
    }
    if let Some(r) = common.latent_dim {
        cfg.ae.latent_dim = r;
    }
    if common.no_noise {
        cfg.integrator.noise = false;
    }
    if common.no_balancing {
        cfg.integrator.balancing = false;
    }
    if common.supervised {
        cfg.supervised = true;
    }
    if common.steps.is_some() {
        cfg.steps = common.steps;
    }
    if let Some(r) = common.repeats {
        cfg.repeats = r;
    }
    if common.sequence.is_some() {
        cfg.sequence = common.sequence.clone();
    }
    cfg.scenario.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Applies the training flags to whichever model the command trains.
pub fn apply_training_flags(common: &Common, epochs: &mut usize, batch: &mut usize, lr: &mut f64, seed: &mut u64) {
    if let Some(v) = common.epochs {
        *epochs = v;
    }
    if let Some(v) = common.batch {
        *batch = v;
    }
    if let Some(v) = common.lr {
        *lr = v;
    }
    if let Some(v) = common.seed {
        *seed = v;
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub versions: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn versions() -> Value {
    serde_json::json!({
        "subdyn": env!("CARGO_PKG_VERSION"),
        "sequence_format": "SDSQ0001",
        "checkpoint_format": "SDWT0001",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overrides_nested_keys_only() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge(&mut base, &serde_json::json!({"a": {"c": 5}}));
        assert_eq!(base, serde_json::json!({"a": {"b": 1, "c": 5}, "d": 3}));
    }
}
