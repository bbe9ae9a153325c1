use std::path::Path;

use serde_json::{Map, Value};

use super::presets::preset;
use super::HarnessError;
use crate::collectives::ExecutionMode;
use crate::engine::RunConfig;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<ExecutionMode>,
    pub name: Option<String>,
}

/// A validated run plus the name its outputs are written under.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Option<String>,
    pub run: RunConfig,
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else
/// replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Builds a config from an optional JSON file, an optional preset and CLI
/// overrides, then validates it.
///
/// The file may carry `"preset"` and `"name"` keys; its remaining keys are
/// merged over the preset. A preset given on the command line wins over
/// the file's.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, HarnessError> {
    let mut file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", p.display())))?;
            match serde_json::from_str(&text)? {
                Value::Object(m) => m,
                _ => return Err(HarnessError::Config(format!("{}: expected a JSON object", p.display()))),
            }
        }
        None => Map::new(),
    };
    let take_str = |m: &mut Map<String, Value>, key: &str| -> Result<Option<String>, HarnessError> {
        match m.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(HarnessError::Config(format!("`{key}` must be a string"))),
        }
    };
    let file_preset = take_str(&mut file, "preset")?;
    let file_name = take_str(&mut file, "name")?;
    let preset_name = overrides.preset.clone().or(file_preset);

    let mut doc = match &preset_name {
        Some(p) => preset(p)?,
        None => Value::Object(Map::new()),
    };
    merge(&mut doc, Value::Object(file));
    let mut run: RunConfig = serde_json::from_value(doc).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        run.seed = seed;
    }
    if let Some(mode) = overrides.mode {
        run.mode = mode;
    }
    run.validate()?;

    let name = overrides.name.clone().or(file_name).or_else(|| preset_name.clone()).unwrap_or_else(|| "run".into());
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(HarnessError::Config(format!("run name `{name}` must be a plain file stem")));
    }
    Ok(ExperimentConfig { name, preset: preset_name, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn with_file(json: &str, o: &Overrides) -> Result<ExperimentConfig, HarnessError> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(json.as_bytes()).unwrap();
        load_config(Some(f.path()), o)
    }

    #[test]
    fn preset_examples() {
        let full = load_config(None, &Overrides { preset: Some("hdet-full".into()), ..Default::default() }).unwrap();
        assert_eq!(full.name, "hdet-full");
        assert!((full.run.alpha - 1.0 / 9.0).abs() < 1e-15);
        assert!(full.run.auto_lr.enabled && full.run.warm_init.enabled);

        let low = load_config(None, &Overrides { preset: Some("baseline-low".into()), ..Default::default() }).unwrap();
        assert_eq!(low.run.alpha, 0.0);
        assert!(!low.run.auto_lr.enabled && !low.run.warm_init.enabled);
        assert_eq!(low.run.one_cycle.eta_max, 0.0001);
    }

    #[test]
    fn file_merges_over_preset_and_flags_win() {
        let o = Overrides { seed: Some(42), mode: Some(ExecutionMode::Sequential), ..Default::default() };
        let cfg = with_file(r#"{"preset": "hdet-full", "name": "mine", "seed": 7, "auto_lr": {"sigma": 0.2}}"#, &o).unwrap();
        assert_eq!((cfg.name.as_str(), cfg.run.seed, cfg.run.mode), ("mine", 42, ExecutionMode::Sequential));
        assert_eq!(cfg.run.auto_lr.sigma, 0.2);
        assert_eq!(cfg.run.auto_lr.beta, 0.9);
        assert!(cfg.run.auto_lr.enabled);
    }

    #[test]
    fn rejections_name_the_problem() {
        let o = Overrides::default();
        let e = with_file(r#"{"objective": {"kind": "quadratic", "curvatures": [1]}, "total_steps": 105, "sync_interval": 10}"#, &o);
        assert!(e.unwrap_err().to_string().contains("multiple of sync_interval"));
        let e = with_file(r#"{"preset": "nope"}"#, &o).unwrap_err();
        assert!(matches!(e, HarnessError::UnknownPreset { .. }));
        let e = with_file(r#"{"preset": "hdet-full", "alpha": -1}"#, &o).unwrap_err();
        assert!(e.to_string().contains("alpha"));
        let e = with_file(r#"{"preset": "hdet-full", "one_cycle": {"final_div_factor": 1e4}}"#, &o).unwrap_err();
        assert!(e.to_string().contains("gamma"));
        let e = with_file(r#"{"preset": "hdet-full", "typo": 1}"#, &o).unwrap_err();
        assert!(e.to_string().contains("typo"));
    }
}
