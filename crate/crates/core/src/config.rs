//! Run configuration and its textual forms.
//!
//! Configs are written as TOML with flat dotted keys (`regularizer.kind =
//! "SmoothedNorm"`) or as JSON; a `meta.json` emitted by a previous run is
//! accepted directly because its `config` member holds the resolved config.
//! Overrides of the form `key.path=value` are applied on the parsed tree
//! before deserialization, so they obey the same validation as file values.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Activation, Regularizer};
use crate::rng::MAX_NORMALS_PER_CELL;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    /// Stochastic heavy ball: constant damping plus velocity noise.
    #[serde(rename = "SHB")]
    Shb,
    /// Heavy ball without noise.
    #[serde(rename = "HB")]
    Hb,
    /// Damping `γ / max(t, t_floor)`, the continuous-time Nesterov form.
    #[serde(rename = "AGD")]
    Agd,
    /// First-order gradient flow; velocities stay at zero.
    #[serde(rename = "GF")]
    Gf,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::Shb => "SHB",
            Integrator::Hb => "HB",
            Integrator::Agd => "AGD",
            Integrator::Gf => "GF",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub n: usize,
    pub n0: usize,
    pub m: usize,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
    pub integrator: Integrator,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Standard deviation of the initial first- and second-layer weights.
    #[serde(default = "default_one")]
    pub init_scale: f64,
    /// Lower clamp on the time used by the AGD damping `γ / t`.
    #[serde(default = "default_one")]
    pub t_floor: f64,
    #[serde(default)]
    pub activation: Activation,
    /// Attach kNN entropy and free-energy estimates to trajectory records.
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_record_every() -> u64 {
    100
}

fn default_one() -> f64 {
    1.0
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 2,
            n: 100,
            n0: 5,
            m: 100,
            gamma: 1.0,
            beta: 100.0,
            dt: 1e-2,
            steps: 1000,
            seed: 0,
            integrator: Integrator::Shb,
            regularizer: Regularizer::None,
            record_every: default_record_every(),
            init_scale: 1.0,
            t_floor: 1.0,
            activation: Activation::Sigmoid,
            diagnostics: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.d < 2 {
            return fail(format!("d must be at least 2 (got {})", self.d));
        }
        if self.d > MAX_NORMALS_PER_CELL {
            return fail(format!("d must be at most {MAX_NORMALS_PER_CELL}"));
        }
        if self.n0 == 0 || self.m == 0 {
            return fail("n0 and m must be at least 1".into());
        }
        if self.record_every == 0 {
            return fail("record_every must be at least 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("dt", self.dt), ("beta", self.beta)] {
            if v.is_nan() || v <= 0.0 {
                return fail(format!("{name} must be positive (got {v})"));
            }
        }
        if !self.gamma.is_finite() || !self.dt.is_finite() {
            return fail("gamma and dt must be finite".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return fail(format!(
                "init_scale must be nonnegative (got {})",
                self.init_scale
            ));
        }
        if self.t_floor.is_nan() || self.t_floor <= 0.0 {
            return fail(format!("t_floor must be positive (got {})", self.t_floor));
        }
        self.regularizer.validate()
    }
}

/// Reads a TOML or JSON file into a generic tree.
///
/// A JSON document with a top-level `config` object (as written to
/// `meta.json`) yields the whole document; callers pick the member they need.
pub fn read_tree(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json =
        path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        Ok(serde_json::from_str(&text)?)
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(Error::from)
    }
}

/// Applies a `key.path=value` override in place, creating tables as needed.
///
/// The value is read as a TOML literal (`16`, `1e-3`, `true`, `"SHB"`); bare
/// words that are not valid literals are taken as strings.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!(
            "override '{assignment}' has an empty key"
        )));
    }
    let value = parse_literal(raw.trim());
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("just made an object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    if !node.is_object() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut()
        .expect("just made an object")
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok());
    match parsed {
        Some(v) => v,
        None => match raw.parse::<u64>() {
            Ok(u) => Value::from(u),
            Err(_) => Value::String(raw.to_string()),
        },
    }
}

/// Deserializes a tree into a typed config, mapping errors to config errors.
pub fn from_tree<T: DeserializeOwned>(tree: Value) -> Result<T> {
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// Loads a run config from `path` (or defaults when `None`) and applies overrides.
pub fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut tree = match path {
        Some(p) => {
            let mut t = read_tree(p)?;
            if let Some(inner) = t.get_mut("config") {
                inner.take()
            } else {
                t
            }
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: RunConfig = from_tree(tree)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_dotted_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
d = 3
n = 10
n0 = 2
m = 20
gamma = 1.0
beta = 16.0
dt = 0.01
steps = 5
seed = 42
integrator = "HB"
regularizer.kind = "SmoothedNorm"
regularizer.c = 0.01
"#,
        )
        .unwrap();
        let cfg =
            load_run_config(Some(&path), &["beta=4".into(), "integrator=SHB".into()]).unwrap();
        assert_eq!(cfg.d, 3);
        assert_eq!(cfg.beta, 4.0);
        assert_eq!(cfg.integrator, Integrator::Shb);
        assert_eq!(
            cfg.regularizer,
            Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 }
        );
        assert_eq!(cfg.record_every, 100);
        assert_eq!(cfg.init_scale, 1.0);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut tree = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut tree, "regularizer.kind=Quadratic").unwrap();
        apply_override(&mut tree, "regularizer.c=0.5").unwrap();
        apply_override(&mut tree, "seed=18446744073709551615").unwrap();
        let cfg: RunConfig = from_tree(tree).unwrap();
        assert_eq!(cfg.regularizer, Regularizer::Quadratic { c: 0.5 });
        assert_eq!(cfg.seed, u64::MAX);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.beta = f64::NAN;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.n = 0;
        assert!(cfg.validate().is_err());
        let mut tree = serde_json::to_value(RunConfig::default()).unwrap();
        assert!(apply_override(&mut tree, "novalue").is_err());
        apply_override(&mut tree, "bogus=1").unwrap();
        assert!(from_tree::<RunConfig>(tree).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_run_config(Some(Path::new("/nonexistent/cfg.toml")), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }
}
