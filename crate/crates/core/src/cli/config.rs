//! Experiment configuration files and profile resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::emloop::EmConfig;
use crate::evalkit::{Scale, SyntheticSpec};
use crate::missingness::Mechanism;
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Paper,
    Desk,
}

impl Profile {
    pub fn em_config(self) -> EmConfig {
        match self {
            Profile::Paper => EmConfig::paper(),
            Profile::Desk => EmConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Mask model for the experiment; `observed_cols` are column names (MAR).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskModel {
    pub mechanism: Mechanism,
    pub ratio: f64,
    #[serde(default)]
    pub observed_cols: Vec<String>,
    #[serde(default = "yes")]
    pub ensure_observed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Generate masks for each split.
    Generate(MaskModel),
    /// 0/1 mask CSV over the full dataset, split together with the rows.
    File(PathBuf),
    /// Only the cells already empty in the data are imputed (no metrics).
    Existing,
}

/// Fully resolved experiment settings; this is what `config.json` and the
/// report's `config` field contain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub schema: Option<PathBuf>,
    pub mask: MaskSource,
    pub profile: Profile,
    pub em: EmConfig,
    pub split_fraction: f64,
    pub seed: u64,
    pub metric_scale: Scale,
    pub resume: bool,
}

/// Recursively overlays `patch` onto `base` (objects merge, anything else
/// replaces).
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub epochs: Option<usize>,
}

/// Reads an experiment file (or starts empty) and resolves it against the
/// chosen profile's EM defaults. Relative paths in the file are taken
/// relative to the file's directory.
pub fn resolve(path: Option<&Path>, ov: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    if !raw.is_object() {
        bail!("config must be a JSON object");
    }
    let profile = match ov.profile {
        Some(p) => p,
        None => match raw.get("profile") {
            Some(v) => serde_json::from_value(v.clone()).context("config field 'profile'")?,
            None => Profile::default(),
        },
    };
    let mut em = serde_json::to_value(profile.em_config())?;
    let explicit_em_seed = raw.get("em").is_some_and(|e| e.get("seed").is_some());
    if let Some(patch) = raw.get("em") {
        merge_json(&mut em, patch);
    }
    let obj = raw.as_object_mut().expect("checked above");
    obj.insert("em".into(), em);
    obj.insert("profile".into(), serde_json::to_value(profile)?);
    obj.entry("split_fraction").or_insert(0.7.into());
    obj.entry("seed").or_insert(0.into());
    obj.entry("metric_scale").or_insert("standardized".into());
    obj.entry("resume").or_insert(false.into());
    obj.entry("schema").or_insert(Value::Null);
    obj.entry("mask").or_insert(serde_json::json!({
        "generate": {"mechanism": "MCAR", "ratio": 0.3}
    }));
    if let Some(d) = &ov.data {
        obj.insert("data".into(), serde_json::json!({ "csv": d }));
    }
    if !obj.contains_key("data") {
        bail!("no data source: give --data or a config with a 'data' field");
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(raw).context("invalid experiment config")?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if !explicit_em_seed {
        // Training and sampling follow the master seed unless pinned.
        cfg.em.seed = derive_seed(cfg.seed, "em", &[]);
    }
    if let Some(s) = &ov.schema {
        cfg.schema = Some(s.clone());
    }
    if let Some(k) = ov.iterations {
        cfg.em.iterations = k;
    }
    if let Some(e) = ov.epochs {
        cfg.em.epochs = e;
    }
    if let Some(base) = path.and_then(Path::parent) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if ov.data.is_none() {
            if let DataSource::Csv(p) = &mut cfg.data {
                fix(p);
            }
        }
        if ov.schema.is_none() {
            if let Some(p) = &mut cfg.schema {
                fix(p);
            }
        }
        if let MaskSource::File(p) = &mut cfg.mask {
            fix(p);
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    cfg.em.validate().context("emloop config")?;
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        bail!("split_fraction must be in (0, 1), got {}", cfg.split_fraction);
    }
    let exists = |p: &Path, what: &str| -> anyhow::Result<()> {
        if !p.exists() {
            bail!("{what} {} does not exist", p.display());
        }
        Ok(())
    };
    if let DataSource::Csv(p) = &cfg.data {
        exists(p, "data file")?;
    }
    if let Some(p) = &cfg.schema {
        exists(p, "schema file")?;
    }
    if let MaskSource::File(p) = &cfg.mask {
        exists(p, "mask file")?;
    }
    if let MaskSource::Generate(m) = &cfg.mask {
        if !(m.ratio >= 0.0 && m.ratio <= 1.0) {
            bail!("mask ratio must be in [0, 1], got {}", m.ratio);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_objects() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut base, &json!({"b": {"d": 4}, "e": [1]}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": [1]}));
    }

    #[test]
    fn profile_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.json");
        std::fs::write(
            &p,
            r#"{"profile": "desk", "data": {"synthetic": {"family": "gaussian", "mean": [0, 0],
                "cov": [[1, 0.8], [0.8, 1]], "rows": 50, "seed": 0}},
                "em": {"iterations": 2, "sampler": {"repeats": 3}}}"#,
        )
        .unwrap();
        let cfg = resolve(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.em.hidden_dim, 128);
        assert_eq!(cfg.em.iterations, 2);
        assert_eq!(cfg.em.sampler.repeats, 3);
        assert_eq!(cfg.em.sampler.steps, 50);
        assert_eq!(cfg.split_fraction, 0.7);
        let cfg = resolve(
            Some(&p),
            &Overrides {
                profile: Some(Profile::Paper),
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.em.hidden_dim, 1024);
        assert_eq!(cfg.seed, 9);
        assert!(resolve(None, &Overrides::default()).is_err());
    }
}
