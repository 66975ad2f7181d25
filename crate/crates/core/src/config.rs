//! Experiment configuration: one TOML file with `[scenario]`, `[cqi]`,
//! `[model]`, `[train]` and `[eval]` sections, plus `section.key=value`
//! overrides.

use crate::channel::ScenarioConfig;
use crate::cqi::CqiConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CSIFB_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub cqi: CqiConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// The small configuration used by the tests: a 2×2 array, 8
    /// subcarriers, the toy model, and a link budget that keeps the CQI
    /// distribution away from the table edges.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        ExperimentConfig {
            scenario: ScenarioConfig {
                n_t: model.n_t,
                n_v: 2,
                n_h: 2,
                n_c: model.n_c,
                ..Default::default()
            },
            cqi: CqiConfig {
                subcarriers_per_subband: model.subcarriers_per_subband,
                tx_power_dbm: 32.0,
                ..Default::default()
            },
            model,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.cqi.validate(self.scenario.n_c)?;
        self.model.validate()?;
        self.train.validate()?;
        if (self.model.n_t, self.model.n_c) != (self.scenario.n_t, self.scenario.n_c) {
            return Err(Error::Config(format!(
                "model.n_t/model.n_c = {}/{} disagree with scenario.n_t/scenario.n_c = {}/{}",
                self.model.n_t, self.model.n_c, self.scenario.n_t, self.scenario.n_c
            )));
        }
        if self.model.subcarriers_per_subband != self.cqi.subcarriers_per_subband {
            return Err(Error::Config(format!(
                "model.subcarriers_per_subband = {} disagrees with cqi.subcarriers_per_subband = {}",
                self.model.subcarriers_per_subband, self.cqi.subcarriers_per_subband
            )));
        }
        if self.eval.snr_list.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("eval.snr_list contains NaN".into()));
        }
        Ok(())
    }

    fn from_value(v: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = v.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a TOML document, applying `overrides` first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(toml::Value::Table(table))
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies `section.key=value` to a TOML table. The value is read as a TOML
/// literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` must look like section.key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("at least two keys");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
