//! TOML run configuration with `[data]`, `[prep]`, `[social]`, `[model]` and
//! `[train]` sections, plus dotted-key overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_scene, window_samples, Sample, SceneSource, TrackTable, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::prep::{Augmentation, NormMode};
use crate::social::SocialConfig;
use crate::train::{Preset, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_NOISE_SIGMA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory that relative scene paths are resolved against; itself
    /// relative to the config file.
    pub base_dir: Option<PathBuf>,
    pub stride: usize,
    /// Share of windows held out when a single labeled set is split.
    pub holdout_fraction: f64,
    pub scenes: BTreeMap<String, SceneSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { base_dir: None, stride: 1, holdout_fraction: 0.1, scenes: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub norm_mode: NormMode,
    pub augment: Vec<Augmentation>,
    pub noise_sigma: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig { norm_mode: NormMode::Tobs, augment: Vec::new(), noise_sigma: DEFAULT_NOISE_SIGMA }
    }
}

/// Unset schedule keys take the preset's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Preset,
    pub epochs: Option<usize>,
    pub base_lr: Option<f64>,
    pub gamma: Option<f64>,
    pub step: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            preset: Preset::EthUcy,
            epochs: None,
            base_lr: None,
            gamma: None,
            step: None,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prep: PrepConfig,
    pub social: SocialConfig,
    pub model: ModelSpec,
    pub train: TrainSection,
    /// Directory of the config file; not serialized.
    #[serde(skip)]
    pub origin: Option<PathBuf>,
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Set `a.b.c = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}

impl RunConfig {
    /// Parse TOML text and apply `key=value` overrides on top.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file (or start from defaults when `path` is `None`).
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let (text, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                (text, p.parent().map(Path::to_path_buf))
            }
            None => (String::new(), None),
        };
        let mut cfg = Self::parse(&text, overrides)?;
        cfg.origin = origin;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.stride == 0 {
            return Err(Error::Config("data.stride must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.holdout_fraction) {
            return Err(Error::Config("data.holdout_fraction must lie in [0, 1)".into()));
        }
        self.train_config()?.validate()
    }

    /// Model spec with the `[social]` section folded in.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec { social: self.social.clone(), ..self.model.clone() }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let base = TrainConfig::preset(t.preset, self.model_spec());
        Ok(TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            base_lr: t.base_lr.unwrap_or(base.base_lr),
            gamma: t.gamma.unwrap_or(base.gamma),
            step: t.step.unwrap_or(base.step),
            batch_size: t.batch_size,
            norm_mode: self.prep.norm_mode,
            augment: self.prep.augment.clone(),
            noise_sigma: self.prep.noise_sigma,
            seed: t.seed,
            ..base
        })
    }

    /// Copy with every preset-derived default written out.
    pub fn materialized(&self) -> Result<Self> {
        let tc = self.train_config()?;
        let mut c = self.clone();
        c.train.epochs = Some(tc.epochs);
        c.train.base_lr = Some(tc.base_lr);
        c.train.gamma = Some(tc.gamma);
        c.train.step = Some(tc.step);
        c.model = tc.model;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Directory that relative scene paths resolve against.
    pub fn scene_base(&self) -> PathBuf {
        let origin = self.origin.clone().unwrap_or_else(|| PathBuf::from("."));
        match &self.data.base_dir {
            Some(b) if b.is_absolute() => b.clone(),
            Some(b) => origin.join(b),
            None => origin,
        }
    }

    pub fn scene_path(&self, id: &str) -> Result<PathBuf> {
        let src = self.data.scenes.get(id).ok_or_else(|| Error::Config(format!("unknown scene `{id}`")))?;
        Ok(if src.path.is_absolute() { src.path.clone() } else { self.scene_base().join(&src.path) })
    }

    pub fn load_scene(&self, id: &str) -> Result<TrackTable> {
        let src = self.data.scenes.get(id).ok_or_else(|| Error::Config(format!("unknown scene `{id}`")))?;
        load_scene(id, src, &self.scene_base())
    }

    /// Windowed samples of one scene.
    pub fn scene_samples(&self, id: &str) -> Result<Vec<Sample>> {
        let t = self.load_scene(id)?;
        Ok(window_samples(&t, OBS_LEN, PRED_LEN, self.data.stride))
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.data.scenes.keys().cloned().collect()
    }
}
