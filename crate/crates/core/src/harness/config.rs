//! Experiment configuration: a TOML file with dotted sections.
//!
//! Every field has a default, so an empty file is a valid configuration and
//! the snapshot written next to each run lists every value in effect.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, TargetKind};
use crate::embed::{self, EmbedOptions};
use crate::synth::{mix_seed, DatasetRecipe, MaterialSpec, EDGE_DIM, NODE_DIM};
use crate::training::{TrainConfig, DEFAULT_HIDDEN_DIM};
use crate::{Error, Result};

/// Hidden width used when running at desk scale.
pub const DESK_HIDDEN_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialTemplate {
    pub n_atoms: usize,
    pub n_target_ions: usize,
    pub barrier_base: f64,
    pub barrier_spread: f64,
    /// Per-material offset width of `barrier_base`.
    pub material_barrier_spread: f64,
    pub attempt_rate: f64,
    pub lattice_spacing: f64,
}

impl Default for MaterialTemplate {
    fn default() -> Self {
        MaterialTemplate {
            n_atoms: 64,
            n_target_ions: 32,
            barrier_base: 3000.0,
            barrier_spread: 2000.0,
            material_barrier_spread: 2500.0,
            attempt_rate: 50.0,
            lattice_spacing: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub target: TargetKind,
    pub n_materials: usize,
    pub temperatures: Vec<f64>,
    pub n_frames: usize,
    pub dt: f64,
    /// Simulation steps per recorded frame.
    pub stride: usize,
    pub test_fraction: f64,
    pub material: MaterialTemplate,
}

impl DatasetConfig {
    pub fn trajectory_default() -> Self {
        DatasetConfig {
            target: TargetKind::MsdFinal,
            n_materials: 64,
            temperatures: vec![600.0, 800.0, 1000.0, 1200.0],
            n_frames: 128,
            dt: 0.01,
            stride: 8,
            test_fraction: 0.2,
            material: MaterialTemplate::default(),
        }
    }

    /// Few labelled materials and a large held-out set.
    pub fn structure_default() -> Self {
        DatasetConfig {
            target: TargetKind::MsdFinal,
            n_materials: 48,
            test_fraction: 0.75,
            temperatures: vec![700.0, 900.0, 1100.0, 1300.0],
            material: MaterialTemplate {
                barrier_base: 3500.0,
                ..MaterialTemplate::default()
            },
            ..Self::trajectory_default()
        }
    }

    pub fn recipe(&self, kind: DatasetKind, seed: u64) -> DatasetRecipe {
        let m = &self.material;
        DatasetRecipe {
            kind,
            target: self.target,
            n_materials: self.n_materials,
            template: MaterialSpec {
                n_atoms: m.n_atoms,
                n_target_ions: m.n_target_ions,
                barrier_base: m.barrier_base,
                barrier_spread: m.barrier_spread,
                attempt_rate: m.attempt_rate,
                lattice_spacing: m.lattice_spacing,
                seed: 0,
            },
            material_barrier_spread: m.material_barrier_spread,
            temperatures: self.temperatures.clone(),
            n_frames: self.n_frames,
            dt: self.dt,
            stride: self.stride,
            test_fraction: self.test_fraction,
            seed,
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::trajectory_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_h: usize,
    /// Widths of the decoder's hidden layers.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_h: DEFAULT_HIDDEN_DIM,
            hidden: vec![DESK_HIDDEN_WIDTH; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedules {
    pub trainer: TrainConfig,
    pub finetune: TrainConfig,
    pub structure: TrainConfig,
}

impl Default for TrainSchedules {
    fn default() -> Self {
        TrainSchedules {
            trainer: TrainConfig::trainer(),
            finetune: TrainConfig::finetune(),
            structure: TrainConfig::structure(),
        }
    }
}

/// How the trajectory-dataset predictor is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorInit {
    /// Ridge regression onto the trainer's hidden vectors.
    #[default]
    ClosedForm,
    /// Adam on the same ridge objective with a fixed step budget.
    Gradient,
    /// Random encoder and decoder.
    Random,
    /// Random encoder and decoder trained on structure alone with the
    /// trainer's schedule before fine-tuning.
    StructureOnly,
}

/// How the structure-dataset predictor is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureInit {
    /// Encoder from the trainer's `W_xT`, decoder from the fine-tuned predictor.
    #[default]
    Trainer,
    /// Encoder from the fine-tuned predictor's `W^trj`.
    Predictor,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOptions {
    pub predictor_init: PredictorInit,
    pub distill_steps: usize,
    pub distill_lr: f64,
    pub structure_init: StructureInit,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            predictor_init: PredictorInit::ClosedForm,
            distill_steps: 200,
            distill_lr: 1e-3,
            structure_init: StructureInit::Trainer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of a single pipeline run.
    pub seed: u64,
    /// Seeds of ablation and sweep runs.
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    pub trj: DatasetConfig,
    #[serde(rename = "str")]
    pub str_data: DatasetConfig,
    pub embed: EmbedOptions,
    pub model: ModelConfig,
    pub train: TrainSchedules,
    pub pipeline: PipelineOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: (0..20).collect(),
            lambda_grid: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            trj: DatasetConfig::trajectory_default(),
            str_data: DatasetConfig::structure_default(),
            embed: EmbedOptions::default(),
            model: ModelConfig::default(),
            train: TrainSchedules::default(),
            pipeline: PipelineOptions::default(),
        }
    }
}

/// Named starting points for [`ExperimentConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Desk-scale default with the 100-epoch structure schedule.
    Default,
    /// Structure schedule of 1000 epochs with 0.1% decay.
    LongStructure,
    /// Reference decoder width of 4000; slow.
    Reference,
    /// Eight materials, five epochs; for smoke tests.
    Minimal,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut cfg = Self::default();
        match p {
            Preset::Default => {}
            Preset::LongStructure => cfg.train.structure = TrainConfig::structure_long(),
            Preset::Reference => cfg.model.hidden = vec![crate::numerics::REFERENCE_HIDDEN_WIDTH; 3],
            Preset::Minimal => {
                for d in [&mut cfg.trj, &mut cfg.str_data] {
                    d.n_materials = 8;
                    d.test_fraction = 0.25;
                }
                for t in [&mut cfg.train.trainer, &mut cfg.train.finetune, &mut cfg.train.structure] {
                    t.epochs = 5;
                }
                cfg.seeds = vec![0, 1];
            }
        }
        cfg
    }

    /// Width of the structure–temperature embedding implied by the config.
    pub fn d_xt(&self) -> usize {
        embed::x_dim(NODE_DIM, EDGE_DIM, self.embed.polynomial)
    }

    /// Width of the trajectory embedding implied by the config.
    pub fn d_p(&self) -> usize {
        self.embed.n_bands + usize::from(self.embed.msd_coordinate)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.model.d_h == 0 || self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return bad(format!(
                "model needs d_h > 0 and positive hidden widths, got d_h={} hidden={:?}",
                self.model.d_h, self.model.hidden
            ));
        }
        if self.embed.n_bands == 0 || self.trj.n_frames < 2 * self.embed.n_bands {
            return bad(format!(
                "trj.n_frames ({}) must be at least twice embed.n_bands ({})",
                self.trj.n_frames, self.embed.n_bands
            ));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return bad(format!("lambda_grid values must be positive, got {:?}", self.lambda_grid));
        }
        for (name, t) in [
            ("train.trainer", &self.train.trainer),
            ("train.finetune", &self.train.finetune),
            ("train.structure", &self.train.structure),
        ] {
            t.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Parses a possibly partial configuration; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut root = to_value(&Self::default());
        merge(&mut root, user, "")?;
        from_value(root)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Returns a copy with `key = value` overrides applied, where keys are
    /// dotted paths such as `train.trainer.lambda_b` and values are TOML
    /// literals.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, overrides: &[(K, V)]) -> Result<Self> {
        let mut root = to_value(self);
        for (key, value) in overrides {
            let (key, value) = (key.as_ref(), value.as_ref());
            let mut parsed: toml::Table = toml::from_str(&format!("v = {value}"))
                .map_err(|e| Error::Config(format!("override {key}: {e}")))?;
            let mut patch = parsed.remove("v").expect("parsed above");
            for part in key.rsplit('.') {
                let mut t = toml::Table::new();
                t.insert(part.to_string(), patch);
                patch = toml::Value::Table(t);
            }
            let toml::Value::Table(patch) = patch else { unreachable!() };
            merge(&mut root, patch, "")?;
        }
        from_value(root)
    }

    /// Run seed of the stage identified by `stream`.
    pub fn stage_seed(run_seed: u64, stream: u64) -> u64 {
        mix_seed(run_seed, stream)
    }
}

fn to_value(cfg: &ExperimentConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("configuration serializes to TOML")
}

fn from_value(v: toml::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Overlays `patch` onto `base`, rejecting keys that `base` does not have.
fn merge(base: &mut toml::Value, patch: toml::Table, prefix: &str) -> Result<()> {
    let table = base
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{prefix}` is not a section")))?;
    for (k, v) in patch {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = table
            .get_mut(&k)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        match (slot.is_table(), v) {
            (true, toml::Value::Table(sub)) => merge(slot, sub, &key)?,
            (true, _) => return Err(Error::Config(format!("`{key}` must be a section"))),
            (false, toml::Value::Table(_)) => {
                return Err(Error::Config(format!("`{key}` is not a section")))
            }
            (false, v) => *slot = v,
        }
    }
    Ok(())
}

/// Dotted key → TOML literal for every leaf of `cfg`.
pub fn flatten(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", &to_value(cfg), &mut out);
    out
}

/// One differing key between two configurations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigChange {
    pub key: String,
    pub base: Option<String>,
    pub arm: Option<String>,
}

pub fn config_diff(base: &ExperimentConfig, arm: &ExperimentConfig) -> Vec<ConfigChange> {
    let (a, b) = (flatten(base), flatten(arm));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| ConfigChange {
            key: k.clone(),
            base: a.get(k).cloned(),
            arm: b.get(k).cloned(),
        })
        .collect()
}
