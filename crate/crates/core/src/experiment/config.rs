use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{FeatureSchema, GeneratorConfig};
use crate::error::{Error, Result};
use crate::models::{HiNetConfig, Layout, MmoeConfig, ModelKind, ModelSpec, SharedBottomConfig, Switches, Variant};
use crate::trainer::TrainConfig;

/// Version of the experiment config file format.
pub const SCHEMA_VERSION: u32 = 1;

fn default_train_frac() -> f64 {
    0.8
}
fn default_valid_frac() -> f64 {
    0.125
}

/// Where the records come from and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Generate a synthetic dataset; ignored when `dataset` is set.
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    /// Read records from a dataset file instead of generating them.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Share of records used for training (the rest is the test split).
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    /// Share of the training split held out for early stopping.
    #[serde(default = "default_valid_frac")]
    pub valid_frac: f64,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Some(GeneratorConfig::reference(0, 0.5)),
            dataset: None,
            train_frac: default_train_frac(),
            valid_frac: default_valid_frac(),
            split_seed: 0,
        }
    }
}

fn default_embedding_dim() -> usize {
    8
}

/// Architecture knobs shared by all model kinds. Baselines use the subset
/// that applies to them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    pub shared_sub_experts: usize,
    pub specific_sub_experts: usize,
    #[serde(default)]
    pub sub_expert_hidden: Vec<usize>,
    pub expert_width: usize,
    pub cgc_shared_experts: usize,
    pub cgc_task_experts: usize,
    #[serde(default)]
    pub cgc_expert_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
    pub scenario_embedding_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let d = HiNetConfig::new(Layout::new(1, FeatureSchema { fields: Vec::new() }));
        Self {
            embedding_dim: default_embedding_dim(),
            shared_sub_experts: d.shared_sub_experts,
            specific_sub_experts: d.specific_sub_experts,
            sub_expert_hidden: d.sub_expert_hidden,
            expert_width: d.expert_width,
            cgc_shared_experts: d.cgc_shared_experts,
            cgc_task_experts: d.cgc_task_experts,
            cgc_expert_hidden: d.cgc_expert_hidden,
            tower_hidden: d.tower_hidden,
            scenario_embedding_dim: d.scenario_embedding_dim,
        }
    }
}

impl Architecture {
    pub fn hinet(&self, layout: Layout, switches: Switches) -> HiNetConfig {
        HiNetConfig {
            layout,
            shared_sub_experts: self.shared_sub_experts,
            specific_sub_experts: self.specific_sub_experts,
            sub_expert_hidden: self.sub_expert_hidden.clone(),
            expert_width: self.expert_width,
            cgc_shared_experts: self.cgc_shared_experts,
            cgc_task_experts: self.cgc_task_experts,
            cgc_expert_hidden: self.cgc_expert_hidden.clone(),
            tower_hidden: self.tower_hidden.clone(),
            scenario_embedding_dim: self.scenario_embedding_dim,
            switches,
        }
    }

    pub fn spec(&self, kind: ModelKind, variant: Variant, layout: Layout) -> ModelSpec {
        let hinet = self.hinet(layout, variant.switches());
        match kind {
            ModelKind::Hinet => ModelSpec::Hinet(hinet),
            ModelKind::SharedBottom => ModelSpec::SharedBottom(SharedBottomConfig {
                trunk_width: self.expert_width,
                tower_hidden: self.tower_hidden.clone(),
                ..SharedBottomConfig::new(hinet.layout)
            }),
            ModelKind::Mmoe => ModelSpec::Mmoe(MmoeConfig::matched(&hinet)),
        }
    }
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_repeats() -> usize {
    5
}
fn default_workers() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_kind() -> ModelKind {
    ModelKind::Hinet
}
fn default_variant() -> Variant {
    Variant::Full
}

/// One experiment: data, model, training and output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Base seed; repeat `r` initializes and shuffles with `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Parallel runs in suites and sweeps.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_kind")]
    pub model: ModelKind,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            repeats: default_repeats(),
            workers: default_workers(),
            output_dir: default_output_dir(),
            model: default_kind(),
            variant: default_variant(),
            data: DataConfig::default(),
            architecture: Architecture::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let d = &self.data;
        if !(d.train_frac > 0.0 && d.train_frac < 1.0) || !(d.valid_frac >= 0.0 && d.valid_frac < 1.0) {
            return Err(Error::Config("train_frac must be in (0,1) and valid_frac in [0,1)".into()));
        }
        match (&d.dataset, &d.generator) {
            (Some(path), _) => {
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset `{}` does not exist", path.display())));
                }
            }
            (None, Some(g)) => g.validate()?,
            (None, None) => return Err(Error::Config("data needs either `generator` or `dataset`".into())),
        }
        if self.model != ModelKind::Hinet && self.variant != Variant::Full {
            return Err(Error::Config(format!(
                "variant `{}` only applies to the hinet model",
                self.variant
            )));
        }
        if self.architecture.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        self.train.validate()
    }

    /// Configuration hash recorded in reports. Output location and worker
    /// count do not affect results, so they are left out.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            workers: 1,
            ..self.clone()
        };
        crate::metrics::config_hash(&canonical.to_toml())
    }
}
