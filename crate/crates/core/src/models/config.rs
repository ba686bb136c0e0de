use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{FeatureSchema, TASKS};
use crate::error::{Error, Result};

/// Scenario/task structure and input features shared by every model kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub scenarios: usize,
    /// Tasks per scenario; task `j` is CTR for `j = 0` and CTCVR for `j = 1`.
    pub tasks_per_scenario: Vec<usize>,
    pub features: FeatureSchema,
}

impl Layout {
    pub fn new(scenarios: usize, features: FeatureSchema) -> Self {
        Self {
            scenarios,
            tasks_per_scenario: vec![TASKS; scenarios],
            features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios == 0 {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        if self.tasks_per_scenario.len() != self.scenarios {
            return Err(Error::Config(format!(
                "tasks_per_scenario has {} entries for {} scenarios",
                self.tasks_per_scenario.len(),
                self.scenarios
            )));
        }
        if let Some(bad) = self.tasks_per_scenario.iter().find(|&&n| n == 0 || n > TASKS) {
            return Err(Error::Config(format!("each scenario needs 1..={TASKS} tasks, got {bad}")));
        }
        if self.features.fields.is_empty() || self.features.fields.iter().any(|f| f.vocab == 0 || f.dim == 0) {
            return Err(Error::Config("feature fields need positive vocab and dim".into()));
        }
        let scenario_vocab = self.features.fields.iter().find(|f| f.name == "scenario").map(|f| f.vocab);
        if scenario_vocab.is_some_and(|v| v < self.scenarios) {
            return Err(Error::Config("scenario field vocabulary is smaller than the scenario count".into()));
        }
        Ok(())
    }
}

/// Structural switches toggled by the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub hierarchy: bool,
    pub san: bool,
    pub scenario_gating: bool,
    pub task_gating: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Variant::Full.switches()
    }
}

/// The full model and its five ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoHierarchy,
    NoSan,
    NoTaskGating,
    NoScenarioGating,
    NoBothGating,
}

impl Variant {
    /// Every variant, ablations first in their conventional table order.
    pub const ALL: [Variant; 6] = [
        Variant::NoHierarchy,
        Variant::NoSan,
        Variant::NoTaskGating,
        Variant::NoScenarioGating,
        Variant::NoBothGating,
        Variant::Full,
    ];

    pub fn switches(self) -> Switches {
        let on = Switches {
            hierarchy: true,
            san: true,
            scenario_gating: true,
            task_gating: true,
        };
        match self {
            Variant::Full => on,
            Variant::NoHierarchy => Switches { hierarchy: false, ..on },
            Variant::NoSan => Switches { san: false, ..on },
            Variant::NoTaskGating => Switches { task_gating: false, ..on },
            Variant::NoScenarioGating => Switches {
                scenario_gating: false,
                ..on
            },
            Variant::NoBothGating => Switches {
                scenario_gating: false,
                task_gating: false,
                ..on
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHierarchy => "no_hierarchy",
            Variant::NoSan => "no_san",
            Variant::NoTaskGating => "no_task_gating",
            Variant::NoScenarioGating => "no_scenario_gating",
            Variant::NoBothGating => "no_both_gating",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

fn default_shared_sub_experts() -> usize {
    5
}
fn default_specific_sub_experts() -> usize {
    5
}
fn default_expert_width() -> usize {
    32
}
fn default_cgc_experts() -> usize {
    2
}
fn default_tower_hidden() -> Vec<usize> {
    vec![16]
}
fn default_scenario_embedding_dim() -> usize {
    8
}

/// Architecture of the hierarchical model. Defaults: 5 sub-experts per SEI,
/// 2 shared and 2 task-specific CGC experts, expert width 32.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiNetConfig {
    pub layout: Layout,
    #[serde(default = "default_shared_sub_experts")]
    pub shared_sub_experts: usize,
    /// Sub-experts in each scenario's private SEI.
    #[serde(default = "default_specific_sub_experts")]
    pub specific_sub_experts: usize,
    #[serde(default)]
    pub sub_expert_hidden: Vec<usize>,
    #[serde(default = "default_expert_width")]
    pub expert_width: usize,
    #[serde(default = "default_cgc_experts")]
    pub cgc_shared_experts: usize,
    /// Task-specific experts per task in each scenario's CGC.
    #[serde(default = "default_cgc_experts")]
    pub cgc_task_experts: usize,
    #[serde(default)]
    pub cgc_expert_hidden: Vec<usize>,
    #[serde(default = "default_tower_hidden")]
    pub tower_hidden: Vec<usize>,
    #[serde(default = "default_scenario_embedding_dim")]
    pub scenario_embedding_dim: usize,
    #[serde(default)]
    pub switches: Switches,
}

impl HiNetConfig {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            shared_sub_experts: default_shared_sub_experts(),
            specific_sub_experts: default_specific_sub_experts(),
            sub_expert_hidden: Vec::new(),
            expert_width: default_expert_width(),
            cgc_shared_experts: default_cgc_experts(),
            cgc_task_experts: default_cgc_experts(),
            cgc_expert_hidden: Vec::new(),
            tower_hidden: default_tower_hidden(),
            scenario_embedding_dim: default_scenario_embedding_dim(),
            switches: Switches::default(),
        }
    }

    /// Same architecture with the switches of `variant`; nothing else changes.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            switches: variant.switches(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.expert_width == 0 || self.scenario_embedding_dim == 0 {
            return Err(Error::Config("expert width and scenario embedding dim must be positive".into()));
        }
        if self.switches.hierarchy && (self.shared_sub_experts == 0 || self.specific_sub_experts == 0) {
            return Err(Error::Config("SEI modules need at least one sub-expert".into()));
        }
        if self.cgc_shared_experts + self.cgc_task_experts == 0 {
            return Err(Error::Config("CGC needs at least one expert per task".into()));
        }
        Ok(())
    }
}

fn default_trunk_hidden() -> Vec<usize> {
    vec![64]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedBottomConfig {
    pub layout: Layout,
    #[serde(default = "default_trunk_hidden")]
    pub trunk_hidden: Vec<usize>,
    #[serde(default = "default_expert_width")]
    pub trunk_width: usize,
    #[serde(default = "default_tower_hidden")]
    pub tower_hidden: Vec<usize>,
}

impl SharedBottomConfig {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            trunk_hidden: default_trunk_hidden(),
            trunk_width: default_expert_width(),
            tower_hidden: default_tower_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmoeConfig {
    pub layout: Layout,
    pub experts: usize,
    #[serde(default)]
    pub expert_hidden: Vec<usize>,
    #[serde(default = "default_expert_width")]
    pub expert_width: usize,
    #[serde(default = "default_tower_hidden")]
    pub tower_hidden: Vec<usize>,
}

impl MmoeConfig {
    /// Expert pool sized `K_s + ΣK_i / M` (rounded) to roughly match the
    /// scenario layer of `hinet`.
    pub fn matched(hinet: &HiNetConfig) -> Self {
        let m = hinet.layout.scenarios.max(1);
        let specific_mean = (hinet.specific_sub_experts * m + m / 2) / m;
        Self {
            layout: hinet.layout.clone(),
            experts: hinet.shared_sub_experts + specific_mean,
            expert_hidden: hinet.sub_expert_hidden.clone(),
            expert_width: hinet.expert_width,
            tower_hidden: hinet.tower_hidden.clone(),
        }
    }
}

/// Serializable description of any model this crate can build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Hinet(HiNetConfig),
    SharedBottom(SharedBottomConfig),
    Mmoe(MmoeConfig),
}

impl ModelSpec {
    pub fn layout(&self) -> &Layout {
        match self {
            ModelSpec::Hinet(c) => &c.layout,
            ModelSpec::SharedBottom(c) => &c.layout,
            ModelSpec::Mmoe(c) => &c.layout,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Hinet(_) => ModelKind::Hinet,
            ModelSpec::SharedBottom(_) => ModelKind::SharedBottom,
            ModelSpec::Mmoe(_) => ModelKind::Mmoe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hinet,
    SharedBottom,
    Mmoe,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hinet => "hinet",
            ModelKind::SharedBottom => "shared_bottom",
            ModelKind::Mmoe => "mmoe",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinet" => Ok(ModelKind::Hinet),
            "shared_bottom" => Ok(ModelKind::SharedBottom),
            "mmoe" => Ok(ModelKind::Mmoe),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}
