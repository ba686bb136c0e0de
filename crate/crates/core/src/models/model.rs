use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{HiNetConfig, Layout, MmoeConfig, ModelSpec, SharedBottomConfig, Variant};
use crate::datagen::ExampleRecord;
use crate::error::{Error, Result};
use crate::layers::{
    chain_widths, tower_forward, CgcModule, FeatureEmbeddings, GatingNetwork, Mlp, ScenarioLayer, ScenarioLayerSpec,
};
use crate::numcore::{ParamStore, Tape, Var};

/// Which gate produced a probability vector in a [`Forward`] trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    SharedSei,
    SpecificSei(usize),
    San,
    Cgc(usize),
    Mmoe(usize),
}

/// Result of running one scenario's rows through a model.
#[derive(Debug, Clone)]
pub struct Forward {
    /// One `[n × 1]` probability column per task of the scenario.
    pub probs: Vec<Var>,
    /// Every gate evaluated on the way.
    pub gates: Vec<(GateKind, Var)>,
}

/// Per-task probabilities for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub scenario: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct HiNetNet {
    embeddings: FeatureEmbeddings,
    scenario_layer: Option<ScenarioLayer>,
    cgc: Vec<CgcModule>,
    towers: Vec<Vec<Mlp>>,
}

#[derive(Debug, Clone, PartialEq)]
struct SharedBottomNet {
    embeddings: FeatureEmbeddings,
    trunk: Mlp,
    towers: Vec<Vec<Mlp>>,
}

#[derive(Debug, Clone, PartialEq)]
struct MmoeNet {
    embeddings: FeatureEmbeddings,
    experts: Vec<Mlp>,
    gates: Vec<Vec<GatingNetwork>>,
    towers: Vec<Vec<Mlp>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Network {
    HiNet(HiNetNet),
    SharedBottom(SharedBottomNet),
    Mmoe(MmoeNet),
}

/// A multi-scenario multi-task model: its spec, parameters and structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    net: Network,
}

fn towers(store: &mut ParamStore, layout: &Layout, in_width: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Mlp>>> {
    (0..layout.scenarios)
        .map(|i| {
            (0..layout.tasks_per_scenario[i])
                .map(|j| Mlp::new(store, &format!("tower.scenario{i}.task{j}"), &chain_widths(in_width, hidden, 1), false, rng))
                .collect()
        })
        .collect()
}

impl Model {
    /// Builds and initializes a model. All structural errors surface here.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        spec.layout().validate()?;
        let net = match spec {
            ModelSpec::Hinet(cfg) => Network::HiNet(build_hinet(&mut store, cfg, &mut rng)?),
            ModelSpec::SharedBottom(cfg) => Network::SharedBottom(build_shared_bottom(&mut store, cfg, &mut rng)?),
            ModelSpec::Mmoe(cfg) => Network::Mmoe(build_mmoe(&mut store, cfg, &mut rng)?),
        };
        Ok(Self {
            spec: spec.clone(),
            store,
            net,
        })
    }

    /// Builds `cfg` with the switches of the named variant.
    pub fn build_ablation(cfg: &HiNetConfig, variant: &str, seed: u64) -> Result<Self> {
        let variant: Variant = variant.parse()?;
        Self::build(&ModelSpec::Hinet(cfg.with_variant(variant)), seed)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        self.spec.layout()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces every weight, requiring identical names and shapes.
    pub fn load_params(&mut self, other: ParamStore) -> Result<()> {
        if other.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: model has {}, bundle has {}",
                self.store.len(),
                other.len()
            )));
        }
        for ((_, mine), (_, theirs)) in self.store.iter().zip(other.iter()) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{}` {:?} does not match bundle entry `{}` {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        self.store = other;
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Whether this is a hierarchical model with scenario attention.
    pub fn has_attention(&self) -> bool {
        matches!(&self.net, Network::HiNet(n) if n.scenario_layer.as_ref().is_some_and(|l| l.san.is_some()))
    }

    /// Runs rows that all belong to `scenario`. Parameters are read through
    /// `tape`, which must have been created over a store with this model's
    /// parameter names (normally [`Model::params`]).
    pub fn forward_scenario(&self, tape: &mut Tape<'_>, scenario: usize, records: &[&ExampleRecord]) -> Result<Forward> {
        let layout = self.layout();
        if scenario >= layout.scenarios {
            return Err(Error::Index {
                what: "scenario".into(),
                index: scenario,
                size: layout.scenarios,
            });
        }
        if let Some(r) = records.iter().find(|r| r.scenario != scenario) {
            return Err(Error::Contract(format!(
                "record of scenario {} in a scenario-{scenario} group",
                r.scenario
            )));
        }
        match &self.net {
            Network::HiNet(net) => hinet_forward(net, tape, scenario, records),
            Network::SharedBottom(net) => shared_bottom_forward(net, tape, scenario, records),
            Network::Mmoe(net) => mmoe_forward(net, tape, scenario, records),
        }
    }

    /// Scores records in any scenario order; output order matches input.
    pub fn predict(&self, records: &[ExampleRecord]) -> Result<Vec<ModelOutput>> {
        const CHUNK: usize = 2048;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups.entry(r.scenario).or_default().push(i);
        }
        let mut out: Vec<Option<ModelOutput>> = vec![None; records.len()];
        for (scenario, idx) in groups {
            for chunk in idx.chunks(CHUNK) {
                let rows: Vec<&ExampleRecord> = chunk.iter().map(|&i| &records[i]).collect();
                let mut tape = Tape::new(&self.store);
                let fwd = self.forward_scenario(&mut tape, scenario, &rows)?;
                for (pos, &i) in chunk.iter().enumerate() {
                    out[i] = Some(ModelOutput {
                        scenario,
                        probs: fwd.probs.iter().map(|&p| tape.value(p).data()[pos]).collect(),
                    });
                }
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every record is scored")).collect())
    }

    /// Attention weights scenario `scenario` assigns to the other scenarios
    /// (ascending order, `scenario` removed), or `None` without attention.
    pub fn attention_weights(&self, scenario: usize) -> Result<Option<Vec<f64>>> {
        let Network::HiNet(net) = &self.net else {
            return Ok(None);
        };
        let Some(san) = net.scenario_layer.as_ref().and_then(|l| l.san.as_ref()) else {
            return Ok(None);
        };
        let mut tape = Tape::new(&self.store);
        let w = san.weights(&mut tape, scenario)?;
        Ok(Some(tape.value(w).data().to_vec()))
    }

    /// Width of the input each scenario's CGC consumes (HiNet only).
    pub fn cgc_input_width(&self) -> Option<usize> {
        match &self.net {
            Network::HiNet(net) => Some(match &net.scenario_layer {
                Some(layer) => layer.out_width(),
                None => net.embeddings.width(),
            }),
            _ => None,
        }
    }
}

fn build_hinet(store: &mut ParamStore, cfg: &HiNetConfig, rng: &mut ChaCha8Rng) -> Result<HiNetNet> {
    cfg.validate()?;
    let layout = &cfg.layout;
    let sw = cfg.switches;
    let embeddings = FeatureEmbeddings::new(store, "embedding", &layout.features, rng)?;
    let scenario_layer = if sw.hierarchy {
        Some(ScenarioLayer::new(
            store,
            "scenario_layer",
            &ScenarioLayerSpec {
                scenarios: layout.scenarios,
                in_width: embeddings.width(),
                shared_sub_experts: cfg.shared_sub_experts,
                specific_sub_experts: cfg.specific_sub_experts,
                hidden: &cfg.sub_expert_hidden,
                expert_width: cfg.expert_width,
                scenario_embedding_dim: cfg.scenario_embedding_dim,
                gated: sw.scenario_gating,
                san: sw.san,
            },
            rng,
        )?)
    } else {
        None
    };
    let cgc_in = scenario_layer.as_ref().map_or(embeddings.width(), ScenarioLayer::out_width);
    let cgc = (0..layout.scenarios)
        .map(|i| {
            CgcModule::new(
                store,
                &format!("task_layer.scenario{i}"),
                cgc_in,
                cfg.cgc_shared_experts,
                &vec![cfg.cgc_task_experts; layout.tasks_per_scenario[i]],
                &cfg.cgc_expert_hidden,
                cfg.expert_width,
                sw.task_gating,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let towers = towers(store, layout, cfg.expert_width, &cfg.tower_hidden, rng)?;
    Ok(HiNetNet {
        embeddings,
        scenario_layer,
        cgc,
        towers,
    })
}

fn hinet_forward(net: &HiNetNet, tape: &mut Tape<'_>, scenario: usize, records: &[&ExampleRecord]) -> Result<Forward> {
    let x = net.embeddings.embed(tape, records)?;
    let mut gates = Vec::new();
    let c = match &net.scenario_layer {
        Some(layer) => {
            let out = layer.forward(tape, x, scenario)?;
            gates.push((GateKind::SharedSei, out.shared_gate));
            gates.extend(out.specific_gates.iter().map(|&(m, g)| (GateKind::SpecificSei(m), g)));
            if let Some(w) = out.san_weights {
                gates.push((GateKind::San, w));
            }
            out.c
        }
        None => x,
    };
    let task_inputs = net.cgc[scenario].forward_all(tape, c)?;
    let mut probs = Vec::with_capacity(task_inputs.len());
    for (j, t) in task_inputs.iter().enumerate() {
        gates.push((GateKind::Cgc(j), t.gate_weights));
        probs.push(tower_forward(tape, &net.towers[scenario][j], t.output)?);
    }
    Ok(Forward { probs, gates })
}

fn build_shared_bottom(store: &mut ParamStore, cfg: &SharedBottomConfig, rng: &mut ChaCha8Rng) -> Result<SharedBottomNet> {
    let embeddings = FeatureEmbeddings::new(store, "embedding", &cfg.layout.features, rng)?;
    let trunk = Mlp::new(
        store,
        "trunk",
        &chain_widths(embeddings.width(), &cfg.trunk_hidden, cfg.trunk_width),
        true,
        rng,
    )?;
    let towers = towers(store, &cfg.layout, cfg.trunk_width, &cfg.tower_hidden, rng)?;
    Ok(SharedBottomNet {
        embeddings,
        trunk,
        towers,
    })
}

fn shared_bottom_forward(net: &SharedBottomNet, tape: &mut Tape<'_>, scenario: usize, records: &[&ExampleRecord]) -> Result<Forward> {
    let x = net.embeddings.embed(tape, records)?;
    let h = net.trunk.forward(tape, x)?;
    let probs = net.towers[scenario]
        .iter()
        .map(|t| tower_forward(tape, t, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forward {
        probs,
        gates: Vec::new(),
    })
}

fn build_mmoe(store: &mut ParamStore, cfg: &MmoeConfig, rng: &mut ChaCha8Rng) -> Result<MmoeNet> {
    if cfg.experts == 0 {
        return Err(Error::Config("MMoE needs at least one expert".into()));
    }
    let embeddings = FeatureEmbeddings::new(store, "embedding", &cfg.layout.features, rng)?;
    let widths = chain_widths(embeddings.width(), &cfg.expert_hidden, cfg.expert_width);
    let experts = (0..cfg.experts)
        .map(|k| Mlp::new(store, &format!("expert{k}"), &widths, true, rng))
        .collect::<Result<Vec<_>>>()?;
    // Every (scenario, task) pair is its own task with its own gate.
    let gates = (0..cfg.layout.scenarios)
        .map(|i| {
            (0..cfg.layout.tasks_per_scenario[i])
                .map(|j| {
                    GatingNetwork::new(
                        store,
                        &format!("gate.scenario{i}.task{j}"),
                        embeddings.width(),
                        cfg.experts,
                        true,
                        rng,
                    )
                })
                .collect()
        })
        .collect::<Result<Vec<Vec<_>>>>()?;
    let towers = towers(store, &cfg.layout, cfg.expert_width, &cfg.tower_hidden, rng)?;
    Ok(MmoeNet {
        embeddings,
        experts,
        gates,
        towers,
    })
}

fn mmoe_forward(net: &MmoeNet, tape: &mut Tape<'_>, scenario: usize, records: &[&ExampleRecord]) -> Result<Forward> {
    let x = net.embeddings.embed(tape, records)?;
    let outs = net
        .experts
        .iter()
        .map(|e| e.forward(tape, x))
        .collect::<Result<Vec<_>>>()?;
    let mut probs = Vec::new();
    let mut gates = Vec::new();
    for (j, gate) in net.gates[scenario].iter().enumerate() {
        let w = gate.forward(tape, x)?;
        gates.push((GateKind::Mmoe(j), w));
        let mixed = tape.mix(w, &outs)?;
        probs.push(tower_forward(tape, &net.towers[scenario][j], mixed)?);
    }
    Ok(Forward { probs, gates })
}
