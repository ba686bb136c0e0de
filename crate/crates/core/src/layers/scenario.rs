use rand::Rng;

use super::san::other_scenarios;
use super::{San, SeiModule};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

/// Shared SEI, one private SEI per scenario, and optional scenario attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLayer {
    pub shared: SeiModule,
    pub specific: Vec<SeiModule>,
    pub san: Option<San>,
}

/// Everything the scenario layer computed for one scenario's rows.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    /// `concat(G, S_i, A_i)`, or `concat(G, S_i)` without attention.
    pub c: Var,
    pub shared_gate: Var,
    /// Gate weights of every specific SEI that was evaluated, by scenario.
    pub specific_gates: Vec<(usize, Var)>,
    pub san_weights: Option<Var>,
}

/// Knobs for [`ScenarioLayer::new`].
#[derive(Debug, Clone)]
pub struct ScenarioLayerSpec<'a> {
    pub scenarios: usize,
    pub in_width: usize,
    pub shared_sub_experts: usize,
    pub specific_sub_experts: usize,
    pub hidden: &'a [usize],
    pub expert_width: usize,
    pub scenario_embedding_dim: usize,
    pub gated: bool,
    pub san: bool,
}

impl ScenarioLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, spec: &ScenarioLayerSpec<'_>, rng: &mut R) -> Result<Self> {
        if spec.scenarios == 0 {
            return Err(Error::Config("scenario layer needs at least one scenario".into()));
        }
        let shared = SeiModule::new(
            store,
            &format!("{prefix}.shared"),
            spec.in_width,
            spec.shared_sub_experts,
            spec.hidden,
            spec.expert_width,
            spec.gated,
            rng,
        )?;
        let specific = (0..spec.scenarios)
            .map(|i| {
                SeiModule::new(
                    store,
                    &format!("{prefix}.specific{i}"),
                    spec.in_width,
                    spec.specific_sub_experts,
                    spec.hidden,
                    spec.expert_width,
                    spec.gated,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        // One scenario leaves nothing to attend to.
        let san = if spec.san && spec.scenarios > 1 {
            Some(San::new(store, &format!("{prefix}.san"), spec.scenarios, spec.scenario_embedding_dim, rng)?)
        } else {
            None
        };
        Ok(Self { shared, specific, san })
    }

    pub fn scenarios(&self) -> usize {
        self.specific.len()
    }

    /// Width of `C_i`.
    pub fn out_width(&self) -> usize {
        let parts = if self.san.is_some() { 3 } else { 2 };
        parts * self.shared.out_width()
    }

    /// Computes `C_i` for rows `x` that all belong to `scenario`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, scenario: usize) -> Result<ScenarioOutput> {
        let m = self.scenarios();
        if scenario >= m {
            return Err(Error::Index {
                what: "scenario".into(),
                index: scenario,
                size: m,
            });
        }
        let g = self.shared.forward(tape, x)?;
        let mut specific_gates = Vec::new();
        match &self.san {
            Some(san) => {
                let mut reps = Vec::with_capacity(m);
                for (i, sei) in self.specific.iter().enumerate() {
                    let out = sei.forward(tape, x)?;
                    specific_gates.push((i, out.gate_weights));
                    reps.push(out.output);
                }
                let others: Vec<Var> = other_scenarios(scenario, m).into_iter().map(|o| reps[o]).collect();
                let (a, weights) = san.forward(tape, scenario, &others)?;
                let c = tape.concat(&[g.output, reps[scenario], a])?;
                Ok(ScenarioOutput {
                    c,
                    shared_gate: g.gate_weights,
                    specific_gates,
                    san_weights: Some(weights),
                })
            }
            None => {
                let s = self.specific[scenario].forward(tape, x)?;
                specific_gates.push((scenario, s.gate_weights));
                let c = tape.concat(&[g.output, s.output])?;
                Ok(ScenarioOutput {
                    c,
                    shared_gate: g.gate_weights,
                    specific_gates,
                    san_weights: None,
                })
            }
        }
    }
}
