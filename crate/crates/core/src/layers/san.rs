use rand::Rng;

use super::{EmbeddingTable, GatingNetwork};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

/// Scenarios other than `scenario`, ascending. Position `k` of scenario
/// `scenario`'s attention vector refers to element `k` of this list.
pub fn other_scenarios(scenario: usize, scenarios: usize) -> Vec<usize> {
    (0..scenarios).filter(|&m| m != scenario).collect()
}

/// Attention over other scenarios' specific representations, driven only by
/// a learned embedding of the scenario indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct San {
    /// Indicator embeddings, one row per scenario.
    pub scenario_embedding: EmbeddingTable,
    /// Per-scenario gate with `M − 1` outputs over `d` inputs.
    pub gates: Vec<GatingNetwork>,
}

impl San {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, scenarios: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if scenarios < 2 {
            return Err(Error::Config("attention over other scenarios needs at least two scenarios".into()));
        }
        let scenario_embedding = EmbeddingTable::new(store, &format!("{prefix}.indicator"), scenarios, dim, rng)?;
        let gates = (0..scenarios)
            .map(|i| GatingNetwork::new(store, &format!("{prefix}.scenario{i}.gate"), dim, scenarios - 1, true, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario_embedding,
            gates,
        })
    }

    /// Attention weights `[1 × (M − 1)]` for `scenario`.
    pub fn weights(&self, tape: &mut Tape<'_>, scenario: usize) -> Result<Var> {
        let gate = self.gates.get(scenario).ok_or_else(|| Error::Index {
            what: "scenario".into(),
            index: scenario,
            size: self.gates.len(),
        })?;
        let emb = self.scenario_embedding.lookup(tape, &[scenario])?;
        gate.forward(tape, emb)
    }

    /// Weighted sum of the other scenarios' representations, given in
    /// [`other_scenarios`] order. Returns `(A_i, weights)`.
    pub fn forward(&self, tape: &mut Tape<'_>, scenario: usize, others: &[Var]) -> Result<(Var, Var)> {
        let weights = self.weights(tape, scenario)?;
        let a = san_forward(tape, &self.gates[scenario], weights, others)?;
        Ok((a, weights))
    }
}

/// Mixes `others` with precomputed SAN `weights`, checking the gate width.
pub fn san_forward(tape: &mut Tape<'_>, gate: &GatingNetwork, weights: Var, others: &[Var]) -> Result<Var> {
    if others.len() != gate.n_outputs {
        return Err(Error::shape("san", &[others.len()], &[gate.n_outputs]));
    }
    tape.mix(weights, others)
}
