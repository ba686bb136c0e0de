use rand::Rng;

use super::mlp::chain_widths;
use super::{GatingNetwork, Mlp};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

/// Sub-expert integration: `K` MLP sub-experts mixed by a gate that reads the
/// raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct SeiModule {
    pub sub_experts: Vec<Mlp>,
    pub gate: GatingNetwork,
}

#[derive(Debug, Clone, Copy)]
pub struct SeiOutput {
    pub output: Var,
    pub gate_weights: Var,
}

impl SeiModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_width: usize,
        sub_experts: usize,
        hidden: &[usize],
        out_width: usize,
        gated: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sub_experts == 0 {
            return Err(Error::Config(format!("SEI `{prefix}` needs at least one sub-expert")));
        }
        let widths = chain_widths(in_width, hidden, out_width);
        let experts = (0..sub_experts)
            .map(|k| Mlp::new(store, &format!("{prefix}.expert{k}"), &widths, true, rng))
            .collect::<Result<Vec<_>>>()?;
        let gate = GatingNetwork::new(store, &format!("{prefix}.gate"), in_width, sub_experts, gated, rng)?;
        Ok(Self {
            sub_experts: experts,
            gate,
        })
    }

    pub fn out_width(&self) -> usize {
        self.sub_experts[0].out_width()
    }

    /// `Σ_k softmax(W·x)_k · Q_k(x)`
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<SeiOutput> {
        let outs = self
            .sub_experts
            .iter()
            .map(|e| e.forward(tape, x))
            .collect::<Result<Vec<_>>>()?;
        let gate_weights = self.gate.forward(tape, x)?;
        let output = tape.mix(gate_weights, &outs)?;
        Ok(SeiOutput { output, gate_weights })
    }
}
