use rand::Rng;

use super::mlp::chain_widths;
use super::{GatingNetwork, Mlp};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

/// Customized gate control: task-shared experts plus task-specific experts,
/// mixed per task by a gate over the layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct CgcModule {
    pub shared_experts: Vec<Mlp>,
    pub task_experts: Vec<Vec<Mlp>>,
    pub gates: Vec<GatingNetwork>,
}

#[derive(Debug, Clone, Copy)]
pub struct CgcOutput {
    pub output: Var,
    pub gate_weights: Var,
}

impl CgcModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_width: usize,
        shared: usize,
        task_specific: &[usize],
        hidden: &[usize],
        out_width: usize,
        gated: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let widths = chain_widths(in_width, hidden, out_width);
        let shared_experts = (0..shared)
            .map(|k| Mlp::new(store, &format!("{prefix}.shared{k}"), &widths, true, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut task_experts = Vec::with_capacity(task_specific.len());
        let mut gates = Vec::with_capacity(task_specific.len());
        for (j, &n) in task_specific.iter().enumerate() {
            if shared + n == 0 {
                return Err(Error::Config(format!("CGC `{prefix}` task {j} has no experts")));
            }
            task_experts.push(
                (0..n)
                    .map(|k| Mlp::new(store, &format!("{prefix}.task{j}.expert{k}"), &widths, true, rng))
                    .collect::<Result<Vec<_>>>()?,
            );
            gates.push(GatingNetwork::new(
                store,
                &format!("{prefix}.task{j}.gate"),
                in_width,
                shared + n,
                gated,
                rng,
            )?);
        }
        Ok(Self {
            shared_experts,
            task_experts,
            gates,
        })
    }

    pub fn tasks(&self) -> usize {
        self.gates.len()
    }

    /// Tower inputs for every task. Shared experts are evaluated once.
    pub fn forward_all(&self, tape: &mut Tape<'_>, c: Var) -> Result<Vec<CgcOutput>> {
        let shared = self
            .shared_experts
            .iter()
            .map(|e| e.forward(tape, c))
            .collect::<Result<Vec<_>>>()?;
        (0..self.tasks())
            .map(|j| self.forward_task_with(tape, c, j, &shared))
            .collect()
    }

    /// Tower input for one task.
    pub fn forward(&self, tape: &mut Tape<'_>, c: Var, task: usize) -> Result<CgcOutput> {
        if task >= self.tasks() {
            return Err(Error::Index {
                what: "task".into(),
                index: task,
                size: self.tasks(),
            });
        }
        let shared = self
            .shared_experts
            .iter()
            .map(|e| e.forward(tape, c))
            .collect::<Result<Vec<_>>>()?;
        self.forward_task_with(tape, c, task, &shared)
    }

    fn forward_task_with(&self, tape: &mut Tape<'_>, c: Var, task: usize, shared: &[Var]) -> Result<CgcOutput> {
        // Stack order: shared experts, then task experts.
        let mut stack = shared.to_vec();
        for e in &self.task_experts[task] {
            stack.push(e.forward(tape, c)?);
        }
        let gate_weights = self.gates[task].forward(tape, c)?;
        let output = tape.mix(gate_weights, &stack)?;
        Ok(CgcOutput { output, gate_weights })
    }
}
