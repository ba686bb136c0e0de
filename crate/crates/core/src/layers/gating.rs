use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Linear map followed by a softmax: `softmax(W · input)`, `W` is `[outputs × inputs]`.
///
/// A gate built with `learned = false` has no weights and returns the uniform
/// vector `1/outputs`, which is how the gate-removal ablations are realized.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub weight: Option<ParamId>,
    pub n_inputs: usize,
    pub n_outputs: usize,
}

impl GatingNetwork {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        n_inputs: usize,
        n_outputs: usize,
        learned: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if n_outputs == 0 {
            return Err(Error::Config(format!("gate `{name}` has no outputs")));
        }
        let weight = if learned {
            Some(store.add_init(
                format!("{name}.w"),
                vec![n_outputs, n_inputs],
                Init::GlorotUniform {
                    fan_in: n_inputs,
                    fan_out: n_outputs,
                },
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            weight,
            n_inputs,
            n_outputs,
        })
    }

    pub fn is_learned(&self) -> bool {
        self.weight.is_some()
    }

    /// Gate weights: `[rows × outputs]` when learned, `[1 × outputs]` when uniform.
    pub fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        match self.weight {
            Some(w) => {
                let wv = tape.param(w);
                let logits = tape.matmul_bt(input, wv)?;
                tape.softmax(logits)
            }
            None => {
                let n = self.n_outputs;
                Ok(tape.input(Tensor::matrix(1, n, vec![1.0 / n as f64; n])?))
            }
        }
    }
}
