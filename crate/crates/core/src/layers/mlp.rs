use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, in_width: usize, out_width: usize, rng: &mut R) -> Result<Self> {
        let weight = store.add_init(
            format!("{prefix}.w"),
            vec![out_width, in_width],
            Init::HeUniform { fan_in: in_width },
            rng,
        )?;
        let bias = store.add_init(format!("{prefix}.b"), vec![out_width], Init::Zeros, rng)?;
        Ok(Self {
            weight,
            bias,
            in_width,
            out_width,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let h = tape.matmul_bt(x, w)?;
        tape.add_bias(h, b)
    }
}

/// Stack of dense layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Whether the last layer is also followed by ReLU.
    pub activate_last: bool,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first: `[in, h1, ..., out]`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        activate_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "mlp `{prefix}` needs at least two positive widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{prefix}.layer{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activate_last })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last || self.activate_last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Widths for an MLP from `input` through `hidden` to `output`.
pub fn chain_widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Task head: MLP ending in one logit, then a sigmoid. Returns `[n × 1]` probabilities.
pub fn tower_forward(tape: &mut Tape<'_>, tower: &Mlp, t: Var) -> Result<Var> {
    if tower.out_width() != 1 {
        return Err(Error::Config(format!(
            "tower must end in width 1, got {}",
            tower.out_width()
        )));
    }
    let logit = tower.forward(tape, t)?;
    Ok(tape.sigmoid(logit))
}
