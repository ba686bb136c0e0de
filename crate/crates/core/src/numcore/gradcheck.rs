//! Central finite-difference verification of tape gradients.

use super::{GradStore, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Knobs for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step, in `[1e-6, 1e-4]`.
    pub eps: f64,
    /// Skip coordinates where the one-sided slopes disagree by more than
    /// `max_curvature * eps`, i.e. where the step straddles a kink.
    pub mask_kinks: bool,
    pub max_curvature: f64,
    /// Element indices to check; all elements when `None`.
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            mask_kinks: true,
            max_curvature: 100.0,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub masked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| Error::Contract("grad_check loss must be scalar".into()))
}

/// Compares the tape gradient of `f` with respect to `param` against central
/// differences. `f` must build the same deterministic scalar on every call.
pub fn grad_check<F>(
    store: &ParamStore,
    param: ParamId,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.eps) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.eps
        )));
    }
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let mut grads = GradStore::for_store(store);
        tape.backward(loss, &mut grads)?;
        grads.get(param).to_vec()
    };

    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..analytic.len()).collect(),
    };
    let mut work = store.clone();
    let base = eval_loss(&work, &f)?;
    let eps = opts.eps;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        masked: 0,
    };
    for i in coords {
        if i >= analytic.len() {
            return Err(Error::Index {
                what: store.get(param).name.clone(),
                index: i,
                size: analytic.len(),
            });
        }
        let original = work.value(param).data()[i];
        work.value_mut(param).data_mut()[i] = original + eps;
        let plus = eval_loss(&work, &f)?;
        work.value_mut(param).data_mut()[i] = original - eps;
        let minus = eval_loss(&work, &f)?;
        work.value_mut(param).data_mut()[i] = original;

        if opts.mask_kinks {
            let forward = (plus - base) / eps;
            let backward = (base - minus) / eps;
            if (forward - backward).abs() > opts.max_curvature * eps {
                report.masked += 1;
                continue;
            }
        }
        let numeric = (plus - minus) / (2.0 * eps);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}
