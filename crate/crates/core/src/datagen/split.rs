use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::ExampleRecord;
use crate::error::{Error, Result};

/// Stratified split: within every scenario, `round(train_frac · n)` records
/// (clamped to leave at least one on each side) go to the training half.
/// Both halves keep the input order.
pub fn split(records: &[ExampleRecord], train_frac: f64, seed: u64) -> Result<(Vec<ExampleRecord>, Vec<ExampleRecord>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac must be in (0,1), got {train_frac}")));
    }
    let mut by_scenario: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_scenario.entry(r.scenario).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; records.len()];
    for (scenario, mut idx) in by_scenario {
        if idx.len() < 2 {
            return Err(Error::Contract(format!(
                "scenario {scenario} has {} record(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, t) in records.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((train, test))
}
