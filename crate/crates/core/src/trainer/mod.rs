//! Weighted multi-scenario multi-task training with early stopping.

mod checkpoint;

pub use checkpoint::{load_model, restore_trainer, save_model, save_trainer, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::ExampleRecord;
use crate::error::{Error, Result};
use crate::metrics::{self, LOGLOSS_CLAMP};
use crate::models::{Layout, Model, ModelOutput};
use crate::numcore::{GradStore, Optimizer, OptimizerConfig, ParamStore, Tape, Var};

/// How the per-scenario loss weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossWeights {
    /// `1 / p_i`, with `p_i` the scenario's share of the training records.
    AutoReciprocal,
    /// `weights[i][j]` for scenario `i`, task `j`.
    Explicit { weights: Vec<Vec<f64>> },
}

fn default_batch_size() -> usize {
    256
}
fn default_max_epochs() -> usize {
    20
}
fn default_patience() -> usize {
    3
}
fn default_loss_weights() -> LossWeights {
    LossWeights::AutoReciprocal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss_weights")]
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: 0,
            loss_weights: default_loss_weights(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

/// `λ_i = 1 / p_i` per scenario, from the training split only.
pub fn compute_loss_weights(train: &[ExampleRecord], scenarios: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; scenarios];
    for r in train {
        if r.scenario >= scenarios {
            return Err(Error::Index {
                what: "scenario".into(),
                index: r.scenario,
                size: scenarios,
            });
        }
        counts[r.scenario] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!(
            "scenario {empty} has no training records; drop it from the layout explicitly"
        )));
    }
    let total = train.len() as f64;
    Ok(counts.iter().map(|&c| total / c as f64).collect())
}

/// Full `λ[i][j]` table for `layout`.
pub fn resolve_loss_weights(policy: &LossWeights, train: &[ExampleRecord], layout: &Layout) -> Result<Vec<Vec<f64>>> {
    match policy {
        LossWeights::AutoReciprocal => {
            let per = compute_loss_weights(train, layout.scenarios)?;
            Ok(per.iter().zip(&layout.tasks_per_scenario).map(|(&w, &n)| vec![w; n]).collect())
        }
        LossWeights::Explicit { weights } => {
            let ok = weights.len() == layout.scenarios
                && weights.iter().zip(&layout.tasks_per_scenario).all(|(w, &n)| w.len() == n)
                && weights.iter().flatten().all(|w| w.is_finite() && *w >= 0.0);
            if !ok {
                return Err(Error::Config("explicit loss weights must be finite, ≥ 0 and match the layout".into()));
            }
            Ok(weights.clone())
        }
    }
}

/// `Σ_i Σ_j λ_ij · Σ_{r ∈ i} CE(r, j) / |batch|` on `tape`. Each record only
/// contributes to its own scenario's tasks.
pub fn batch_loss(model: &Model, tape: &mut Tape<'_>, batch: &[&ExampleRecord], weights: &[Vec<f64>]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&ExampleRecord>> = BTreeMap::new();
    for &r in batch {
        groups.entry(r.scenario).or_default().push(r);
    }
    let n = batch.len() as f64;
    let mut total: Option<Var> = None;
    for (scenario, rows) in groups {
        let fwd = model.forward_scenario(tape, scenario, &rows)?;
        for (task, &p) in fwd.probs.iter().enumerate() {
            let y: Vec<f64> = rows.iter().map(|r| r.label(task)).collect();
            let ce = tape.bce(p, &y)?;
            let s = tape.sum(ce);
            let term = tape.scale(s, weights[scenario][task] / n);
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
    }
    Ok(total.expect("nonempty batch has a term"))
}

/// The training objective evaluated on precomputed predictions.
fn objective_from_outputs(records: &[ExampleRecord], outputs: &[ModelOutput], weights: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (r, o) in records.iter().zip(outputs) {
        for (task, &p) in o.probs.iter().enumerate() {
            let p = p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            let ce = if r.label(task) > 0.5 { -p.ln() } else { -(1.0 - p).ln() };
            total += weights[r.scenario][task] * ce;
        }
    }
    total / records.len() as f64
}

/// The weighted objective over a whole record set, as if it were one batch.
pub fn objective(model: &Model, records: &[ExampleRecord], weights: &[Vec<f64>]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("objective of an empty record set".into()));
    }
    Ok(objective_from_outputs(records, &model.predict(records)?, weights))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the per-batch objective, weighted by batch size.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Validation AUC per (scenario, task) in scenario-major order.
    pub valid_auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch; not part of [`TrainLog::to_csv`].
    pub seconds: Vec<f64>,
}

impl TrainLog {
    /// `epoch,train_loss,valid_loss,auc_s{i}_t{j}...`; deterministic for a
    /// fixed config and seed.
    pub fn to_csv(&self, layout: &Layout) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss");
        for (s, &n) in layout.tasks_per_scenario.iter().enumerate() {
            for t in 0..n {
                let _ = write!(out, ",auc_s{s}_t{t}");
            }
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.17}"));
        for e in &self.epochs {
            let _ = write!(out, "{},{:.17},{}", e.epoch, e.train_loss, fmt(e.valid_loss));
            for a in &e.valid_auc {
                let _ = write!(out, ",{}", fmt(*a));
            }
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for (e, s) in self.seconds.iter().enumerate() {
            let _ = writeln!(out, "{e},{s:.3}");
        }
        out
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Training state between epochs; everything needed to resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub(crate) model: Model,
    pub(crate) config: TrainConfig,
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) optimizer: Optimizer,
    pub(crate) next_epoch: usize,
    pub(crate) best_loss: Option<f64>,
    pub(crate) best_params: Option<ParamStore>,
    pub(crate) since_best: usize,
    pub(crate) finished: bool,
    pub(crate) log: TrainLog,
}

impl Trainer {
    pub fn new(model: Model, train: &[ExampleRecord], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let weights = resolve_loss_weights(&config.loss_weights, train, model.layout())?;
        let optimizer = Optimizer::new(config.optimizer, model.params());
        Ok(Self {
            model,
            config,
            weights,
            optimizer,
            next_epoch: 0,
            best_loss: None,
            best_params: None,
            since_best: 0,
            finished: false,
            log: TrainLog::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn loss_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.finished || self.next_epoch >= self.config.max_epochs
    }

    /// One SGD/Adam update on `batch`; returns the batch objective.
    pub fn step(&mut self, batch: &[&ExampleRecord], epoch: usize, index: usize) -> Result<f64> {
        let mut grads = GradStore::for_store(self.model.params());
        let loss = {
            let mut tape = Tape::new(self.model.params());
            let loss = batch_loss(&self.model, &mut tape, batch, &self.weights)?;
            let value = tape.value(loss).item().expect("batch loss is a scalar");
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: index });
            }
            tape.backward(loss, &mut grads)?;
            value
        };
        self.optimizer.step(self.model.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Runs one epoch over a shuffled copy of `train`, then validates.
    pub fn run_epoch(&mut self, train: &[ExampleRecord], valid: &[ExampleRecord]) -> Result<()> {
        let epoch = self.next_epoch;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        // The shuffle depends only on (seed, epoch), so a resumed run sees the same batches.
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (index, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&ExampleRecord> = chunk.iter().map(|&i| &train[i]).collect();
            weighted += self.step(&batch, epoch, index)? * batch.len() as f64;
        }
        let train_loss = if train.is_empty() { 0.0 } else { weighted / train.len() as f64 };

        let (valid_loss, valid_auc) = if valid.is_empty() {
            (None, Vec::new())
        } else {
            let outputs = self.model.predict(valid)?;
            let loss = objective_from_outputs(valid, &outputs, &self.weights);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
            }
            (Some(loss), cell_aucs(self.model.layout(), valid, &outputs))
        };
        self.log.epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
            valid_auc,
        });
        self.log.seconds.push(started.elapsed().as_secs_f64());
        self.next_epoch += 1;

        if let Some(loss) = valid_loss {
            if self.best_loss.is_none_or(|b| loss < b) {
                self.best_loss = Some(loss);
                self.best_params = Some(self.model.params().clone());
                self.log.best_epoch = Some(epoch);
                self.since_best = 0;
            } else {
                self.since_best += 1;
                if self.since_best > self.config.patience {
                    self.finished = true;
                    self.log.stopped_early = true;
                }
            }
        } else {
            self.log.best_epoch = Some(epoch);
        }
        Ok(())
    }

    /// Trains until `max_epochs` or early stopping.
    pub fn run(&mut self, train: &[ExampleRecord], valid: &[ExampleRecord]) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(train, valid)?;
        }
        Ok(())
    }

    /// The model with the best-validation parameters restored, and the log.
    pub fn finish(self) -> (Model, TrainLog) {
        let mut model = self.model;
        if let Some(best) = self.best_params {
            model.load_params(best).expect("best parameters come from this model");
        }
        (model, self.log)
    }
}

fn cell_aucs(layout: &Layout, records: &[ExampleRecord], outputs: &[ModelOutput]) -> Vec<Option<f64>> {
    let mut out = Vec::new();
    for s in 0..layout.scenarios {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].scenario == s).collect();
        for t in 0..layout.tasks_per_scenario[s] {
            let scores: Vec<f64> = idx.iter().map(|&i| outputs[i].probs[t]).collect();
            let labels: Vec<bool> = idx.iter().map(|&i| records[i].label(t) > 0.5).collect();
            out.push(metrics::auc(&scores, &labels).ok());
        }
    }
    out
}

/// Trains `model` and returns it with the best-validation parameters.
pub fn train(model: Model, train: &[ExampleRecord], valid: &[ExampleRecord], config: &TrainConfig) -> Result<(Model, TrainLog)> {
    let mut trainer = Trainer::new(model, train, config.clone())?;
    trainer.run(train, valid)?;
    Ok(trainer.finish())
}
