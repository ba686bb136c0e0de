//! Experiment runner: data preparation, single runs, ablation suites,
//! capacity sweeps and attention export.

mod config;

pub use config::{Architecture, DataConfig, ExperimentConfig, SCHEMA_VERSION};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{generate, read_dataset, split, ExampleRecord, FeatureSchema, GeneratorConfig};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{evaluate, friedman, EvalReport, FriedmanResult, RunMatrix, RunMeta};
use crate::models::{Layout, Model, ModelKind, Variant};
use crate::trainer::{objective, resolve_loss_weights, save_model, train, TrainConfig, TrainLog};

/// Records after splitting, plus the feature schema they are embedded with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: Layout,
    pub train: Vec<ExampleRecord>,
    pub valid: Vec<ExampleRecord>,
    pub test: Vec<ExampleRecord>,
}

fn inferred_schema(records: &[ExampleRecord], dim: usize) -> Result<FeatureSchema> {
    let first = records.first().ok_or_else(|| Error::Config("dataset is empty".into()))?;
    let fields = first.context.len();
    if let Some(r) = records.iter().find(|r| r.context.len() != fields) {
        return Err(Error::Config(format!(
            "records disagree on context field count ({} vs {fields}) for user {}",
            r.context.len(),
            r.user
        )));
    }
    let vocab = |f: &dyn Fn(&ExampleRecord) -> usize| records.iter().map(f).max().unwrap_or(0) + 1;
    let buckets: Vec<usize> = (0..fields).map(|k| vocab(&|r| r.context[k])).collect();
    Ok(FeatureSchema::standard(
        vocab(&|r| r.user),
        vocab(&|r| r.item),
        vocab(&|r| r.scenario),
        &buckets,
        dim,
    ))
}

/// Generates or loads the records and splits them train / valid / test.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dim = cfg.architecture.embedding_dim;
    let (records, schema) = match (&cfg.data.dataset, &cfg.data.generator) {
        (Some(path), _) => {
            let records = read_dataset(path)?;
            let schema = inferred_schema(&records, dim)?;
            (records, schema)
        }
        (None, Some(g)) => (generate(g)?, g.schema(dim)),
        (None, None) => return Err(Error::Config("data needs either `generator` or `dataset`".into())),
    };
    let scenarios = schema.fields.iter().find(|f| f.name == "scenario").map_or(0, |f| f.vocab);
    let (train_all, test) = split(&records, cfg.data.train_frac, cfg.data.split_seed)?;
    let (train, valid) = if cfg.data.valid_frac > 0.0 {
        split(&train_all, 1.0 - cfg.data.valid_frac, cfg.data.split_seed.wrapping_add(1))?
    } else {
        (train_all, Vec::new())
    };
    Ok(Dataset {
        layout: Layout::new(scenarios, schema),
        train,
        valid,
        test,
    })
}

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub report: EvalReport,
}

/// Builds, trains and evaluates one model. Pure in (config, data, variant, seed).
pub fn run_once(cfg: &ExperimentConfig, data: &Dataset, kind: ModelKind, variant: Variant, seed: u64) -> Result<RunOutcome> {
    let spec = cfg.architecture.spec(kind, variant, data.layout.clone());
    let model = Model::build(&spec, seed).stage("build")?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, log) = train(model, &data.train, &data.valid, &train_cfg).stage("train")?;
    let meta = RunMeta {
        seed,
        variant: if kind == ModelKind::Hinet {
            variant.name().to_string()
        } else {
            kind.name().to_string()
        },
        config_hash: cfg.hash(),
    };
    let report = evaluate(&model, &data.test, meta).stage("evaluate")?;
    Ok(RunOutcome { model, log, report })
}

fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    outcome.report.write(dir, "report")?;
    fs::write(dir.join("train_log.csv"), outcome.log.to_csv(outcome.model.layout()))?;
    fs::write(dir.join("timing.csv"), outcome.log.timing_csv())?;
    save_model(&outcome.model, &dir.join("model.ckpt"))
}

fn echo_config(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Marks an output directory as incomplete after a failure.
fn flag_failure<T>(cfg: &ExperimentConfig, result: Result<T>) -> Result<T> {
    if let Err(e) = &result {
        let _ = fs::create_dir_all(&cfg.output_dir);
        let _ = fs::write(cfg.output_dir.join("FAILED"), format!("{e}\n"));
    }
    result
}

/// Single experiment: data, train, evaluate, write artifacts under `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    flag_failure(cfg, (|| {
        cfg.validate().stage("config")?;
        echo_config(cfg).stage("output")?;
        let data = prepare_data(cfg).stage("data")?;
        let outcome = run_once(cfg, &data, cfg.model, cfg.variant, cfg.seed)?;
        write_run(&cfg.output_dir, &outcome).stage("output")?;
        Ok(outcome)
    })())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs every (item, repeat) job on the worker pool; results keep job order.
fn run_jobs<T: Send + Sync, R: Send>(workers: usize, jobs: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    pool(workers)?.install(|| jobs.par_iter().map(&f).collect())
}

/// Per-variant results of an ablation suite.
#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variants: Vec<Variant>,
    /// `reports[r][v]` for repeat `r` and variant `v`.
    pub reports: Vec<Vec<EvalReport>>,
    /// Mean test AUC per run and variant.
    pub mean_auc: RunMatrix,
    pub mean_auc_friedman: FriedmanResult,
    /// Friedman result per (scenario, task) cell; `None` if some run left the cell undefined.
    pub cell_friedman: Vec<((usize, usize), Option<FriedmanResult>)>,
}

impl AblationOutcome {
    pub fn mean_rank(&self, variant: Variant) -> Option<f64> {
        let v = self.variants.iter().position(|&x| x == variant)?;
        Some(self.mean_auc_friedman.mean_ranks[v])
    }

    /// `run,variant,mean_auc` for every run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("run,variant,mean_auc\n");
        for (r, row) in self.mean_auc.values.iter().enumerate() {
            for (v, value) in row.iter().enumerate() {
                let value = value.map_or_else(|| "NA".into(), |x| format!("{x:.17}"));
                let _ = writeln!(out, "{r},{},{value}", self.variants[v]);
            }
        }
        out
    }

    /// `target,statistic,<variant mean ranks...>`; the first row is mean AUC.
    pub fn friedman_csv(&self) -> String {
        let mut out = String::from("target,statistic");
        for v in &self.variants {
            let _ = write!(out, ",rank_{v}");
        }
        out.push('\n');
        let mut row = |name: String, res: Option<&FriedmanResult>| {
            match res {
                Some(f) => {
                    let _ = write!(out, "{name},{:.17}", f.statistic);
                    for r in &f.mean_ranks {
                        let _ = write!(out, ",{r}");
                    }
                }
                None => {
                    let _ = write!(out, "{name},NA");
                    for _ in &self.variants {
                        out.push_str(",NA");
                    }
                }
            }
            out.push('\n');
        };
        row("mean_auc".into(), Some(&self.mean_auc_friedman));
        for ((s, t), res) in &self.cell_friedman {
            row(format!("auc_s{s}_{}", crate::datagen::task_name(*t)), res.as_ref());
        }
        out
    }
}

/// Trains `variants` × `repeats` HiNet models on one dataset and ranks them.
pub fn ablation_suite(cfg: &ExperimentConfig, variants: &[Variant], repeats: usize) -> Result<AblationOutcome> {
    flag_failure(cfg, (|| {
        cfg.validate().stage("config")?;
        if repeats < 2 || variants.len() < 2 {
            return Err(Error::Config("ablation needs at least 2 repeats and 2 variants".into()));
        }
        echo_config(cfg).stage("output")?;
        let data = prepare_data(cfg).stage("data")?;
        let jobs: Vec<(usize, Variant)> = (0..repeats).flat_map(|r| variants.iter().map(move |&v| (r, v))).collect();
        let outcomes = run_jobs(cfg.workers, &jobs, |&(r, v)| {
            let seed = cfg.seed + r as u64;
            let outcome = run_once(cfg, &data, ModelKind::Hinet, v, seed)?;
            write_run(&cfg.output_dir.join(format!("runs/{v}_seed{seed}")), &outcome).stage("output")?;
            Ok(outcome.report)
        })?;
        let mut reports: Vec<Vec<EvalReport>> = Vec::with_capacity(repeats);
        for chunk in outcomes.chunks(variants.len()) {
            reports.push(chunk.to_vec());
        }
        let names: Vec<String> = variants.iter().map(|v| v.name().to_string()).collect();
        let mut mean_auc = RunMatrix::new(names.clone());
        for row in &reports {
            mean_auc.push_run(row.iter().map(EvalReport::mean_auc).collect())?;
        }
        let mean_auc_friedman = friedman(&mean_auc).stage("friedman")?;
        let mut cell_friedman = Vec::new();
        for cell in &reports[0][0].cells {
            let key = (cell.scenario, cell.task);
            let mut m = RunMatrix::new(names.clone());
            for row in &reports {
                m.push_run(row.iter().map(|rep| rep.cell(key.0, key.1).and_then(|c| c.auc)).collect())?;
            }
            cell_friedman.push((key, friedman(&m).ok()));
        }
        let outcome = AblationOutcome {
            variants: variants.to_vec(),
            reports,
            mean_auc,
            mean_auc_friedman,
            cell_friedman,
        };
        fs::write(cfg.output_dir.join("ablation_runs.csv"), outcome.runs_csv()).stage("output")?;
        fs::write(cfg.output_dir.join("ablation_friedman.csv"), outcome.friedman_csv()).stage("output")?;
        Ok(outcome)
    })())
}

/// Capacity axis of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAxis {
    /// Sub-experts in every SEI module (shared and specific alike).
    SubExperts,
    /// Shared and task-specific experts in every CGC module.
    CgcExperts,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::SubExperts => vec![1, 3, 5, 7],
            SweepAxis::CgcExperts => vec![1, 2, 3, 4, 5],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SubExperts => "sub_experts",
            SweepAxis::CgcExperts => "cgc_experts",
        }
    }

    pub fn apply(self, arch: &Architecture, value: usize) -> Architecture {
        let mut a = arch.clone();
        match self {
            SweepAxis::SubExperts => {
                a.shared_sub_experts = value;
                a.specific_sub_experts = value;
            }
            SweepAxis::CgcExperts => {
                a.cgc_shared_experts = value;
                a.cgc_task_experts = value;
            }
        }
        a
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sub_experts" => Ok(SweepAxis::SubExperts),
            "cgc_experts" => Ok(SweepAxis::CgcExperts),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// One row of a sweep table: averages over the repeats of one value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub parameters: usize,
    pub mean_auc: Option<f64>,
    pub final_train_loss: f64,
    /// Training objective of the returned parameters over the whole
    /// training split, averaged over repeats.
    pub train_objective: f64,
    /// Mean AUC per (scenario, task) cell, scenario-major.
    pub cell_auc: Vec<Option<f64>>,
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{},parameters,mean_auc,final_train_loss,train_objective", axis.name());
    if let Some(first) = rows.first() {
        for k in 0..first.cell_auc.len() {
            let _ = write!(out, ",cell{k}_auc");
        }
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.17}"));
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{:.17},{:.17}",
            r.value,
            r.parameters,
            fmt(r.mean_auc),
            r.final_train_loss,
            r.train_objective
        );
        for a in &r.cell_auc {
            let _ = write!(out, ",{}", fmt(*a));
        }
        out.push('\n');
    }
    out
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains the configured HiNet variant once per (value, repeat).
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize], repeats: usize) -> Result<Vec<SweepRow>> {
    flag_failure(cfg, (|| {
        cfg.validate().stage("config")?;
        if values.is_empty() || values.contains(&0) || repeats == 0 {
            return Err(Error::Config("sweep needs positive values and at least one repeat".into()));
        }
        echo_config(cfg).stage("output")?;
        let data = prepare_data(cfg).stage("data")?;
        let jobs: Vec<(usize, usize)> = values.iter().flat_map(|&v| (0..repeats).map(move |r| (v, r))).collect();
        let outcomes = run_jobs(cfg.workers, &jobs, |&(value, r)| {
            let run_cfg = ExperimentConfig {
                architecture: axis.apply(&cfg.architecture, value),
                ..cfg.clone()
            };
            let seed = cfg.seed + r as u64;
            let outcome = run_once(&run_cfg, &data, ModelKind::Hinet, cfg.variant, seed)?;
            write_run(&cfg.output_dir.join(format!("runs/{}{value}_seed{seed}", axis.name())), &outcome).stage("output")?;
            let weights = resolve_loss_weights(&cfg.train.loss_weights, &data.train, &data.layout).stage("train")?;
            let train_objective = objective(&outcome.model, &data.train, &weights).stage("evaluate")?;
            Ok((outcome, train_objective))
        })?;
        let rows: Vec<SweepRow> = values
            .iter()
            .zip(outcomes.chunks(repeats))
            .map(|(&value, runs)| {
                let n = runs.len() as f64;
                let cells = runs[0].0.report.cells.len();
                SweepRow {
                    value,
                    parameters: runs[0].0.model.num_parameters(),
                    mean_auc: mean(runs.iter().map(|(o, _)| o.report.mean_auc())),
                    final_train_loss: runs.iter().map(|(o, _)| o.log.final_train_loss().unwrap_or(f64::NAN)).sum::<f64>() / n,
                    train_objective: runs.iter().map(|(_, j)| j).sum::<f64>() / n,
                    cell_auc: (0..cells).map(|k| mean(runs.iter().map(|(o, _)| o.report.cells[k].auc))).collect(),
                }
            })
            .collect();
        fs::write(cfg.output_dir.join(format!("sweep_{}.csv", axis.name())), sweep_csv(axis, &rows)).stage("output")?;
        Ok(rows)
    })())
}

/// `weights[i][m]`: attention scenario `i` pays to scenario `m`; zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMap {
    pub weights: Vec<Vec<f64>>,
}

impl AttentionMap {
    /// Rows are source scenarios, columns target scenarios, with a header.
    pub fn to_csv(&self) -> String {
        let m = self.weights.len();
        let mut out = String::from("scenario");
        for j in 0..m {
            let _ = write!(out, ",to{j}");
        }
        out.push('\n');
        for (i, row) in self.weights.iter().enumerate() {
            let _ = write!(out, "{i}");
            for w in row {
                let _ = write!(out, ",{w:.17}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scenario attention of a trained HiNet. The weights depend only on the
/// scenario-indicator embeddings, so no records are needed.
pub fn export_attention(model: &Model) -> Result<AttentionMap> {
    let m = model.layout().scenarios;
    let mut weights = vec![vec![0.0; m]; m];
    for (i, row) in weights.iter_mut().enumerate() {
        let w = model
            .attention_weights(i)?
            .ok_or_else(|| Error::Contract("model has no scenario attention (SAN disabled or not a hinet)".into()))?;
        for (&j, &x) in crate::layers::other_scenarios(i, m).iter().zip(&w) {
            row[j] = x;
        }
    }
    Ok(AttentionMap { weights })
}

/// Generator config of the attention-recovery experiment: `a`, `b` aligned, `c` orthogonal.
pub fn aligned_pair_generator(seed: u64, impressions: usize) -> GeneratorConfig {
    GeneratorConfig {
        impressions,
        ..GeneratorConfig::aligned_pair(seed)
    }
}

#[cfg(test)]
mod tests;
