use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{auc, logloss};
use crate::datagen::{task_name, ExampleRecord};
use crate::error::{Error, Result};
use crate::models::Model;

/// Metrics of one (scenario, task) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub scenario: usize,
    pub task: usize,
    /// Absent when the cell has only one class.
    pub auc: Option<f64>,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub variant: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    /// Scenario-major, then task.
    pub cells: Vec<CellMetrics>,
}

/// Hex SHA-256 of a config's canonical text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Scores every record and computes AUC and log-loss per (scenario, task).
/// Scenarios without test records are skipped.
pub fn evaluate(model: &Model, records: &[ExampleRecord], meta: RunMeta) -> Result<EvalReport> {
    let outputs = model.predict(records)?;
    let layout = model.layout();
    let mut cells = Vec::new();
    for s in 0..layout.scenarios {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].scenario == s).collect();
        if idx.is_empty() {
            continue;
        }
        for t in 0..layout.tasks_per_scenario[s] {
            let scores: Vec<f64> = idx.iter().map(|&i| outputs[i].probs[t]).collect();
            let labels: Vec<bool> = idx.iter().map(|&i| records[i].label(t) > 0.5).collect();
            let n_pos = labels.iter().filter(|&&l| l).count();
            let auc = match auc(&scores, &labels) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            cells.push(CellMetrics {
                scenario: s,
                task: t,
                auc,
                logloss: logloss(&scores, &labels)?,
                n_pos,
                n_neg: idx.len() - n_pos,
            });
        }
    }
    Ok(EvalReport { meta, cells })
}

impl EvalReport {
    pub fn cell(&self, scenario: usize, task: usize) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.scenario == scenario && c.task == task)
    }

    /// Mean AUC over cells where it is defined.
    pub fn mean_auc(&self) -> Option<f64> {
        let defined: Vec<f64> = self.cells.iter().filter_map(|c| c.auc).collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }

    /// Columns: `scenario,task,metric,value`; one row per cell and metric in
    /// the order auc, logloss, n_pos, n_neg. An undefined AUC is written `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,task,metric,value\n");
        for c in &self.cells {
            let task = task_name(c.task);
            let auc = c.auc.map_or_else(|| "NA".to_string(), |a| format!("{a:.17}"));
            let _ = writeln!(out, "{},{task},auc,{auc}", c.scenario);
            let _ = writeln!(out, "{},{task},logloss,{:.17}", c.scenario, c.logloss);
            let _ = writeln!(out, "{},{task},n_pos,{}", c.scenario, c.n_pos);
            let _ = writeln!(out, "{},{task},n_neg,{}", c.scenario, c.n_neg);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("eval report: {e}")))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json())?;
        Ok(())
    }
}
