//! AUC, log-loss, the Friedman rank statistic, and per-cell evaluation reports.

mod report;

pub use report::{config_hash, evaluate, CellMetrics, EvalReport, RunMeta};

use crate::error::{Error, Result};

pub const LOGLOSS_CLAMP: f64 = 1e-7;

/// Midranks (1-based) of `values` in ascending order; ties share their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve by the Mann–Whitney rank sum.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Contract(format!("score {bad} is not a number")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn logloss(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("log-loss of an empty set".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// `runs × variants` table of one scalar metric; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMatrix {
    pub variants: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl RunMatrix {
    pub fn new(variants: Vec<String>) -> Self {
        Self {
            variants,
            values: Vec::new(),
        }
    }

    pub fn push_run(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        if row.len() != self.variants.len() {
            return Err(Error::Contract(format!(
                "run has {} values for {} variants",
                row.len(),
                self.variants.len()
            )));
        }
        self.values.push(row);
        Ok(())
    }

    pub fn runs(&self) -> usize {
        self.values.len()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|r| r.len() == self.variants.len() && r.iter().all(|v| v.is_some_and(f64::is_finite)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub statistic: f64,
    /// Mean rank per variant; rank 1 is the best (highest) metric.
    pub mean_ranks: Vec<f64>,
}

/// Friedman χ² statistic over runs (blocks) and variants (treatments).
pub fn friedman(matrix: &RunMatrix) -> Result<FriedmanResult> {
    let v = matrix.variants.len();
    let r = matrix.runs();
    if v < 2 || r < 2 {
        return Err(Error::Contract(format!("Friedman test needs ≥2 runs and ≥2 variants, got {r}×{v}")));
    }
    if !matrix.is_complete() {
        return Err(Error::Contract("Friedman test needs a complete matrix of finite values".into()));
    }
    let mut rank_sums = vec![0.0; v];
    for row in &matrix.values {
        // Higher is better, so rank the negated metric ascending.
        let neg: Vec<f64> = row.iter().map(|x| -x.expect("complete")).collect();
        for (sum, rank) in rank_sums.iter_mut().zip(midranks(&neg)) {
            *sum += rank;
        }
    }
    let (rf, vf) = (r as f64, v as f64);
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / rf).collect();
    let sq: f64 = mean_ranks.iter().map(|m| m * m).sum();
    let statistic = 12.0 * rf / (vf * (vf + 1.0)) * (sq - vf * (vf + 1.0) * (vf + 1.0) / 4.0);
    Ok(FriedmanResult { statistic, mean_ranks })
}
