use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of prediction tasks per scenario: CTR and CTCVR.
pub const TASKS: usize = 2;
pub const TASK_CTR: usize = 0;
pub const TASK_CTCVR: usize = 1;

pub fn task_name(task: usize) -> &'static str {
    match task {
        TASK_CTR => "ctr",
        TASK_CTCVR => "ctcvr",
        _ => "unknown",
    }
}

/// One impression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub scenario: usize,
    pub user: usize,
    pub item: usize,
    /// Bucketized context feature ids.
    pub context: Vec<usize>,
    pub click: bool,
    pub order: bool,
}

impl ExampleRecord {
    /// Label for task 0 (click) or task 1 (click and order).
    pub fn label(&self, task: usize) -> f64 {
        let hit = match task {
            TASK_CTR => self.click,
            TASK_CTCVR => self.order,
            _ => false,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }

    /// An order without a click is impossible.
    pub fn validate(&self) -> Result<()> {
        if self.order && !self.click {
            return Err(Error::Contract(
                "record has order=1 with click=0".into(),
            ));
        }
        Ok(())
    }
}

/// One categorical input field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureField {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

/// Categorical fields in the order they are embedded and concatenated:
/// user, item, scenario, then each context field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub fields: Vec<FeatureField>,
}

impl FeatureSchema {
    /// Standard layout for `users`, `items`, `scenarios` and context buckets,
    /// with every field embedded at width `dim`.
    pub fn standard(users: usize, items: usize, scenarios: usize, context_buckets: &[usize], dim: usize) -> Self {
        let mut fields = vec![
            FeatureField { name: "user".into(), vocab: users, dim },
            FeatureField { name: "item".into(), vocab: items, dim },
            FeatureField { name: "scenario".into(), vocab: scenarios, dim },
        ];
        for (i, &b) in context_buckets.iter().enumerate() {
            fields.push(FeatureField {
                name: format!("context{i}"),
                vocab: b,
                dim,
            });
        }
        Self { fields }
    }

    /// Width of the concatenated embedding vector.
    pub fn input_width(&self) -> usize {
        self.fields.iter().map(|f| f.dim).sum()
    }

    /// Feature id per field, in schema order.
    pub fn ids(&self, record: &ExampleRecord) -> Result<Vec<usize>> {
        let expected = 3 + record.context.len();
        if self.fields.len() != expected {
            return Err(Error::Config(format!(
                "schema has {} fields but record carries {}",
                self.fields.len(),
                expected
            )));
        }
        let mut ids = Vec::with_capacity(expected);
        ids.push(record.user);
        ids.push(record.item);
        ids.push(record.scenario);
        ids.extend_from_slice(&record.context);
        Ok(ids)
    }
}
