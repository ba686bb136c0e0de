use rand::Rng;

use crate::datagen::{ExampleRecord, FeatureSchema};
use crate::error::{Error, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Var};

/// Standard deviation of freshly initialized embedding rows.
pub const EMBEDDING_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub weights: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::Config(format!("embedding `{name}` needs positive vocab and dim")));
        }
        let weights = store.add_init(format!("{name}.table"), vec![vocab, dim], Init::Normal(EMBEDDING_INIT_STD), rng)?;
        Ok(Self {
            name: name.to_string(),
            weights,
            vocab,
            dim,
        })
    }

    /// Rows for `ids`, as an `[ids.len() × dim]` matrix.
    pub fn lookup(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::Index {
                what: format!("field `{}`", self.name),
                index: bad,
                size: self.vocab,
            });
        }
        let table = tape.param(self.weights);
        tape.gather_rows(table, ids)
    }
}

/// One embedding table per categorical field.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbeddings {
    pub schema: FeatureSchema,
    pub tables: Vec<EmbeddingTable>,
}

impl FeatureEmbeddings {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, schema: &FeatureSchema, rng: &mut R) -> Result<Self> {
        let tables = schema
            .fields
            .iter()
            .map(|f| EmbeddingTable::new(store, &format!("{prefix}.{}", f.name), f.vocab, f.dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema: schema.clone(),
            tables,
        })
    }

    pub fn width(&self) -> usize {
        self.schema.input_width()
    }

    /// Dense input `x` for a batch: per-field rows concatenated, `[n × width]`.
    pub fn embed(&self, tape: &mut Tape<'_>, records: &[&ExampleRecord]) -> Result<Var> {
        let mut per_field: Vec<Vec<usize>> = vec![Vec::with_capacity(records.len()); self.tables.len()];
        for r in records {
            for (f, id) in self.schema.ids(r)?.into_iter().enumerate() {
                per_field[f].push(id);
            }
        }
        let parts = self
            .tables
            .iter()
            .zip(&per_field)
            .map(|(t, ids)| t.lookup(tape, ids))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&parts)
    }
}
