//! Building blocks: embeddings, MLPs, softmax gates, sub-expert integration,
//! scenario attention, customized gate control and task towers.

mod cgc;
mod embedding;
mod gating;
mod mlp;
mod san;
mod scenario;
mod sei;

pub use cgc::{CgcModule, CgcOutput};
pub use embedding::{EmbeddingTable, FeatureEmbeddings, EMBEDDING_INIT_STD};
pub use gating::GatingNetwork;
pub use mlp::{chain_widths, tower_forward, Dense, Mlp};
pub use san::{other_scenarios, san_forward, San};
pub use scenario::{ScenarioLayer, ScenarioLayerSpec, ScenarioOutput};
pub use sei::{SeiModule, SeiOutput};

#[cfg(test)]
mod tests;
