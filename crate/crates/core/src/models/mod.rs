//! HiNet and its baselines, assembled from [`crate::layers`].

mod bundle;
mod config;
mod model;

pub use bundle::{decode_params, encode_params, load_params, save_params, BUNDLE_VERSION};
pub use config::{HiNetConfig, Layout, MmoeConfig, ModelKind, ModelSpec, SharedBottomConfig, Switches, Variant};
pub use model::{Forward, GateKind, Model, ModelOutput};
