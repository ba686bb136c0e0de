//! Synthetic multi-scenario impression logs and dataset files.

mod generator;
mod io;
mod record;
mod split;

pub use generator::{
    generate, Generator, GeneratorConfig, ScenarioSpec, World, REFERENCE_CTCVR, REFERENCE_CTR, REFERENCE_EXPOSURES,
};
pub use io::{parse_record, read_dataset, read_records, write_dataset, write_records};
pub use record::{task_name, ExampleRecord, FeatureField, FeatureSchema, TASKS, TASK_CTCVR, TASK_CTR};
pub use split::split;
