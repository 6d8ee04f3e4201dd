//! Configuration, file formats and the staged pipeline.

pub mod array;
pub mod config;
pub mod export;
pub mod pipeline;

pub use array::{read_array, write_array, ComplexArray};
pub use config::{load_config, PipelineConfig};
pub use export::export_db_image;
pub use pipeline::{run_pipeline, RunOptions, Stage};
