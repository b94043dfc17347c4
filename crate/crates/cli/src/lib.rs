//! Library side of the `mvlogit` command: configuration documents, CSV
//! ingestion and the command pipeline, kept here so they can be tested
//! without spawning the binary.

pub mod config;
pub mod ingest;
pub mod pipeline;

pub use config::{AnalysisConfig, CampaignConfig, NamedPopulation, PriorConfig};
pub use ingest::{load_dataset_csv, read_dataset, LoadedData, Standardization};
pub use pipeline::{run_pipeline, Command, Inputs};

/// Machine-readable error document written to stderr on failure.
pub fn error_json(err: &mvlogit::Error) -> String {
    serde_json::json!({ "error": { "code": err.code(), "message": err.to_string() } }).to_string()
}
