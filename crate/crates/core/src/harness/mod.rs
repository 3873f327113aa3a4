//! Configuration, dataset ingestion and the end-to-end pipeline.

mod config;
mod dataset;
mod pipeline;

pub use config::{PipelineConfig, CONFIG_KEYS};
pub use dataset::{defect_type_of, discover, FabricDataset, TestCase};
pub use pipeline::{
    format_summary, images_csv, run_pipeline, summarize, summary_csv, write_artifacts, CaseInput,
    ImageOutcome, ImageResult, PipelineOutcome, SummaryRow, IMAGES_CSV_HEADER, OVERALL,
    SUMMARY_CSV_HEADER,
};
