//! Datasets, prompt assembly, the synthetic corpus and experiment runs.

pub mod dataset;
pub mod experiment;
pub mod prompt;
pub mod synthetic;

pub use dataset::{load_dataset, parse_dataset, write_dataset, Document, Instance};
pub use experiment::{
    build_document_index, format_ablation, format_report, read_report, retrieve, run_ablation,
    run_experiment, run_on_instances, write_report, AblationReport, AblationRun, ExperimentConfig,
    ScoreUnits,
};
pub use prompt::build_prompt;
pub use synthetic::{generate_synthetic_corpus, synthetic_instances};
