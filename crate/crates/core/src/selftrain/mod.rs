//! Self-training: the round engine that alternates soft distillation and
//! hard fine-tuning, with automatic threshold selection, pseudo-labeling
//! through the voters' decision policy, and permanent source-consistency
//! filtering.

pub mod config;
pub mod engine;
pub mod manifest;
pub mod policy;
pub mod train;

pub use config::{AlphaPolicy, ConsistencyRule, PipelineConfig, SoftTarget};
pub use engine::{
    dry_run, restore_student, run_btf_stage, run_finetune_stage, run_pipeline, PipelineOutcome,
    RoundState,
};
pub use manifest::RunManifest;
pub use policy::{
    filter_consistent_source, generate_pseudo_labels, predict_labels, predict_records,
    ConsistencyOutcome, PseudoLabeledSet,
};
pub use train::{distill_soft, finetune_hard, finetune_source, run_btf, TrainOpts};
