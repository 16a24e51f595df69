//! Evaluation of learned representations: ranking metrics, seeded
//! retrieval splits with image-image and text-image retrieval, and
//! supervised classification (linear probe, fine-tuning).

pub mod classify;
pub mod metrics;
pub mod retrieval;

pub use classify::{
    fine_tune, linear_probe, stratified_fraction, stratified_split, train_linear_head,
    ClassifierMetrics, FineTuneConfig, FineTuneOutput, LabeledImageSet, LinearHead, ProbeConfig,
};
pub use metrics::{auc, precision_at_k, spearman, RankedList};
pub use retrieval::{
    build_retrieval_split, retrieve_image_image, retrieve_text_image, RetrievalMetrics,
    RetrievalSplit, DEFAULT_K_VALUES,
};
