//! # MDCA
//!
//! Hierarchical convolutional sparse coding in which several independently
//! trained pathways reconstruct one input together and compete for it
//! through a shared residual.
//!
//! - [`tensor`], [`conv`]: dense tensors and the strided analysis/synthesis
//!   operator pair
//! - [`lca`]: single-layer locally competitive inference
//! - [`network`]: multipath, multiscale inference with optional stimulation
//! - [`learning`], [`checkpoint`]: dictionary learning and model files
//! - [`analysis`]: traces, activity-triggered averages, activity ratios
//! - [`config`], [`dataset`], [`image_io`]: run configuration and ingestion
//! - [`synthetic`]: procedural corpora for desk-scale experiments

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod lca;
pub mod learning;
pub mod network;
pub mod synthetic;
pub mod tensor;

pub use analysis::{
    activity_ratio, activity_triggered_average, fit_threshold, mean_top_response,
    pathway_activity, RatioDecision, RatioLabel, TraceRecord,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use conv::{analyze, synthesize, DictionaryLayer, StrideGeometry};
pub use error::{MdcaError, Result};
pub use lca::{energy, lca_step, solve_single_layer, threshold, LayerState, LcaParams, ThresholdKind};
pub use learning::{apply_update, dict_gradient, train_pathway, EpochMetrics, TrainConfig};
pub use network::{
    compose_analyze, compose_synthesize, infer, mdca_step, reconstruct, LayerGeometry,
    NetworkConfig, NetworkState, PathwaySpec, StimulationSpec,
};
pub use tensor::{ImageTensor, Shape};
