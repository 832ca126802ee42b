//! Heterogeneous optical/SAR change detection by ensemble fuzzy clustering.
//!
//! An optical image of the first date and a SAR intensity image of the second
//! are cut into windows. Each window is clustered three times (optical bands,
//! despeckled SAR, and the stack of both) with randomized-`k` fuzzy c-means
//! ensembles. Changes show up as optical clusters that split in the stacked
//! partition and stacked clusters that merge in the SAR partition.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod change;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod fcm;
mod kv;
pub mod linalg;
pub mod linkage;
pub mod models;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod seed;
pub mod speckle;
pub mod synth;

pub use change::{
    change_map, contingency, detect_merges, detect_splits, ChangeEvent, ChangeKind, ChangeParams,
    ContingencyTable, EventHook, FlagMode, NoHook,
};
pub use config::{load_config, parse_config, Looks, PipelineConfig};
pub use ensemble::{
    accumulate, consensus, run_ensemble, stacked_k_bounds, Accumulation, CoAssociation, ConsensusPartition,
    EnsembleParams, EnsembleResult,
};
pub use error::{Error, Result};
pub use evaluation::{adjusted_rand_index, confusion, metrics, ConfusionCounts, Metrics};
pub use fcm::{fcm_run, CovarianceWeights, FcmModel, FcmParams, FcmResult, Metric, PartitionMatrix};
pub use models::{
    gamma_mean, hellinger_gamma, hellinger_sq_gamma, log_stack, lognormal_moments, mahalanobis_sq,
    GammaCluster, GaussianCluster, LogNormalParams,
};
pub use pipeline::{process_window, run_pipeline, run_pipeline_with, tile, RunOptions, WindowResult};
pub use raster::{
    load_mask, load_raster, save_mask, save_raster, BandRole, Bounds, Mask, Raster, RasterHeader,
};
pub use scalar::Scalar;
pub use seed::derive_seed;
pub use speckle::{enhanced_lee, estimate_enl, EnlEstimate, SpeckleParams};
pub use synth::{generate_pair, planted_scene, SceneSpec};

pub type GaussianCluster32 = GaussianCluster<f32>;
pub type GaussianCluster64 = GaussianCluster<f64>;
pub type GammaCluster32 = GammaCluster<f32>;
pub type GammaCluster64 = GammaCluster<f64>;
pub type FcmParams32 = FcmParams<f32>;
pub type FcmParams64 = FcmParams<f64>;
pub type FcmResult32 = FcmResult<f32>;
pub type FcmResult64 = FcmResult<f64>;
pub type PartitionMatrix32 = PartitionMatrix<f32>;
pub type PartitionMatrix64 = PartitionMatrix<f64>;
pub type EnsembleResult32 = EnsembleResult<f32>;
pub type EnsembleResult64 = EnsembleResult<f64>;
