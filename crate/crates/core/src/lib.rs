//! Bayesian multivariate index models with co-clustered exposure-response
//! curves and index weights.

pub mod coclustering;
pub mod config;
pub mod error;
pub mod fitted;
pub mod importance;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nonseparable;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod sphere;
pub mod splines;

pub use error::{Error, Result};
pub use fitted::FittedModel;
pub use model::{
    build_additive_spec, build_biomarker_spec, build_dlnm_spec, build_mim_spec, build_nonseparable_spec,
    ClusteringMode, Dataset, HyperParams, ModelKind, ModelSpec, ThetaMethod,
};
pub use sampler::{run_chain, ChainOutput, ParamState, Sampler, SweepControl};
