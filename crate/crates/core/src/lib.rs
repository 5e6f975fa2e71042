//! Bayesian inference for spatiotemporal Hawkes processes whose event
//! locations are observed only up to a coarsening region.

pub mod bmds;
mod cache;
pub mod crossval;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod gradients;
mod kernel;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod simulator;
pub mod truncnorm;

pub use error::{Error, Result};
pub use model::{
    log_likelihood, log_prior_params, normalized_se_weight, pairwise_components, pairwise_rate,
    rate_breakdown, Event, EventCatalog, EventRateBreakdown, HawkesParams, ParamPriors,
};
pub use gradients::{
    grad_locations_parallel, grad_locations_serial, log_likelihood_parallel, ExecutionPlan,
    LocationGradient,
};
pub use geometry::{
    adapt_epsilon, lens_area, propose_disc, propose_square, region_log_prior, ProposalTuning,
    RegionKind, UncertaintyRegion,
};
pub use bmds::{
    bmds_grad_locations, bmds_log_density, classical_mds_init, lpd_hat, CvFoldPlan,
    DistanceMatrix, LatentConfiguration,
};
pub use mcmc::{
    run_chain, ChainOutput, ChainState, LocationModel, ModelData, Sampler, SamplerConfig,
    ScanProbabilities, Snapshot,
};
pub use diagnostics::{ess, posterior_diagnostics, PosteriorSummary, QuantitySummary};
pub use simulator::{coarsen, coverage_study, simulate_catalog, CoverageConfig, SimConfig};
pub use crossval::{cross_validate, CvConfig};
