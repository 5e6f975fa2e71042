//! K-fold cross-validation of the latent dimension in the BMDS-Hawkes model.

use crate::bmds::{lpd_hat, pair_log_density, CvFoldPlan, DistanceMatrix, FoldPredictions, LpdEstimate};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ModelData, SamplerConfig, ScanProbabilities};
use crate::model::ParamPriors;

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Seed of the pair-to-fold assignment.
    pub fold_seed: u64,
    pub sampler: SamplerConfig,
    pub priors: ParamPriors,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            fold_seed: 1,
            sampler: SamplerConfig { scan: ScanProbabilities::bmds(), ..SamplerConfig::default() },
            priors: ParamPriors::default(),
        }
    }
}

/// `lpd-hat` for one latent dimension: each fold's chain conditions on the
/// training pairs only and scores the held-out pairs at every snapshot.
pub fn cross_validate(times: &[f64], distances: &DistanceMatrix, dim: usize, config: &CvConfig) -> Result<LpdEstimate> {
    if dim == 0 {
        return Err(Error::UnsupportedDimension(0));
    }
    let plan = CvFoldPlan::random(distances.len(), config.folds, config.fold_seed)?;
    let mut predictions = Vec::with_capacity(config.folds);
    for (f, held_out) in plan.folds().iter().enumerate() {
        let data = ModelData::bmds(times.to_vec(), distances.clone(), dim, Some(plan.training_mask(f)))?;
        let out = run_chain(&config.sampler.for_chain(f as u64), &config.priors, &data)?;
        let log_densities = held_out
            .iter()
            .map(|&(i, j)| {
                out.snapshots
                    .iter()
                    .map(|s| {
                        let xi = &s.locations[i * dim..(i + 1) * dim];
                        let xj = &s.locations[j * dim..(j + 1) * dim];
                        let delta = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        let sigma = s.sigma2.expect("BMDS snapshots carry sigma2").sqrt();
                        pair_log_density(distances.get(i, j), delta, sigma)
                    })
                    .collect()
            })
            .collect();
        predictions.push(FoldPredictions { log_densities });
    }
    lpd_hat(&predictions)
}
