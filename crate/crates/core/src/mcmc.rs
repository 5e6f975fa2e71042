//! Adaptive random-scan Metropolis-within-Gibbs over `(Θ, X[, σ²])`.
//!
//! Grouped-data models move locations in blocks with the region-constrained
//! kernels; the BMDS-Hawkes model moves all latent locations jointly with
//! Hamiltonian Monte Carlo. Every step size adapts during burn-in only, with
//! gain `s^-0.6`, so the chain is a plain Metropolis chain afterwards.

use log::error;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bmds::{
    bmds_grad_locations_masked, bmds_log_density_masked, classical_mds_init, DistanceMatrix,
    LatentConfiguration, PairMask,
};
use crate::cache::LikelihoodCache;
use crate::error::{Error, Result};
use crate::geometry::{
    adapt_epsilon, adaptation_gain, max_epsilon, propose_in_region, region_log_prior, ProposalTuning,
    UncertaintyRegion,
};
use crate::gradients::{log_likelihood_and_gradient, ExecutionPlan};
use crate::model::{log_prior_params, EventCatalog, HawkesParams, ParamPriors};

/// Prior sd of `ln σ²` in BMDS mode (mean 0).
pub const LOG_SIGMA2_PRIOR_SD: f64 = 2.0;

/// Probabilities of the three move types in one random-scan iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanProbabilities {
    pub params: f64,
    /// Block location moves (grouped) or HMC (BMDS).
    pub locations: f64,
    pub sigma2: f64,
}

impl ScanProbabilities {
    pub fn grouped() -> Self {
        Self { params: 0.2, locations: 0.8, sigma2: 0.0 }
    }

    pub fn bmds() -> Self {
        Self { params: 0.3, locations: 0.6, sigma2: 0.1 }
    }

    /// Parameter moves only, for chains with locations held fixed.
    pub fn params_only() -> Self {
        Self { params: 1.0, locations: 0.0, sigma2: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.params, self.locations, self.sigma2];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig(format!("scan probabilities {all:?} must be >= 0")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("scan probabilities {all:?} must sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total iterations including burn-in; one iteration is one random-scan move.
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    /// Events per grouped location move.
    pub block_size: usize,
    /// A location iteration sweeps every movable event in random disjoint
    /// blocks; otherwise it moves a single random block.
    pub location_sweep: bool,
    pub leapfrog_steps: usize,
    /// Initial HMC step size.
    pub step_size: f64,
    /// Acceptance target for HMC step-size adaptation.
    pub hmc_target: f64,
    /// Move only this many randomly chosen events per HMC step; `None` moves all.
    pub hmc_block: Option<usize>,
    /// Initial random-walk sd of each log-parameter.
    pub param_step: f64,
    /// Initial random-walk sd of `ln σ²`.
    pub sigma2_step: f64,
    pub scan: ScanProbabilities,
    pub seed: u64,
    pub plan: ExecutionPlan,
    /// Rebuild cached likelihood sums after this many location moves.
    pub refresh_interval: u64,
    /// Replace the Hawkes likelihood by a constant (prior-only runs).
    pub flat_likelihood: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            thin: 10,
            block_size: 10,
            location_sweep: false,
            leapfrog_steps: 20,
            step_size: 0.01,
            hmc_target: 0.65,
            hmc_block: None,
            param_step: 0.1,
            sigma2_step: 0.1,
            scan: ScanProbabilities::grouped(),
            seed: 1,
            plan: ExecutionPlan::serial(),
            refresh_interval: 1_000,
            flat_likelihood: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.block_size == 0 || self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig(
                "iterations, thin, block size and leapfrog steps must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        for (name, v) in [
            ("step size", self.step_size),
            ("parameter step", self.param_step),
            ("sigma2 step", self.sigma2_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} {v} must be > 0")));
            }
        }
        if !(self.hmc_target > 0.0 && self.hmc_target < 1.0) {
            return Err(Error::InvalidConfig(format!("HMC target {} not in (0, 1)", self.hmc_target)));
        }
        if self.hmc_block == Some(0) {
            return Err(Error::InvalidConfig("HMC block size must be positive".into()));
        }
        self.scan.validate()
    }

    /// Same configuration with an independent stream for chain `index`.
    pub fn for_chain(&self, index: u64) -> Self {
        Self { seed: self.seed.wrapping_add(index), ..self.clone() }
    }
}

/// How locations enter the model.
#[derive(Debug, Clone, PartialEq)]
pub enum LocationModel {
    /// Each location is uniform on its uncertainty region.
    Grouped(Vec<UncertaintyRegion>),
    /// Latent locations explain observed dissimilarities.
    Bmds { distances: DistanceMatrix, mask: PairMask },
}

/// Everything the sampler conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    dim: usize,
    times: Vec<f64>,
    initial: Vec<f64>,
    model: LocationModel,
}

impl ModelData {
    /// Grouped model; each region's center is the observed location and the
    /// chain's starting point. Times come from `catalog`.
    pub fn grouped(catalog: &EventCatalog, regions: Vec<UncertaintyRegion>) -> Result<Self> {
        if regions.len() != catalog.len() {
            return Err(Error::DimensionMismatch { expected: catalog.len(), found: regions.len() });
        }
        let dim = catalog.dim();
        let mut initial = Vec::with_capacity(dim * regions.len());
        for r in &regions {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.dim() });
            }
            initial.extend_from_slice(r.center());
        }
        Ok(Self { dim, times: catalog.times().to_vec(), initial, model: LocationModel::Grouped(regions) })
    }

    /// Replaces the chain's starting locations; each must lie in its region.
    pub fn with_initial_locations(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.initial.len() {
            return Err(Error::DimensionMismatch { expected: self.initial.len(), found: initial.len() });
        }
        if let LocationModel::Grouped(regions) = &self.model {
            for (k, r) in regions.iter().enumerate() {
                if !r.contains(&initial[k * self.dim..(k + 1) * self.dim]) {
                    return Err(Error::InvalidRegion(format!("initial location {k} lies outside its region")));
                }
            }
        }
        self.initial = initial;
        Ok(self)
    }

    /// Locations fixed at the catalog's observed values.
    pub fn fixed(catalog: &EventCatalog) -> Result<Self> {
        let regions = (0..catalog.len())
            .map(|n| UncertaintyRegion::point(catalog.location(n).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::grouped(catalog, regions)
    }

    /// BMDS-Hawkes model in `dim` latent dimensions, initialized by classical MDS.
    /// `mask` selects the pairs entering the BMDS density (all when `None`).
    pub fn bmds(times: Vec<f64>, distances: DistanceMatrix, dim: usize, mask: Option<PairMask>) -> Result<Self> {
        if dim == 0 || dim > crate::model::MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if times.len() != distances.len() {
            return Err(Error::DimensionMismatch { expected: distances.len(), found: times.len() });
        }
        // validates times
        EventCatalog::from_parts(1, vec![0.0; times.len()], times.clone())?;
        let mask = mask.unwrap_or_else(|| PairMask::all(distances.len()));
        let initial = classical_mds_init(&distances, dim)?.coordinates;
        Ok(Self { dim, times, initial, model: LocationModel::Bmds { distances, mask } })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Starting locations: region centers or the MDS embedding.
    pub fn initial_locations(&self) -> &[f64] {
        &self.initial
    }

    pub fn model(&self) -> &LocationModel {
        &self.model
    }

    pub fn regions(&self) -> Option<&[UncertaintyRegion]> {
        match &self.model {
            LocationModel::Grouped(r) => Some(r),
            LocationModel::Bmds { .. } => None,
        }
    }

    pub fn is_bmds(&self) -> bool {
        matches!(self.model, LocationModel::Bmds { .. })
    }

    fn bmds_density(&self, x: &[f64], sigma2: f64, plan: &ExecutionPlan) -> Result<f64> {
        match &self.model {
            LocationModel::Bmds { distances, mask } => {
                let cfg = LatentConfiguration::new(self.dim, x.to_vec(), sigma2)?;
                bmds_log_density_masked(distances, &cfg, mask, plan)
            }
            LocationModel::Grouped(_) => Ok(0.0),
        }
    }
}

/// HMC step size and its counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcTuning {
    pub step_size: f64,
    pub attempts: u64,
    pub accepts: u64,
    pub updates: u64,
}

/// Full mutable state of one chain, including its random stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: HawkesParams,
    pub dim: usize,
    /// Row-major `N × dim`.
    pub locations: Vec<f64>,
    pub sigma2: Option<f64>,
    pub location_tuning: Vec<ProposalTuning>,
    /// Log-scale random-walk sds, in `HawkesParams::NAMES` order.
    pub param_tuning: [ProposalTuning; 6],
    pub sigma2_tuning: ProposalTuning,
    pub hmc: HmcTuning,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

/// Prior medians adjusted to satisfy `h < τx` and `1/ω < τt` by setting
/// `τx ≥ 2h` and `τt ≥ 2/ω`.
pub fn initial_params(priors: &ParamPriors) -> HawkesParams {
    let mut p = priors.medians();
    p.tau_x = p.tau_x.max(2.0 * p.h);
    p.tau_t = p.tau_t.max(2.0 / p.omega);
    p
}

impl ChainState {
    /// Locations at their starting values, parameters at [`initial_params`],
    /// `σ²` (BMDS) at the mean squared residual of the MDS fit.
    pub fn initial(data: &ModelData, priors: &ParamPriors, config: &SamplerConfig) -> Result<Self> {
        let n = data.len();
        let location_tuning = match &data.model {
            LocationModel::Grouped(regions) => regions.iter().map(ProposalTuning::for_region).collect(),
            LocationModel::Bmds { .. } => vec![ProposalTuning::new(1.0)?; n],
        };
        let sigma2 = match &data.model {
            LocationModel::Bmds { distances, .. } => {
                let fit = DistanceMatrix::from_points(&data.initial, data.dim);
                let (mut ss, mut yy, mut m) = (0.0, 0.0, 0usize);
                for i in 0..n {
                    for j in 0..i {
                        let r = distances.get(i, j) - fit.get(i, j);
                        ss += r * r;
                        yy += distances.get(i, j).powi(2);
                        m += 1;
                    }
                }
                let m = m.max(1) as f64;
                Some((ss / m).max(1e-4 * yy / m).max(1e-12))
            }
            LocationModel::Grouped(_) => None,
        };
        Ok(Self {
            params: initial_params(priors),
            dim: data.dim,
            locations: data.initial.clone(),
            sigma2,
            location_tuning,
            param_tuning: [ProposalTuning::new(config.param_step)?; 6],
            sigma2_tuning: ProposalTuning::new(config.sigma2_step)?,
            hmc: HmcTuning { step_size: config.step_size, attempts: 0, accepts: 0, updates: 0 },
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }
}

/// One thinned draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub params: HawkesParams,
    pub sigma2: Option<f64>,
    pub locations: Vec<f64>,
    pub log_likelihood: f64,
}

/// `ln` of the density of the log-transformed parameters: prior on the
/// prior-scale variables plus the log-Jacobian `Σ ln v`.
fn log_prior_log_scale(p: &HawkesParams, priors: &ParamPriors) -> f64 {
    let lp = log_prior_params(p, priors);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + ParamPriors::prior_scale_values(p).iter().map(|v| v.ln()).sum::<f64>()
}

fn log_sigma2_prior(sigma2: f64) -> f64 {
    let z = sigma2.ln() / LOG_SIGMA2_PRIOR_SD;
    -0.5 * z * z
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

/// Hawkes plus BMDS potential energy `U(X) = −[ℓ(X) + ln p(Y | X, σ²)]` and its gradient.
pub struct BmdsPotential<'a> {
    data: &'a ModelData,
    params: HawkesParams,
    sigma2: f64,
    plan: ExecutionPlan,
    flat: bool,
}

impl<'a> BmdsPotential<'a> {
    pub fn new(data: &'a ModelData, params: HawkesParams, sigma2: f64, plan: ExecutionPlan) -> Self {
        Self { data, params, sigma2, plan, flat: false }
    }

    /// Drops the Hawkes term, leaving the BMDS density alone.
    pub fn without_hawkes(mut self) -> Self {
        self.flat = true;
        self
    }

    /// `Some((U, ∇U))`, or `None` where the potential is infinite or its
    /// gradient is singular.
    pub fn evaluate(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let LocationModel::Bmds { distances, mask } = &self.data.model else {
            return Err(Error::InvalidConfig("HMC requires the BMDS model".into()));
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let dim = self.data.dim;
        let (ll, mut grad) = if self.flat {
            (0.0, vec![0.0; x.len()])
        } else {
            let catalog = EventCatalog::from_parts(dim, x.to_vec(), self.data.times.clone())?;
            match log_likelihood_and_gradient(&catalog, &self.params, &self.plan) {
                Ok((ll, g)) => (ll, g.into_vec()),
                Err(Error::GradientUndefined) => return Ok(None),
                Err(e) => return Err(e),
            }
        };
        let cfg = LatentConfiguration::new(dim, x.to_vec(), self.sigma2)?;
        let density = bmds_log_density_masked(distances, &cfg, mask, &self.plan)?;
        let bg = match bmds_grad_locations_masked(distances, &cfg, mask, &self.plan) {
            Ok(g) => g,
            Err(Error::CoincidentPoints(..)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let u = -(ll + density);
        for (g, b) in grad.iter_mut().zip(bg) {
            *g = -(*g + b);
        }
        if !u.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(None);
        }
        Ok(Some((u, grad)))
    }
}

/// End point of a leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub potential: f64,
}

/// `U + ½‖p‖²`.
pub fn hamiltonian(potential: f64, momentum: &[f64]) -> f64 {
    potential + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>()
}

/// `steps` leapfrog steps of size `step` from `(x, p)`, where `grad_x` is
/// `∇U(x)`. `potential` returns `Some((U, ∇U))` or `None` where undefined;
/// the trajectory is `None` as soon as any evaluation is undefined.
pub fn leapfrog<F>(
    x: &[f64],
    p: &[f64],
    grad_x: &[f64],
    step: f64,
    steps: usize,
    mut potential: F,
) -> Result<Option<Trajectory>>
where
    F: FnMut(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
{
    let mut x = x.to_vec();
    let mut p = p.to_vec();
    for (pi, g) in p.iter_mut().zip(grad_x) {
        *pi -= 0.5 * step * g;
    }
    let mut u = f64::NAN;
    for l in 0..steps {
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += step * pi;
        }
        let Some((value, grad)) = potential(&x)? else {
            return Ok(None);
        };
        u = value;
        let w = if l + 1 == steps { 0.5 * step } else { step };
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi -= w * g;
        }
    }
    Ok(Some(Trajectory { position: x, momentum: p, potential: u }))
}

/// Acceptance counts by move type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoveCounts {
    pub attempts: u64,
    pub accepts: u64,
}

impl MoveCounts {
    fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChainStats {
    pub params: MoveCounts,
    pub locations: MoveCounts,
    pub sigma2: MoveCounts,
}

/// One chain: state, conditioning data and cached likelihood terms.
pub struct Sampler<'a> {
    config: SamplerConfig,
    priors: ParamPriors,
    data: &'a ModelData,
    state: ChainState,
    cache: LikelihoodCache,
    bmds_value: f64,
    stats: ChainStats,
    location_moves: u64,
}

impl<'a> Sampler<'a> {
    pub fn new(config: SamplerConfig, priors: ParamPriors, data: &'a ModelData) -> Result<Self> {
        config.validate()?;
        let state = ChainState::initial(data, &priors, &config)?;
        Self::from_state(config, priors, data, state)
    }

    /// Resumes from an explicit state (its parameters must be admissible).
    pub fn from_state(config: SamplerConfig, priors: ParamPriors, data: &'a ModelData, state: ChainState) -> Result<Self> {
        config.validate()?;
        priors.validate()?;
        if state.locations.len() != data.len() * data.dim {
            return Err(Error::DimensionMismatch { expected: data.len() * data.dim, found: state.locations.len() });
        }
        if !state.params.is_admissible() {
            return Err(Error::InvalidParameter(format!("initial parameters {:?} are not admissible", state.params)));
        }
        if data.is_bmds() && state.sigma2.is_none() {
            return Err(Error::InvalidConfig("BMDS mode needs sigma2".into()));
        }
        if !data.is_bmds() && config.scan.sigma2 > 0.0 {
            return Err(Error::InvalidConfig("sigma2 moves need the BMDS model".into()));
        }
        let cache = LikelihoodCache::new(
            data.dim,
            data.times.clone(),
            &state.locations,
            state.params,
            config.flat_likelihood,
        )?;
        let bmds_value = match state.sigma2 {
            Some(s2) => data.bmds_density(&state.locations, s2, &config.plan)?,
            None => 0.0,
        };
        let s = Self { config, priors, data, state, cache, bmds_value, stats: ChainStats::default(), location_moves: 0 };
        if !s.log_posterior().is_finite() {
            return Err(Error::InvalidParameter("initial log-posterior is not finite".into()));
        }
        Ok(s)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn stats(&self) -> &ChainStats {
        &self.stats
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Cached Hawkes log-likelihood at the current state.
    pub fn log_likelihood(&self) -> f64 {
        self.cache.value()
    }

    /// Log-posterior (up to a constant) in the sampler's coordinates.
    pub fn log_posterior(&self) -> f64 {
        let mut lp = self.cache.value() + log_prior_log_scale(&self.state.params, &self.priors) + self.bmds_value;
        if let Some(regions) = self.data.regions() {
            let d = self.data.dim;
            for (n, r) in regions.iter().enumerate() {
                lp += region_log_prior(&self.state.locations[n * d..(n + 1) * d], r);
            }
        }
        if let Some(s2) = self.state.sigma2 {
            lp += log_sigma2_prior(s2);
        }
        lp
    }

    fn adapting(&self) -> bool {
        self.state.iteration < self.config.burn_in
    }

    /// Log-scale random walk on one uniformly chosen parameter.
    pub fn step_params(&mut self) -> Result<bool> {
        let k = self.state.rng.random_range(0..6);
        let z: f64 = self.state.rng.sample(StandardNormal);
        let step = self.state.param_tuning[k].epsilon;
        let mut a = self.state.params.to_array();
        a[k] *= (step * z).exp();
        let proposed = HawkesParams::from_array(a);
        let lp_new = log_prior_log_scale(&proposed, &self.priors);
        let accepted = if lp_new == f64::NEG_INFINITY {
            // constraint violation: the likelihood is never evaluated
            self.state.rng.random::<f64>();
            false
        } else {
            let cand = self.cache.propose_params(&self.state.locations, proposed)?;
            let log_alpha = cand.value - self.cache.value() + lp_new
                - log_prior_log_scale(&self.state.params, &self.priors);
            let ok = accept(log_alpha, &mut self.state.rng);
            if ok {
                self.cache.commit(cand);
                self.state.params = proposed;
            }
            ok
        };
        self.state.param_tuning[k].record(accepted);
        if self.adapting() {
            self.state.param_tuning[k] = adapt_epsilon(self.state.param_tuning[k], accepted);
        }
        self.stats.params.record(accepted);
        Ok(accepted)
    }

    /// Joint move of the given events inside their regions. Point regions stay put.
    pub fn step_locations_block(&mut self, block: &[usize]) -> Result<bool> {
        let Some(regions) = self.data.regions() else {
            return Err(Error::InvalidConfig("block location moves need the grouped model".into()));
        };
        let d = self.data.dim;
        let n = self.data.len();
        let moving: Vec<usize> = block.iter().copied().filter(|&k| !regions[k].is_point()).collect();
        if let Some(&bad) = block.iter().find(|&&k| k >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        if moving.is_empty() {
            return Ok(true);
        }
        let old = self.state.locations.clone();
        let mut new = old.clone();
        let mut log_alpha = 0.0;
        for &k in &moving {
            let x = &old[k * d..(k + 1) * d];
            let prop = propose_in_region(x, &regions[k], &self.state.location_tuning[k], &mut self.state.rng)?;
            log_alpha += prop.log_hastings + region_log_prior(&prop.location, &regions[k]);
            new[k * d..(k + 1) * d].copy_from_slice(&prop.location);
        }
        let accepted = if log_alpha == f64::NEG_INFINITY {
            self.state.rng.random::<f64>();
            false
        } else {
            let cand = self.cache.propose_block(&old, &new, &moving)?;
            let ok = accept(log_alpha + cand.value - self.cache.value(), &mut self.state.rng);
            if ok {
                self.cache.commit(cand);
                self.state.locations = new;
            }
            ok
        };
        let adapting = self.adapting();
        for &k in &moving {
            let t = &mut self.state.location_tuning[k];
            t.record(accepted);
            if adapting {
                *t = adapt_epsilon(*t, accepted);
                t.epsilon = t.epsilon.min(max_epsilon(&regions[k]));
            }
        }
        self.stats.locations.record(accepted);
        self.location_moves += 1;
        if self.location_moves.is_multiple_of(self.config.refresh_interval) {
            self.cache.refresh(&self.state.locations)?;
        }
        Ok(accepted)
    }

    /// Disjoint blocks of movable events: one random block, or a random
    /// partition of all of them when sweeping.
    fn random_blocks(&mut self) -> Vec<Vec<usize>> {
        let regions = self.data.regions().unwrap_or(&[]);
        let movable: Vec<usize> = (0..regions.len()).filter(|&k| !regions[k].is_point()).collect();
        let take = if self.config.location_sweep {
            movable.len()
        } else {
            self.config.block_size.min(movable.len())
        };
        if take == 0 {
            return Vec::new();
        }
        let picked: Vec<usize> =
            sample_indices(&mut self.state.rng, movable.len(), take).into_iter().map(|i| movable[i]).collect();
        picked
            .chunks(self.config.block_size)
            .map(|c| {
                let mut b = c.to_vec();
                b.sort_unstable();
                b
            })
            .collect()
    }

    /// One HMC transition on the latent locations (all events, or a random
    /// subset of `hmc_block` events).
    pub fn hmc_step_locations(&mut self) -> Result<bool> {
        let Some(sigma2) = self.state.sigma2 else {
            return Err(Error::InvalidConfig("HMC needs the BMDS model".into()));
        };
        let mut potential = BmdsPotential::new(self.data, self.state.params, sigma2, self.config.plan);
        potential.flat = self.config.flat_likelihood;
        let d = self.data.dim;
        let n = self.data.len();
        let active: Option<Vec<bool>> = self.config.hmc_block.filter(|&b| b < n).map(|b| {
            let mut mask = vec![false; n * d];
            for k in sample_indices(&mut self.state.rng, n, b) {
                mask[k * d..(k + 1) * d].fill(true);
            }
            mask
        });
        let masked = |g: &mut Vec<f64>| {
            if let Some(m) = &active {
                for (v, on) in g.iter_mut().zip(m) {
                    if !on {
                        *v = 0.0;
                    }
                }
            }
        };
        let x0 = self.state.locations.clone();
        let Some((u0, mut g0)) = potential.evaluate(&x0)? else {
            return Err(Error::GradientUndefined);
        };
        masked(&mut g0);
        let mut p0: Vec<f64> = (0..n * d).map(|_| self.state.rng.sample(StandardNormal)).collect();
        masked(&mut p0);
        let eta = self.state.hmc.step_size;
        let traj = leapfrog(&x0, &p0, &g0, eta, self.config.leapfrog_steps, |x| {
            Ok(potential.evaluate(x)?.map(|(u, mut g)| {
                masked(&mut g);
                (u, g)
            }))
        })?;
        let h0 = hamiltonian(u0, &p0);
        let (log_alpha, traj) = match traj {
            Some(t) => {
                let h1 = hamiltonian(t.potential, &t.momentum);
                if h1.is_finite() {
                    (h0 - h1, Some(t))
                } else {
                    (f64::NEG_INFINITY, None)
                }
            }
            None => (f64::NEG_INFINITY, None),
        };
        let accepted = accept(log_alpha, &mut self.state.rng);
        if accepted {
            let t = traj.expect("accepted trajectories are finite");
            self.state.locations = t.position;
            self.cache.refresh(&self.state.locations)?;
            self.bmds_value = self.data.bmds_density(&self.state.locations, sigma2, &self.config.plan)?;
        }
        let hmc = &mut self.state.hmc;
        hmc.attempts += 1;
        hmc.accepts += accepted as u64;
        if self.state.iteration < self.config.burn_in {
            hmc.updates += 1;
            let a = log_alpha.min(0.0).exp();
            hmc.step_size *= (adaptation_gain(hmc.updates) * (a - self.config.hmc_target)).exp();
        }
        self.stats.locations.record(accepted);
        Ok(accepted)
    }

    /// Random walk on `ln σ²`.
    pub fn step_sigma2(&mut self) -> Result<bool> {
        let Some(s2) = self.state.sigma2 else {
            return Err(Error::InvalidConfig("sigma2 moves need the BMDS model".into()));
        };
        let z: f64 = self.state.rng.sample(StandardNormal);
        let proposed = s2 * (self.state.sigma2_tuning.epsilon * z).exp();
        let value = self.data.bmds_density(&self.state.locations, proposed, &self.config.plan)?;
        let log_alpha = value - self.bmds_value + log_sigma2_prior(proposed) - log_sigma2_prior(s2);
        let accepted = accept(log_alpha, &mut self.state.rng);
        if accepted {
            self.state.sigma2 = Some(proposed);
            self.bmds_value = value;
        }
        self.state.sigma2_tuning.record(accepted);
        if self.adapting() {
            self.state.sigma2_tuning = adapt_epsilon(self.state.sigma2_tuning, accepted);
        }
        self.stats.sigma2.record(accepted);
        Ok(accepted)
    }

    /// One random-scan iteration.
    pub fn step(&mut self) -> Result<()> {
        let u: f64 = self.state.rng.random();
        let scan = self.config.scan;
        if u < scan.params {
            self.step_params()?;
        } else if u < scan.params + scan.locations {
            if self.data.is_bmds() {
                self.hmc_step_locations()?;
            } else {
                for block in self.random_blocks() {
                    self.step_locations_block(&block)?;
                }
            }
        } else if scan.sigma2 > 0.0 {
            self.step_sigma2()?;
        } else {
            self.step_params()?;
        }
        self.state.iteration += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            iteration: self.state.iteration,
            params: self.state.params,
            sigma2: self.state.sigma2,
            locations: self.state.locations.clone(),
            log_likelihood: self.cache.value(),
        }
    }

    /// Runs to the configured iteration count, passing each thinned
    /// post-burn-in snapshot to `sink`.
    pub fn run<F: FnMut(Snapshot)>(&mut self, mut sink: F) -> Result<()> {
        while self.state.iteration < self.config.iterations {
            if let Err(e) = self.step() {
                error!(
                    "chain aborted at iteration {}: params {:?}, sigma2 {:?}, log-likelihood {}",
                    self.state.iteration,
                    self.state.params,
                    self.state.sigma2,
                    self.cache.value()
                );
                return Err(Error::ChainAborted { iteration: self.state.iteration, source: Box::new(e) });
            }
            let s = self.state.iteration;
            if s > self.config.burn_in && (s - self.config.burn_in).is_multiple_of(self.config.thin) {
                sink(self.snapshot());
            }
        }
        Ok(())
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }
}

/// Thinned draws plus the final state of a completed chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub snapshots: Vec<Snapshot>,
    pub state: ChainState,
    pub stats: ChainStats,
}

/// Runs one chain from the default initial state.
pub fn run_chain(config: &SamplerConfig, priors: &ParamPriors, data: &ModelData) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(config.clone(), *priors, data)?;
    let mut snapshots = Vec::new();
    sampler.run(|s| snapshots.push(s))?;
    let stats = sampler.stats;
    Ok(ChainOutput { snapshots, state: sampler.into_state(), stats })
}
