//! Cluster simulation of the spatiotemporal Hawkes process, coarsening by
//! rounding, and the coverage study comparing fixed- and sampled-location fits.

use std::collections::VecDeque;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::diagnostics::{location_coverage, QuantitySummary};
use crate::error::{Error, Result};
use crate::geometry::UncertaintyRegion;
use crate::mcmc::{run_chain, ModelData, SamplerConfig, ScanProbabilities};
use crate::model::{EventCatalog, ParamPriors};

/// One isotropic Gaussian component of the background spatial density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMode {
    pub mean: Vec<f64>,
    pub sd: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub modes: Vec<GaussianMode>,
    /// Mean of the Poisson background count.
    pub expected_background: f64,
    /// Events live on `[0, horizon]`.
    pub horizon: f64,
    /// Mean offspring per event (`θ`).
    pub expected_children: f64,
    /// Rate of the exponential parent-to-child time gap.
    pub omega: f64,
    /// Per-coordinate sd of the child's spatial offset.
    pub h: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mode = |x: f64, y: f64| GaussianMode { mean: vec![x, y], sd: 1.0, weight: 1.0 / 3.0 };
        Self {
            modes: vec![mode(-5.0, 0.0), mode(0.0, 5.0), mode(5.0, 0.0)],
            expected_background: 200.0,
            horizon: 100.0,
            expected_children: 0.5,
            omega: 1.0,
            h: 0.5,
        }
    }
}

impl SimConfig {
    pub fn dim(&self) -> usize {
        self.modes.first().map_or(0, |m| m.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.expected_children >= 0.0) {
            return Err(Error::InvalidConfig("expected children must be >= 0".into()));
        }
        if self.expected_children >= 1.0 {
            return Err(Error::Supercritical(self.expected_children));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("need at least one background mode".into()));
        }
        let dim = self.dim();
        if dim == 0 || self.modes.iter().any(|m| m.mean.len() != dim) {
            return Err(Error::InvalidConfig("background modes must share a positive dimension".into()));
        }
        if self.modes.iter().any(|m| !(m.sd > 0.0 && m.weight >= 0.0) || m.mean.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidConfig("mode sds must be > 0, weights >= 0, means finite".into()));
        }
        let total: f64 = self.modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("mode weights sum to {total}, not 1")));
        }
        for (name, v) in [
            ("expected background", self.expected_background),
            ("horizon", self.horizon),
            ("omega", self.omega),
            ("h", self.h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} {v} must be > 0")));
            }
        }
        Ok(())
    }

    /// Branching-process mean catalog size ignoring the horizon: `E[B] / (1 − m)`.
    pub fn expected_size(&self) -> f64 {
        self.expected_background / (1.0 - self.expected_children)
    }
}

/// A simulated catalog with its ancestry, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCatalog {
    pub catalog: EventCatalog,
    /// 0 for background events.
    pub generation: Vec<u32>,
    /// Index (into the sorted catalog) of each event's parent.
    pub parent: Vec<Option<usize>>,
}

struct Raw {
    location: Vec<f64>,
    time: f64,
    generation: u32,
    parent: Option<usize>,
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Background events from the mixture with uniform times, then generations of
/// offspring until extinction; children past the horizon are discarded.
pub fn simulate_catalog<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimulatedCatalog> {
    config.validate()?;
    let dim = config.dim();
    let mut raw: Vec<Raw> = Vec::new();
    for _ in 0..poisson_count(config.expected_background, rng) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mode = config
            .modes
            .iter()
            .find(|m| {
                acc += m.weight;
                u < acc
            })
            .unwrap_or_else(|| config.modes.last().expect("validated nonempty"));
        let location = mode
            .mean
            .iter()
            .map(|c| c + mode.sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        raw.push(Raw { location, time: rng.random::<f64>() * config.horizon, generation: 0, parent: None });
    }
    let gap = Exp::new(config.omega).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut queue: VecDeque<usize> = (0..raw.len()).collect();
    while let Some(p) = queue.pop_front() {
        for _ in 0..poisson_count(config.expected_children, rng) {
            let time = raw[p].time + gap.sample(rng);
            let location: Vec<f64> = raw[p]
                .location
                .iter()
                .map(|c| c + config.h * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if time > config.horizon {
                continue;
            }
            raw.push(Raw { location, time, generation: raw[p].generation + 1, parent: Some(p) });
            queue.push_back(raw.len() - 1);
        }
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].time.total_cmp(&raw[b].time));
    let mut rank = vec![0; raw.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut locations = Vec::with_capacity(raw.len() * dim);
    let mut times = Vec::with_capacity(raw.len());
    let mut generation = Vec::with_capacity(raw.len());
    let mut parent = Vec::with_capacity(raw.len());
    for &i in &order {
        locations.extend_from_slice(&raw[i].location);
        times.push(raw[i].time);
        generation.push(raw[i].generation);
        parent.push(raw[i].parent.map(|p| rank[p]));
    }
    Ok(SimulatedCatalog { catalog: EventCatalog::from_parts(dim, locations, times)?, generation, parent })
}

/// Rounds one coordinate to the nearest multiple of `precision`, ties away from zero.
pub fn round_to(x: f64, precision: f64) -> f64 {
    (x / precision).round() * precision
}

/// Rounds every coordinate to the `precision` grid and emits the square of
/// half-width `precision / 2` around each rounded location.
pub fn coarsen(catalog: &EventCatalog, precision: f64) -> Result<(EventCatalog, Vec<UncertaintyRegion>)> {
    if !(precision > 0.0 && precision.is_finite()) {
        return Err(Error::InvalidConfig(format!("precision {precision} must be > 0")));
    }
    let locations: Vec<f64> = catalog.locations().iter().map(|&x| round_to(x, precision)).collect();
    let coarse = EventCatalog::from_parts(catalog.dim(), locations, catalog.times().to_vec())?;
    let regions = (0..coarse.len())
        .map(|n| UncertaintyRegion::square(coarse.location(n).to_vec(), 0.5 * precision))
        .collect::<Result<Vec<_>>>()?;
    Ok((coarse, regions))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LocationMode {
    /// Locations held at the rounded values.
    Fixed,
    /// Locations sampled inside their squares.
    Sampled,
}

impl LocationMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub sim: SimConfig,
    pub precisions: Vec<f64>,
    pub levels: Vec<f64>,
    pub sampler: SamplerConfig,
    pub priors: ParamPriors,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            precisions: vec![0.1, 0.5, 1.0],
            levels: vec![0.5, 0.8, 0.95],
            sampler: SamplerConfig::default(),
            priors: ParamPriors::default(),
            seed: 2024,
        }
    }
}

/// Outcome of one chain in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub precision: f64,
    pub mode: LocationMode,
    pub n_events: usize,
    /// Whether the central interval at each configured level covers the true `h`.
    pub h_covered: Vec<bool>,
    pub h_mean: f64,
    pub h_interval95: (f64, f64),
    /// Fraction of true locations inside their 95% credible balls.
    pub location_coverage: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub precision: f64,
    pub ci_level: f64,
    pub mode: LocationMode,
    pub covered_fraction: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationCoverageRow {
    pub precision: f64,
    pub mode: LocationMode,
    pub mean_proportion: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub locations: Vec<LocationCoverageRow>,
    pub results: Vec<ReplicateResult>,
    /// `(replicate, precision, mode, message)` for chains that failed.
    pub failures: Vec<(usize, f64, LocationMode, String)>,
}

impl CoverageReport {
    pub fn row(&self, precision: f64, level: f64, mode: LocationMode) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.precision == precision && r.ci_level == level && r.mode == mode)
    }

    pub fn location_row(&self, precision: f64, mode: LocationMode) -> Option<&LocationCoverageRow> {
        self.locations.iter().find(|r| r.precision == precision && r.mode == mode)
    }
}

type ChainOutcome = std::result::Result<ReplicateResult, (usize, f64, LocationMode, String)>;

fn run_replicate(config: &CoverageConfig, replicate: usize) -> Vec<ChainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64);
    let sim = match simulate_catalog(&config.sim, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            return config
                .precisions
                .iter()
                .flat_map(|&p| {
                    [LocationMode::Fixed, LocationMode::Sampled].map(|m| Err((replicate, p, m, e.to_string())))
                })
                .collect();
        }
    };
    let truth = sim.catalog.locations();
    let mut out = Vec::new();
    for (pi, &precision) in config.precisions.iter().enumerate() {
        for (mi, mode) in [LocationMode::Fixed, LocationMode::Sampled].into_iter().enumerate() {
            let chain_index = (replicate * config.precisions.len() + pi) * 2 + mi;
            let result = run_one(config, &sim.catalog, precision, mode, chain_index as u64).map(|(snaps, rate)| {
                let h: Vec<f64> = snaps.iter().map(|s| s.params.h).collect();
                let h_covered = config
                    .levels
                    .iter()
                    .map(|&l| {
                        let (lo, hi) = QuantitySummary::interval(&h, l);
                        lo <= config.sim.h && config.sim.h <= hi
                    })
                    .collect();
                let covered = location_coverage(&snaps, truth, sim.catalog.dim(), 0.95);
                ReplicateResult {
                    replicate,
                    precision,
                    mode,
                    n_events: sim.catalog.len(),
                    h_covered,
                    h_mean: h.iter().sum::<f64>() / h.len() as f64,
                    h_interval95: QuantitySummary::interval(&h, 0.95),
                    location_coverage: covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64,
                    acceptance_rate: rate,
                }
            });
            out.push(result.map_err(|e| (replicate, precision, mode, e.to_string())));
        }
    }
    out
}

fn run_one(
    config: &CoverageConfig,
    catalog: &EventCatalog,
    precision: f64,
    mode: LocationMode,
    chain_index: u64,
) -> Result<(Vec<crate::mcmc::Snapshot>, f64)> {
    let (coarse, regions) = coarsen(catalog, precision)?;
    let mut sampler = config.sampler.for_chain(chain_index);
    let data = match mode {
        LocationMode::Fixed => {
            sampler.scan = ScanProbabilities::params_only();
            ModelData::fixed(&coarse)?
        }
        LocationMode::Sampled => {
            // start from a draw of the region prior: centers stack relatives on
            // one point, which drags h toward zero early in the chain
            let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
            rng.set_stream(1);
            let init: Vec<f64> = regions.iter().flat_map(|r| r.sample_uniform(&mut rng)).collect();
            ModelData::grouped(&coarse, regions)?.with_initial_locations(init)?
        }
    };
    let out = run_chain(&sampler, &config.priors, &data)?;
    if out.snapshots.is_empty() {
        return Err(Error::InvalidConfig("chain produced no snapshots".into()));
    }
    let rate = match mode {
        LocationMode::Fixed => out.stats.params.rate(),
        LocationMode::Sampled => out.stats.locations.rate(),
    };
    Ok((out.snapshots, rate))
}

/// Simulates `replicates` catalogs, fits fixed- and sampled-location chains
/// at every precision and tabulates coverage of the true `h`. Replicates run
/// in parallel with per-replicate random streams; results are merged in
/// replicate order, so the report does not depend on the thread count.
pub fn coverage_study(replicates: usize, config: &CoverageConfig) -> Result<CoverageReport> {
    config.sim.validate()?;
    config.sampler.validate()?;
    if config.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidConfig("credible levels must lie in (0, 1)".into()));
    }
    let outcomes: Vec<Vec<ChainOutcome>> =
        (0..replicates).into_par_iter().map(|r| run_replicate(config, r)).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => results.push(r),
            Err(f) => {
                warn!("replicate {} precision {} {} failed: {}", f.0, f.1, f.2.label(), f.3);
                failures.push(f);
            }
        }
    }
    let mut rows = Vec::new();
    let mut locations = Vec::new();
    for &precision in &config.precisions {
        for mode in [LocationMode::Fixed, LocationMode::Sampled] {
            let matching: Vec<&ReplicateResult> =
                results.iter().filter(|r| r.precision == precision && r.mode == mode).collect();
            let failed = failures.iter().filter(|f| f.1 == precision && f.2 == mode).count();
            let denom = matching.len().max(1) as f64;
            for (li, &level) in config.levels.iter().enumerate() {
                rows.push(CoverageRow {
                    precision,
                    ci_level: level,
                    mode,
                    covered_fraction: matching.iter().filter(|r| r.h_covered[li]).count() as f64 / denom,
                    replicates: matching.len(),
                    failures: failed,
                });
            }
            locations.push(LocationCoverageRow {
                precision,
                mode,
                mean_proportion: matching.iter().map(|r| r.location_coverage).sum::<f64>() / denom,
                replicates: matching.len(),
            });
        }
    }
    Ok(CoverageReport { rows, locations, results, failures })
}
