//! Chain diagnostics: effective sample size, posterior summaries and the
//! per-event quantities reported after a fit.

use crate::error::{Error, Result};
use crate::math::quantile_sorted;
use crate::mcmc::Snapshot;
use crate::model::{normalized_se_weight, rate_breakdown, EventCatalog, HawkesParams};

/// Effective sample size with a flag for negatively correlated chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub value: f64,
    /// Set when the estimate exceeds the series length (antithetic draws).
    pub antithetic: bool,
}

/// Geyer's initial positive sequence estimator: sums of adjacent
/// autocorrelation pairs `ρ_2m + ρ_2m+1` are accumulated while positive and
/// `ESS = S / (−1 + 2 Σ_m Γ_m)`, capped at `S log10 S`.
pub fn ess(samples: &[f64]) -> Result<EssEstimate> {
    let s = samples.len();
    if s < 10 {
        return Err(Error::SeriesTooShort(s));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotANumber("ESS series"));
    }
    let mean = samples.iter().sum::<f64>() / s as f64;
    let centered: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| -> f64 {
        centered[..s - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / s as f64
    };
    let c0 = autocov(0);
    if !(c0 > 1e-300 * mean.abs().max(1.0).powi(2)) {
        return Err(Error::ConstantSeries);
    }
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < s {
        let gamma = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if m > 0 && gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    let cap = s as f64 * (s as f64).log10();
    let value = if tau > 0.0 { (s as f64 / tau).min(cap) } else { cap };
    Ok(EssEstimate { value, antithetic: value > s as f64 })
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    /// `None` when undefined (constant or too short a series).
    pub ess: Option<f64>,
}

impl QuantitySummary {
    pub fn from_samples(name: &str, samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
        Self {
            name: name.to_string(),
            mean,
            median: quantile_sorted(&sorted, 0.5),
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
            ess: ess(samples).ok().map(|e| e.value.min(samples.len() as f64)),
        }
    }

    /// Central interval at `level` from the same draws.
    pub fn interval(samples: &[f64], level: f64) -> (f64, f64) {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let a = 0.5 * (1.0 - level);
        (quantile_sorted(&sorted, a), quantile_sorted(&sorted, 1.0 - a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// Θ components, the normalized self-excitatory weight, then `σ²` when present.
    pub quantities: Vec<QuantitySummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }
}

/// Draws of a named scalar across snapshots.
pub fn trace(snapshots: &[Snapshot], name: &str) -> Option<Vec<f64>> {
    let idx = HawkesParams::NAMES.iter().position(|n| *n == name);
    match (idx, name) {
        (Some(k), _) => Some(snapshots.iter().map(|s| s.params.to_array()[k]).collect()),
        (None, "se_weight") => Some(snapshots.iter().map(|s| normalized_se_weight(&s.params)).collect()),
        (None, "sigma2") => snapshots.iter().map(|s| s.sigma2).collect(),
        (None, "log_likelihood") => Some(snapshots.iter().map(|s| s.log_likelihood).collect()),
        _ => None,
    }
}

pub fn summarize(snapshots: &[Snapshot]) -> PosteriorSummary {
    let mut names: Vec<&str> = HawkesParams::NAMES.to_vec();
    names.push("se_weight");
    if snapshots.first().is_some_and(|s| s.sigma2.is_some()) {
        names.push("sigma2");
    }
    let quantities = names
        .into_iter()
        .filter_map(|n| trace(snapshots, n).map(|t| QuantitySummary::from_samples(n, &t)))
        .collect();
    PosteriorSummary { quantities }
}

/// Per-event posterior mean location.
pub fn posterior_mean_locations(snapshots: &[Snapshot]) -> Vec<f64> {
    let Some(first) = snapshots.first() else {
        return Vec::new();
    };
    let mut mean = vec![0.0; first.locations.len()];
    for s in snapshots {
        for (m, v) in mean.iter_mut().zip(&s.locations) {
            *m += v;
        }
    }
    let inv = 1.0 / snapshots.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// `‖(1/S) Σ_s x_n^(s) − 𝔵_n‖₂` for every event.
pub fn displacement(snapshots: &[Snapshot], observed: &[f64], dim: usize) -> Vec<f64> {
    let mean = posterior_mean_locations(snapshots);
    if mean.is_empty() {
        return vec![0.0; observed.len() / dim];
    }
    mean.chunks_exact(dim)
        .zip(observed.chunks_exact(dim))
        .map(|(m, o)| m.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

/// `(1/S) Σ_s ξ_n / (ξ_n + μ_n)` evaluated at each snapshot's state.
/// Events whose intensity vanishes contribute 0 for that draw.
pub fn self_excitation_probability(snapshots: &[Snapshot], times: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; times.len()];
    for s in snapshots {
        let catalog = EventCatalog::from_parts(dim, s.locations.clone(), times.to_vec())?;
        let b = rate_breakdown(&catalog, &s.params)?;
        for (a, (xi, lambda)) in acc.iter_mut().zip(b.xi.iter().zip(&b.lambda)) {
            if *lambda > 0.0 {
                *a += xi / lambda;
            }
        }
    }
    let inv = 1.0 / snapshots.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

/// Whether each true location lies in its 95% credible ball: centered at the
/// posterior mean with radius the 0.95 quantile of draw distances from it.
pub fn location_coverage(snapshots: &[Snapshot], truth: &[f64], dim: usize, level: f64) -> Vec<bool> {
    let mean = posterior_mean_locations(snapshots);
    let n = truth.len() / dim;
    (0..n)
        .map(|k| {
            let m = &mean[k * dim..(k + 1) * dim];
            let dist = |x: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let mut d: Vec<f64> = snapshots.iter().map(|s| dist(&s.locations[k * dim..(k + 1) * dim])).collect();
            d.sort_by(f64::total_cmp);
            dist(&truth[k * dim..(k + 1) * dim]) <= quantile_sorted(&d, level)
        })
        .collect()
}

/// Summaries and per-event quantities of a finished chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub summary: PosteriorSummary,
    pub displacement: Vec<f64>,
    pub self_excitation: Vec<f64>,
}

pub fn posterior_diagnostics(snapshots: &[Snapshot], observed: &[f64], times: &[f64], dim: usize) -> Result<Diagnostics> {
    if snapshots.is_empty() {
        return Err(Error::InvalidConfig("diagnostics need at least one snapshot".into()));
    }
    Ok(Diagnostics {
        summary: summarize(snapshots),
        displacement: displacement(snapshots, observed, dim),
        self_excitation: self_excitation_probability(snapshots, times, dim)?,
    })
}
