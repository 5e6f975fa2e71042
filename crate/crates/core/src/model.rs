//! Spatiotemporal Hawkes process: events, parameters, intensity decomposition
//! and the log-likelihood.
//!
//! The conditional intensity at event `n` is `λ_n = μ_n + ξ_n` with
//!
//! ```text
//! μ_n = μ0 / (τx^D τt) Σ_{n'} 1[t_n ≠ t_n'] φ_D((x_n − x_n')/τx) φ((t_n − t_n')/τt)
//! ξ_n = θ ω / h^D     Σ_{n'} 1[t_n' < t_n] exp(−ω (t_n − t_n')) φ_D((x_n − x_n')/h)
//! ```
//!
//! and the integrated intensity over `ℝ^D × [0, t_N]` splits into per-event terms
//! `Λ_n = μ0 (Φ((t_N − t_n)/τt) − Φ(−t_n/τt)) − θ (exp(−ω (t_N − t_n)) − 1)`.

use crate::error::{Error, Result};
use crate::kernel::{dispatch_dim, event_rates, EventsView, PairKernel};
use crate::math::norm_interval_mass;
use crate::truncnorm::TruncatedNormal;

pub const MAX_DIM: usize = 8;

/// A single event: a location in `ℝ^D` and a nonnegative time.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub location: Vec<f64>,
    pub time: f64,
}

impl Event {
    pub fn new(location: Vec<f64>, time: f64) -> Self {
        Self { location, time }
    }
}

/// Time-ordered events sharing one spatial dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCatalog {
    dim: usize,
    locations: Vec<f64>,
    times: Vec<f64>,
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

impl EventCatalog {
    /// Builds a catalog from events already sorted by nondecreasing time.
    pub fn new(dim: usize, events: &[Event]) -> Result<Self> {
        check_dim(dim)?;
        let mut locations = Vec::with_capacity(events.len() * dim);
        let mut times = Vec::with_capacity(events.len());
        for (i, e) in events.iter().enumerate() {
            if e.location.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.location.len() });
            }
            locations.extend_from_slice(&e.location);
            times.push(e.time);
            let _ = i;
        }
        Self::from_parts(dim, locations, times)
    }

    /// Sorts `events` stably by time and builds the catalog. Also returns the
    /// permutation: entry `i` is the input index of the `i`-th catalog event.
    pub fn from_unsorted(dim: usize, events: &[Event]) -> Result<(Self, Vec<usize>)> {
        let mut order: Vec<usize> = (0..events.len()).collect();
        if let Some(i) = events.iter().position(|e| e.time.is_nan()) {
            return Err(Error::InvalidEvent { index: i, reason: "time is NaN".into() });
        }
        order.sort_by(|&a, &b| events[a].time.total_cmp(&events[b].time));
        let sorted: Vec<Event> = order.iter().map(|&i| events[i].clone()).collect();
        Ok((Self::new(dim, &sorted)?, order))
    }

    /// Builds a catalog from a row-major `N × dim` location buffer and times.
    pub fn from_parts(dim: usize, locations: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if locations.len() != times.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: times.len() * dim,
                found: locations.len(),
            });
        }
        for (n, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidEvent {
                    index: n,
                    reason: format!("time {t} is not finite and nonnegative"),
                });
            }
            if n > 0 && t < times[n - 1] {
                return Err(Error::UnsortedTimes(n));
            }
            if locations[n * dim..(n + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidEvent {
                    index: n,
                    reason: "location has non-finite coordinates".into(),
                });
            }
        }
        Ok(Self { dim, locations, times })
    }

    /// Same times, new locations.
    pub fn with_locations(&self, locations: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.dim, locations, self.times.clone())
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

    pub fn location(&self, n: usize) -> &[f64] {
        &self.locations[n * self.dim..(n + 1) * self.dim]
    }

    pub fn time(&self, n: usize) -> f64 {
        self.times[n]
    }

    /// Row-major `N × D` location buffer.
    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Time of the last event, `t_N`.
    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn events(&self) -> Vec<Event> {
        (0..self.len()).map(|n| Event::new(self.location(n).to_vec(), self.times[n])).collect()
    }

    pub(crate) fn view(&self) -> EventsView<'_> {
        EventsView { dim: self.dim, locations: &self.locations, times: &self.times }
    }
}

/// The six Hawkes parameters `(μ0, τx, τt, θ, ω, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HawkesParams {
    /// Background weight.
    pub mu0: f64,
    /// Background spatial lengthscale.
    pub tau_x: f64,
    /// Background temporal lengthscale.
    pub tau_t: f64,
    /// Self-excitatory weight (expected number of direct offspring).
    pub theta: f64,
    /// Self-excitatory temporal decay rate.
    pub omega: f64,
    /// Self-excitatory spatial lengthscale.
    pub h: f64,
}

impl HawkesParams {
    pub const NAMES: [&'static str; 6] = ["mu0", "tau_x", "tau_t", "theta", "omega", "h"];

    /// Validated constructor: all positive, `1/ω < τt` and `h < τx`.
    pub fn new(mu0: f64, tau_x: f64, tau_t: f64, theta: f64, omega: f64, h: f64) -> Result<Self> {
        let p = Self { mu0, tau_x, tau_t, theta, omega, h };
        if !p.is_admissible() {
            return Err(Error::InvalidParameter(format!(
                "parameters {p:?} violate positivity or 0 < 1/omega < tau_t, 0 < h < tau_x"
            )));
        }
        Ok(p)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.mu0, self.tau_x, self.tau_t, self.theta, self.omega, self.h]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { mu0: a[0], tau_x: a[1], tau_t: a[2], theta: a[3], omega: a[4], h: a[5] }
    }

    /// Strict positivity plus the two ordering constraints.
    pub fn is_admissible(&self) -> bool {
        let a = self.to_array();
        a.iter().all(|v| v.is_finite() && *v > 0.0)
            && 1.0 / self.omega < self.tau_t
            && self.h < self.tau_x
    }

    /// Checks the weaker requirements the likelihood needs: no NaN, weights
    /// nonnegative, lengthscales and decay rate positive.
    pub(crate) fn check_evaluable(&self) -> Result<()> {
        if self.to_array().iter().any(|v| v.is_nan()) {
            return Err(Error::NotANumber("parameters"));
        }
        if !(self.mu0 >= 0.0 && self.theta >= 0.0) {
            return Err(Error::InvalidParameter("mu0 and theta must be nonnegative".into()));
        }
        if !(self.tau_x > 0.0 && self.tau_t > 0.0 && self.omega > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidParameter(
                "tau_x, tau_t, omega and h must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-event intensity decomposition and log-likelihood terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRateBreakdown {
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
    /// `μ_n + ξ_n`; may underflow to zero for isolated events, see `ln_lambda`.
    pub lambda: Vec<f64>,
    /// `ln λ_n`, computed stably; `-inf` exactly when no pair contributes.
    pub ln_lambda: Vec<f64>,
    pub big_lambda: Vec<f64>,
    pub ell: Vec<f64>,
}

impl EventRateBreakdown {
    /// Indices with zero intensity (their `ell` is `-inf`).
    pub fn zero_rate_events(&self) -> Vec<usize> {
        (0..self.ln_lambda.len()).filter(|&n| self.ln_lambda[n] == f64::NEG_INFINITY).collect()
    }
}

/// Truncated-normal prior scales. `μ0` and `θ` get half-normal priors; the
/// inverse lengthscales `1/τx`, `1/τt`, `ω`, `1/h` get half-normal priors with
/// the background scales ten times the self-excitatory ones by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPriors {
    pub mu0_sd: f64,
    pub theta_sd: f64,
    pub inv_tau_x_sd: f64,
    pub inv_tau_t_sd: f64,
    pub omega_sd: f64,
    pub inv_h_sd: f64,
}

impl ParamPriors {
    pub const BACKGROUND_RATIO: f64 = 10.0;

    /// Self-excitatory inverse-lengthscale sd `base`; background sds `10 · base`.
    pub fn with_base_sd(base: f64) -> Result<Self> {
        let p = Self {
            mu0_sd: 1.0,
            theta_sd: 1.0,
            inv_tau_x_sd: Self::BACKGROUND_RATIO * base,
            inv_tau_t_sd: Self::BACKGROUND_RATIO * base,
            omega_sd: base,
            inv_h_sd: base,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu0_sd,
            self.theta_sd,
            self.inv_tau_x_sd,
            self.inv_tau_t_sd,
            self.omega_sd,
            self.inv_h_sd,
        ];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("prior sds must be positive: {all:?}")))
        }
    }

    /// The prior-scale variable for each parameter, in `HawkesParams::NAMES`
    /// order: `(μ0, 1/τx, 1/τt, θ, ω, 1/h)`.
    pub fn prior_scale_values(p: &HawkesParams) -> [f64; 6] {
        [p.mu0, 1.0 / p.tau_x, 1.0 / p.tau_t, p.theta, p.omega, 1.0 / p.h]
    }

    fn sds(&self) -> [f64; 6] {
        [
            self.mu0_sd,
            self.inv_tau_x_sd,
            self.inv_tau_t_sd,
            self.theta_sd,
            self.omega_sd,
            self.inv_h_sd,
        ]
    }

    /// Prior medians of the six parameters, ignoring the ordering constraints.
    pub fn medians(&self) -> HawkesParams {
        // median of a half-normal with scale s is s Φ⁻¹(3/4)
        let q = crate::math::norm_quantile(0.75);
        let s = self.sds();
        HawkesParams {
            mu0: q * s[0],
            tau_x: 1.0 / (q * s[1]),
            tau_t: 1.0 / (q * s[2]),
            theta: q * s[3],
            omega: q * s[4],
            h: 1.0 / (q * s[5]),
        }
    }
}

impl Default for ParamPriors {
    fn default() -> Self {
        Self::with_base_sd(1.0).expect("unit base sd is valid")
    }
}

fn check_index(n: usize, len: usize) -> Result<()> {
    if n < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index: n, len })
    }
}

/// Background and self-excitatory components `(μ_nn', ξ_nn')` of the pair term.
pub fn pairwise_components(
    n: usize,
    nprime: usize,
    catalog: &EventCatalog,
    params: &HawkesParams,
) -> Result<(f64, f64)> {
    check_index(n, catalog.len())?;
    check_index(nprime, catalog.len())?;
    params.check_evaluable()?;
    let k = PairKernel::new(params, catalog.dim());
    let d2: f64 = catalog
        .location(n)
        .iter()
        .zip(catalog.location(nprime))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(k.pair(d2, catalog.time(n) - catalog.time(nprime)))
}

/// `λ_nn' = μ_nn' + ξ_nn'`, the contribution of event `nprime` to the intensity at event `n`.
pub fn pairwise_rate(
    n: usize,
    nprime: usize,
    catalog: &EventCatalog,
    params: &HawkesParams,
) -> Result<f64> {
    let (mu, xi) = pairwise_components(n, nprime, catalog, params)?;
    Ok(mu + xi)
}

/// `Λ_n`, the integrated-intensity contribution attached to event `n`.
pub(crate) fn integrated_term(t: f64, t_end: f64, params: &HawkesParams) -> f64 {
    let background =
        params.mu0 * norm_interval_mass(-t / params.tau_t, (t_end - t) / params.tau_t);
    let excitation = -params.theta * (-params.omega * (t_end - t)).exp_m1();
    background + excitation
}

/// `Λ(t_N) = Σ_n Λ_n`; depends only on times and parameters.
pub fn integrated_intensity(times: &[f64], params: &HawkesParams) -> f64 {
    let t_end = times.last().copied().unwrap_or(0.0);
    times.iter().map(|&t| integrated_term(t, t_end, params)).sum()
}

fn validate_for_likelihood(catalog: &EventCatalog, params: &HawkesParams) -> Result<()> {
    params.check_evaluable()?;
    if catalog.is_empty() {
        return Err(Error::TooFewEvents { required: 1, found: 0 });
    }
    Ok(())
}

/// Full per-event decomposition of the intensity and log-likelihood.
pub fn rate_breakdown(catalog: &EventCatalog, params: &HawkesParams) -> Result<EventRateBreakdown> {
    validate_for_likelihood(catalog, params)?;
    let view = catalog.view();
    let k = PairKernel::new(params, catalog.dim());
    let t_end = catalog.end_time();
    let n_events = catalog.len();
    let mut out = EventRateBreakdown {
        mu: Vec::with_capacity(n_events),
        xi: Vec::with_capacity(n_events),
        lambda: Vec::with_capacity(n_events),
        ln_lambda: Vec::with_capacity(n_events),
        big_lambda: Vec::with_capacity(n_events),
        ell: Vec::with_capacity(n_events),
    };
    for n in 0..n_events {
        let r = dispatch_dim!(catalog.dim(), event_rates::<_>(n, &view, &k));
        let big = integrated_term(catalog.time(n), t_end, params);
        out.mu.push(r.mu);
        out.xi.push(r.xi);
        out.lambda.push(r.mu + r.xi);
        out.ln_lambda.push(r.ln_lambda);
        out.big_lambda.push(big);
        out.ell.push(r.ln_lambda - big);
    }
    Ok(out)
}

/// `ℓ = Σ_n (ln λ_n − Λ_n)`; `-inf` when any event has zero intensity.
pub fn log_likelihood(catalog: &EventCatalog, params: &HawkesParams) -> Result<f64> {
    validate_for_likelihood(catalog, params)?;
    let view = catalog.view();
    let k = PairKernel::new(params, catalog.dim());
    let t_end = catalog.end_time();
    let mut total = 0.0;
    for n in 0..catalog.len() {
        let r = dispatch_dim!(catalog.dim(), event_rates::<_>(n, &view, &k));
        total += r.ln_lambda - integrated_term(catalog.time(n), t_end, params);
    }
    Ok(total)
}

/// Sum of truncated-normal log-densities of `(μ0, 1/τx, 1/τt, θ, ω, 1/h)`;
/// `-inf` when the parameters leave the admissible set.
pub fn log_prior_params(params: &HawkesParams, priors: &ParamPriors) -> f64 {
    if !params.is_admissible() {
        return f64::NEG_INFINITY;
    }
    ParamPriors::prior_scale_values(params)
        .iter()
        .zip(priors.sds())
        .map(|(&v, sd)| match TruncatedNormal::positive(sd) {
            Ok(d) => d.ln_pdf(v),
            Err(_) => f64::NEG_INFINITY,
        })
        .sum()
}

/// `θ / (θ + μ0)`: the share of events attributed to self-excitation.
pub fn normalized_se_weight(params: &HawkesParams) -> f64 {
    params.theta / (params.theta + params.mu0)
}
