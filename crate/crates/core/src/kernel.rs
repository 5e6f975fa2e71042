//! Per-pair intensity kernels and the per-event accumulation loops shared by
//! the likelihood, its gradient and the sampler's cached likelihood.

use crate::math::{log_sum_exp, tree_sum, LN_2PI};
use crate::model::HawkesParams;

/// Exponent magnitude beyond which direct summation is abandoned for the
/// max-shifted route.
pub(crate) const DIRECT_SUM_LIMIT: f64 = 500.0;

/// Dispatches a const-generic function over the supported dimensions 1..=8.
macro_rules! dispatch_dim {
    ($dim:expr, $func:ident :: <_> ( $($arg:expr),* $(,)? )) => {
        match $dim {
            1 => $func::<1>($($arg),*),
            2 => $func::<2>($($arg),*),
            3 => $func::<3>($($arg),*),
            4 => $func::<4>($($arg),*),
            5 => $func::<5>($($arg),*),
            6 => $func::<6>($($arg),*),
            7 => $func::<7>($($arg),*),
            8 => $func::<8>($($arg),*),
            d => unreachable!("dimension {d} escaped validation"),
        }
    };
}
pub(crate) use dispatch_dim;

/// Borrowed event data: row-major `N × D` locations plus times.
#[derive(Clone, Copy)]
pub(crate) struct EventsView<'a> {
    pub dim: usize,
    pub locations: &'a [f64],
    pub times: &'a [f64],
}

impl EventsView<'_> {
    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn point<const D: usize>(&self, n: usize) -> [f64; D] {
        let mut p = [0.0; D];
        p.copy_from_slice(&self.locations[n * D..(n + 1) * D]);
        p
    }
}

#[inline]
pub(crate) fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for d in 0..D {
        let diff = a[d] - b[d];
        s += diff * diff;
    }
    s
}

/// Parameter-dependent constants of the two pair kernels.
///
/// Background pair term (`t_n ≠ t_n'`):
/// `bg_norm · exp(-‖Δx‖²/(2τx²) - Δt²/(2τt²))` with
/// `bg_norm = μ0 / (τx^D τt (2π)^((D+1)/2))`.
///
/// Triggering pair term (`t_n' < t_n`):
/// `se_norm · exp(-ω Δt - ‖Δx‖²/(2h²))` with `se_norm = θ ω / (h^D (2π)^(D/2))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairKernel {
    pub bg_norm: f64,
    pub ln_bg_norm: f64,
    pub bg_space: f64,
    pub bg_time: f64,
    pub se_norm: f64,
    pub ln_se_norm: f64,
    pub omega: f64,
    pub se_space: f64,
    /// 1/τx², the background spatial precision in the gradient.
    pub bg_precision: f64,
    /// 1/h², the triggering spatial precision in the gradient.
    pub se_precision: f64,
}

impl PairKernel {
    pub fn new(p: &HawkesParams, dim: usize) -> Self {
        let d = dim as f64;
        let ln_bg_norm = p.mu0.ln()
            - d * p.tau_x.ln()
            - p.tau_t.ln()
            - 0.5 * (d + 1.0) * LN_2PI;
        let ln_se_norm = p.theta.ln() + p.omega.ln() - d * p.h.ln() - 0.5 * d * LN_2PI;
        Self {
            bg_norm: p.mu0 / (p.tau_x.powi(dim as i32) * p.tau_t)
                / (2.0 * std::f64::consts::PI).powf(0.5 * (d + 1.0)),
            ln_bg_norm,
            bg_space: 0.5 / (p.tau_x * p.tau_x),
            bg_time: 0.5 / (p.tau_t * p.tau_t),
            se_norm: p.theta * p.omega / p.h.powi(dim as i32)
                / (2.0 * std::f64::consts::PI).powf(0.5 * d),
            ln_se_norm,
            omega: p.omega,
            se_space: 0.5 / (p.h * p.h),
            bg_precision: 1.0 / (p.tau_x * p.tau_x),
            se_precision: 1.0 / (p.h * p.h),
        }
    }

    /// Exponent of the background pair term; only meaningful when `dt != 0`.
    #[inline]
    pub fn bg_exponent(&self, d2: f64, dt: f64) -> f64 {
        -(d2 * self.bg_space + dt * dt * self.bg_time)
    }

    /// Exponent of the triggering pair term; only meaningful when `dt > 0`.
    #[inline]
    pub fn se_exponent(&self, d2: f64, dt: f64) -> f64 {
        -(self.omega * dt + d2 * self.se_space)
    }

    /// `(μ_nn', ξ_nn')` for `dt = t_n - t_n'`.
    #[inline]
    pub fn pair(&self, d2: f64, dt: f64) -> (f64, f64) {
        let mu = if dt != 0.0 { self.bg_norm * self.bg_exponent(d2, dt).exp() } else { 0.0 };
        let xi = if dt > 0.0 { self.se_norm * self.se_exponent(d2, dt).exp() } else { 0.0 };
        (mu, xi)
    }
}

/// Background and triggering rates at one event, plus the stable log of their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EventRates {
    pub mu: f64,
    pub xi: f64,
    pub ln_lambda: f64,
}

/// Running state of one event's accumulation: raw exponential sums and the
/// largest exponent seen for each component.
#[derive(Clone, Copy)]
pub(crate) struct Accum {
    bg_sum: f64,
    se_sum: f64,
    bg_max: f64,
    se_max: f64,
}

impl Accum {
    pub const EMPTY: Self = Self {
        bg_sum: 0.0,
        se_sum: 0.0,
        bg_max: f64::NEG_INFINITY,
        se_max: f64::NEG_INFINITY,
    };

    #[inline]
    fn add<const D: usize>(&mut self, k: &PairKernel, x: &[f64; D], t: f64, y: &[f64; D], s: f64) {
        let dt = t - s;
        if dt == 0.0 {
            return;
        }
        let d2 = sq_dist(x, y);
        let a = k.bg_exponent(d2, dt);
        self.bg_sum += a.exp();
        self.bg_max = self.bg_max.max(a);
        if dt > 0.0 {
            let b = k.se_exponent(d2, dt);
            self.se_sum += b.exp();
            self.se_max = self.se_max.max(b);
        }
    }
}

/// Turns accumulated raw sums into rates, falling back to the max-shifted
/// log-sum-exp route when the direct sums cannot represent the result.
fn finish<const D: usize>(
    n: usize,
    view: &EventsView<'_>,
    k: &PairKernel,
    acc: Accum,
) -> EventRates {
    let mu = k.bg_norm * acc.bg_sum;
    let xi = k.se_norm * acc.se_sum;
    let log_max = (k.ln_bg_norm + acc.bg_max).max(k.ln_se_norm + acc.se_max);
    if log_max == f64::NEG_INFINITY {
        // no contributing pair at all
        return EventRates { mu, xi, ln_lambda: f64::NEG_INFINITY };
    }
    let representable = |max: f64| max == f64::NEG_INFINITY || max >= -DIRECT_SUM_LIMIT;
    let lambda = mu + xi;
    if log_max.abs() <= DIRECT_SUM_LIMIT
        && representable(acc.bg_max)
        && representable(acc.se_max)
        && lambda > 0.0
        && lambda.is_finite()
    {
        return EventRates { mu, xi, ln_lambda: lambda.ln() };
    }
    shifted_rates::<D>(n, view, k)
}

/// Second pass that keeps every pair term in log space.
fn shifted_rates<const D: usize>(n: usize, view: &EventsView<'_>, k: &PairKernel) -> EventRates {
    let x = view.point::<D>(n);
    let t = view.times[n];
    let mut bg_terms = Vec::new();
    let mut se_terms = Vec::new();
    for m in 0..view.len() {
        let dt = t - view.times[m];
        if dt == 0.0 {
            continue;
        }
        let d2 = sq_dist(&x, &view.point::<D>(m));
        bg_terms.push(k.ln_bg_norm + k.bg_exponent(d2, dt));
        if dt > 0.0 {
            se_terms.push(k.ln_se_norm + k.se_exponent(d2, dt));
        }
    }
    let ln_mu = log_sum_exp(&bg_terms);
    let ln_xi = log_sum_exp(&se_terms);
    EventRates { mu: ln_mu.exp(), xi: ln_xi.exp(), ln_lambda: log_sum_exp(&[ln_mu, ln_xi]) }
}

/// Rates at event `n`, accumulated sequentially over `n' = 0..N`.
pub(crate) fn event_rates<const D: usize>(
    n: usize,
    view: &EventsView<'_>,
    k: &PairKernel,
) -> EventRates {
    let x = view.point::<D>(n);
    let t = view.times[n];
    let mut acc = Accum::EMPTY;
    for m in 0..view.len() {
        acc.add(k, &x, t, &view.point::<D>(m), view.times[m]);
    }
    finish::<D>(n, view, k, acc)
}

/// Rates at event `n` accumulated in `lanes.len()` interleaved lanes over
/// blocks of consecutive partners, then combined with a fixed tree reduction.
pub(crate) fn event_rates_blocked<const D: usize>(
    n: usize,
    view: &EventsView<'_>,
    k: &PairKernel,
    lanes: &mut [Accum],
) -> EventRates {
    let x = view.point::<D>(n);
    let t = view.times[n];
    let width = lanes.len();
    lanes.fill(Accum::EMPTY);
    let len = view.len();
    let mut start = 0;
    while start < len {
        let end = (start + width).min(len);
        for (lane, m) in lanes.iter_mut().zip(start..end) {
            lane.add(k, &x, t, &view.point::<D>(m), view.times[m]);
        }
        start = end;
    }
    let bg: Vec<f64> = lanes.iter().map(|l| l.bg_sum).collect();
    let se: Vec<f64> = lanes.iter().map(|l| l.se_sum).collect();
    let acc = Accum {
        bg_sum: tree_sum(&bg),
        se_sum: tree_sum(&se),
        bg_max: lanes.iter().map(|l| l.bg_max).fold(f64::NEG_INFINITY, f64::max),
        se_max: lanes.iter().map(|l| l.se_max).fold(f64::NEG_INFINITY, f64::max),
    };
    finish::<D>(n, view, k, acc)
}
