//! Location gradient of the Hawkes log-likelihood, with a serial reference and
//! a blocked many-worker execution plan.
//!
//! For event `n`,
//!
//! ```text
//! ∂ℓ/∂x_n = Σ_{n'} [ (μ_nn'/λ_n + μ_n'n/λ_n') / τx² + (ξ_nn'/λ_n + ξ_n'n/λ_n') / h² ] (x_n' − x_n)
//! ```
//!
//! Both routes run in two passes: all `ln λ_n` first, then the gradient rows
//! reading those rates. The plan splits events into `workers` contiguous
//! partitions; inside a partition each event's partner loop accumulates into
//! `block_width` interleaved lanes that are combined by a fixed tree
//! reduction, so results depend only on `(workers, block_width, N)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::{
    dispatch_dim, event_rates, event_rates_blocked, sq_dist, Accum, EventsView, PairKernel,
};
use crate::math::tree_sum;
use crate::model::{integrated_term, EventCatalog, HawkesParams};

/// `N × D` matrix of `∂ℓ/∂x_{nd}`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationGradient {
    dim: usize,
    values: Vec<f64>,
}

impl LocationGradient {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % dim, 0, "gradient buffer is not N × D");
        Self { dim, values }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self { dim, values: vec![0.0; n * dim] }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `Σ_n ∂ℓ/∂x_n`, zero up to rounding by translation invariance.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for row in self.values.chunks_exact(self.dim) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Work decomposition for the parallel kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionPlan {
    /// Number of workers `B`, each owning a contiguous range of events.
    pub workers: usize,
    /// Inner block width `J`: partners are visited `J` at a time into `J` lanes.
    pub block_width: usize,
}

impl ExecutionPlan {
    pub fn new(workers: usize, block_width: usize) -> Result<Self> {
        if workers == 0 || block_width == 0 {
            return Err(Error::InvalidConfig(format!(
                "execution plan needs workers >= 1 and block width >= 1 (got {workers}, {block_width})"
            )));
        }
        Ok(Self { workers, block_width })
    }

    pub fn serial() -> Self {
        Self { workers: 1, block_width: 1 }
    }

    /// Event ranges per worker: `⌊N/B⌋` events each, the last worker taking the remainder.
    pub fn partitions(&self, n: usize) -> Vec<std::ops::Range<usize>> {
        let base = n / self.workers;
        (0..self.workers)
            .map(|b| {
                let start = b * base;
                let end = if b + 1 == self.workers { n } else { (b + 1) * base };
                start..end
            })
            .collect()
    }
}

impl Default for ExecutionPlan {
    fn default() -> Self {
        Self::serial()
    }
}

/// How gradient coefficients are formed from the cached rates.
#[derive(Clone, Copy)]
enum RateScale<'a> {
    /// `1/λ_n` representable for every event: multiply pair terms directly.
    Inverse(&'a [f64]),
    /// Rates span extreme magnitudes: keep ratios in log space.
    Log(&'a [f64]),
}

const INVERSE_SAFE: f64 = 300.0;

fn rate_scale<'a>(ln_lambda: &'a [f64], inv: &'a mut Vec<f64>, k: &PairKernel) -> RateScale<'a> {
    let moderate = |v: f64| v == f64::NEG_INFINITY || v.abs() <= INVERSE_SAFE;
    if ln_lambda.iter().all(|v| v.abs() <= INVERSE_SAFE)
        && moderate(k.ln_bg_norm)
        && moderate(k.ln_se_norm)
    {
        inv.clear();
        inv.extend(ln_lambda.iter().map(|v| (-v).exp()));
        RateScale::Inverse(inv)
    } else {
        RateScale::Log(ln_lambda)
    }
}

/// Scalar weight on `(x_m − x_n)` for the pair `(n, m)`; `dt = t_n − t_m`.
#[inline]
fn pair_coefficient(k: &PairKernel, scale: RateScale<'_>, n: usize, m: usize, d2: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return 0.0;
    }
    let a = k.bg_exponent(d2, dt);
    // ξ_nm when m precedes n, ξ_mn when n precedes m; both share exponent form
    let b = k.se_exponent(d2, dt.abs());
    match scale {
        RateScale::Inverse(inv) => {
            let bg = k.bg_norm * a.exp() * (inv[n] + inv[m]);
            let se = k.se_norm * b.exp() * if dt > 0.0 { inv[n] } else { inv[m] };
            bg * k.bg_precision + se * k.se_precision
        }
        RateScale::Log(ln) => {
            let lb = k.ln_bg_norm + a;
            let bg = (lb - ln[n]).exp() + (lb - ln[m]).exp();
            let target = if dt > 0.0 { ln[n] } else { ln[m] };
            let se = (k.ln_se_norm + b - target).exp();
            bg * k.bg_precision + se * k.se_precision
        }
    }
}

fn gradient_row<const D: usize>(
    n: usize,
    view: &EventsView<'_>,
    k: &PairKernel,
    scale: RateScale<'_>,
    out: &mut [f64],
) {
    let x = view.point::<D>(n);
    let t = view.times[n];
    let mut g = [0.0; D];
    for m in 0..view.len() {
        let y = view.point::<D>(m);
        let c = pair_coefficient(k, scale, n, m, sq_dist(&x, &y), t - view.times[m]);
        for d in 0..D {
            g[d] += c * (y[d] - x[d]);
        }
    }
    out.copy_from_slice(&g);
}

fn gradient_row_blocked<const D: usize>(
    n: usize,
    view: &EventsView<'_>,
    k: &PairKernel,
    scale: RateScale<'_>,
    lanes: &mut [[f64; D]],
    out: &mut [f64],
) {
    let x = view.point::<D>(n);
    let t = view.times[n];
    let width = lanes.len();
    lanes.fill([0.0; D]);
    let len = view.len();
    let mut start = 0;
    while start < len {
        let end = (start + width).min(len);
        for (lane, m) in lanes.iter_mut().zip(start..end) {
            let y = view.point::<D>(m);
            let c = pair_coefficient(k, scale, n, m, sq_dist(&x, &y), t - view.times[m]);
            for d in 0..D {
                lane[d] += c * (y[d] - x[d]);
            }
        }
        start = end;
    }
    let mut column = vec![0.0; width];
    for d in 0..D {
        for (slot, lane) in column.iter_mut().zip(lanes.iter()) {
            *slot = lane[d];
        }
        out[d] = tree_sum(&column);
    }
}

fn check_inputs(catalog: &EventCatalog, params: &HawkesParams) -> Result<()> {
    params.check_evaluable()?;
    if catalog.is_empty() {
        return Err(Error::TooFewEvents { required: 1, found: 0 });
    }
    Ok(())
}

fn serial_ln_rates(view: &EventsView<'_>, k: &PairKernel) -> Vec<f64> {
    (0..view.len())
        .map(|n| dispatch_dim!(view.dim, event_rates::<_>(n, view, k)).ln_lambda)
        .collect()
}

fn serial_gradient(view: &EventsView<'_>, k: &PairKernel, ln_lambda: &[f64]) -> Result<Vec<f64>> {
    if ln_lambda.contains(&f64::NEG_INFINITY) {
        return Err(Error::GradientUndefined);
    }
    let mut inv = Vec::new();
    let scale = rate_scale(ln_lambda, &mut inv, k);
    let dim = view.dim;
    let mut out = vec![0.0; view.len() * dim];
    for (n, row) in out.chunks_exact_mut(dim).enumerate() {
        dispatch_dim!(dim, gradient_row::<_>(n, view, k, scale, row));
    }
    Ok(out)
}

/// Analytic `∂ℓ/∂X`, single-threaded reference.
pub fn grad_locations_serial(
    catalog: &EventCatalog,
    params: &HawkesParams,
) -> Result<LocationGradient> {
    check_inputs(catalog, params)?;
    let view = catalog.view();
    let k = PairKernel::new(params, catalog.dim());
    let ln_lambda = serial_ln_rates(&view, &k);
    Ok(LocationGradient::new(catalog.dim(), serial_gradient(&view, &k, &ln_lambda)?))
}

/// Runs `f(range, out_chunk)` on one scoped thread per partition; `out` is
/// split so that each worker owns the rows of its range (`stride` values per event).
pub(crate) fn for_each_partition<T, F>(plan: &ExecutionPlan, n: usize, stride: usize, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(std::ops::Range<usize>, &mut [T]) + Sync,
{
    let parts = plan.partitions(n);
    if plan.workers == 1 {
        f(parts[0].clone(), out);
        return;
    }
    std::thread::scope(|scope| {
        let mut rest = out;
        for range in parts {
            let (mine, tail) = rest.split_at_mut(range.len() * stride);
            rest = tail;
            let f = &f;
            scope.spawn(move || f(range, mine));
        }
    });
}

fn blocked_ln_rates(view: &EventsView<'_>, k: &PairKernel, plan: &ExecutionPlan) -> Vec<f64> {
    let mut ln_lambda = vec![0.0; view.len()];
    for_each_partition(plan, view.len(), 1, &mut ln_lambda, |range, out| {
        let mut lanes = vec![Accum::EMPTY; plan.block_width];
        for (slot, n) in out.iter_mut().zip(range) {
            *slot = dispatch_dim!(view.dim, event_rates_blocked::<_>(n, view, k, &mut lanes))
                .ln_lambda;
        }
    });
    ln_lambda
}

fn blocked_gradient<const D: usize>(
    view: &EventsView<'_>,
    k: &PairKernel,
    scale: RateScale<'_>,
    plan: &ExecutionPlan,
) -> Vec<f64> {
    let mut out = vec![0.0; view.len() * D];
    for_each_partition(plan, view.len(), D, &mut out, |range, rows| {
        let mut lanes = vec![[0.0; D]; plan.block_width];
        for (row, n) in rows.chunks_exact_mut(D).zip(range) {
            gradient_row_blocked::<D>(n, view, k, scale, &mut lanes, row);
        }
    });
    out
}

/// Analytic `∂ℓ/∂X` under an execution plan. For `(1, 1)` the result is
/// bit-identical to [`grad_locations_serial`].
pub fn grad_locations_parallel(
    catalog: &EventCatalog,
    params: &HawkesParams,
    plan: &ExecutionPlan,
) -> Result<LocationGradient> {
    Ok(log_likelihood_and_gradient(catalog, params, plan)?.1)
}

/// Log-likelihood under an execution plan. Per-worker partial sums run in
/// event order and are merged by a fixed tree in worker order.
pub fn log_likelihood_parallel(
    catalog: &EventCatalog,
    params: &HawkesParams,
    plan: &ExecutionPlan,
) -> Result<f64> {
    check_inputs(catalog, params)?;
    let view = catalog.view();
    let k = PairKernel::new(params, catalog.dim());
    let ln_lambda = blocked_ln_rates(&view, &k, plan);
    Ok(sum_log_likelihood(catalog, params, plan, &ln_lambda))
}

fn sum_log_likelihood(
    catalog: &EventCatalog,
    params: &HawkesParams,
    plan: &ExecutionPlan,
    ln_lambda: &[f64],
) -> f64 {
    let t_end = catalog.end_time();
    let partials: Vec<f64> = plan
        .partitions(catalog.len())
        .into_iter()
        .map(|range| {
            let mut s = 0.0;
            for n in range {
                s += ln_lambda[n] - integrated_term(catalog.time(n), t_end, params);
            }
            s
        })
        .collect();
    tree_sum(&partials)
}

/// Log-likelihood and location gradient sharing the rate pass.
pub fn log_likelihood_and_gradient(
    catalog: &EventCatalog,
    params: &HawkesParams,
    plan: &ExecutionPlan,
) -> Result<(f64, LocationGradient)> {
    check_inputs(catalog, params)?;
    let view = catalog.view();
    let k = PairKernel::new(params, catalog.dim());
    let ln_lambda = blocked_ln_rates(&view, &k, plan);
    if ln_lambda.contains(&f64::NEG_INFINITY) {
        return Err(Error::GradientUndefined);
    }
    let ll = sum_log_likelihood(catalog, params, plan, &ln_lambda);
    let mut inv = Vec::new();
    let scale = rate_scale(&ln_lambda, &mut inv, &k);
    let grad = dispatch_dim!(catalog.dim(), blocked_gradient::<_>(&view, &k, scale, plan));
    Ok((ll, LocationGradient::new(catalog.dim(), grad)))
}

/// Bitwise fingerprint of a float buffer for cross-plan equality checks.
pub fn checksum(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
    })
}

/// One timing measurement of the parallel kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub workers: usize,
    pub block_width: usize,
    pub wall_seconds: f64,
    pub checksum: u64,
}

/// Times `log_likelihood_and_gradient` once per plan (best of `repeats`).
/// The checksum covers every gradient entry. Rows do not depend on the
/// partitioning, so it matches across worker counts for a fixed `J`; the
/// log-likelihood is left out because its per-worker partial sums do.
pub fn benchmark_plans(
    catalog: &EventCatalog,
    params: &HawkesParams,
    plans: &[ExecutionPlan],
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut best = f64::INFINITY;
        let mut sum = 0;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let (ll, grad) = log_likelihood_and_gradient(catalog, params, plan)?;
            best = best.min(start.elapsed().as_secs_f64());
            debug_assert!(ll.is_finite());
            sum = checksum(grad.as_slice());
        }
        rows.push(BenchRow {
            n: catalog.len(),
            workers: plan.workers,
            block_width: plan.block_width,
            wall_seconds: best,
            checksum: sum,
        });
    }
    Ok(rows)
}
