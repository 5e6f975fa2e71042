//! Independent oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use coarse_hawkes::{Event, EventCatalog, HawkesParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-scale random catalog: locations in [-2, 2]^D, sorted times in [0, 10].
pub fn random_catalog(rng: &mut impl Rng, n: usize, dim: usize) -> EventCatalog {
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    times.sort_by(f64::total_cmp);
    let events: Vec<Event> = times
        .into_iter()
        .map(|t| Event::new((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), t))
        .collect();
    EventCatalog::new(dim, &events).unwrap()
}

/// Random admissible parameters on unit scale.
pub fn random_params(rng: &mut impl Rng) -> HawkesParams {
    let tau_x = rng.random_range(0.6..2.0);
    let h = rng.random_range(0.2..0.9) * tau_x;
    let tau_t = rng.random_range(1.0..3.0);
    let omega = rng.random_range(1.2 / tau_t..3.0);
    HawkesParams::new(
        rng.random_range(0.2..1.5),
        tau_x,
        tau_t,
        rng.random_range(0.2..1.5),
        omega,
        h,
    )
    .unwrap()
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Product of standard-normal densities over the coordinates of `v / scale`.
pub fn gaussian_density(v: &[f64], scale: f64) -> f64 {
    v.iter().map(|x| std_normal_pdf(x / scale)).product()
}

/// Pair term written out literally, one branch per indicator.
pub fn naive_pair(
    xn: &[f64],
    tn: f64,
    xm: &[f64],
    tm: f64,
    p: &HawkesParams,
) -> (f64, f64) {
    let dim = xn.len() as i32;
    let diff: Vec<f64> = xn.iter().zip(xm).map(|(a, b)| a - b).collect();
    let mut mu = 0.0;
    if tn != tm {
        mu = p.mu0 / (p.tau_x.powi(dim) * p.tau_t)
            * gaussian_density(&diff, p.tau_x)
            * std_normal_pdf((tn - tm) / p.tau_t);
    }
    let mut xi = 0.0;
    if tm < tn {
        xi = p.theta * p.omega / p.h.powi(dim)
            * (-p.omega * (tn - tm)).exp()
            * gaussian_density(&diff, p.h);
    }
    (mu, xi)
}

/// Double-loop log-likelihood: every λ_nn' recomputed from scratch.
pub fn naive_log_likelihood(c: &EventCatalog, p: &HawkesParams) -> f64 {
    let n_events = c.len();
    let t_end = c.time(n_events - 1);
    let mut big_lambda = 0.0;
    for n in 0..n_events {
        big_lambda += p.mu0
            * (std_normal_cdf((t_end - c.time(n)) / p.tau_t) - std_normal_cdf(-c.time(n) / p.tau_t))
            - p.theta * ((-p.omega * (t_end - c.time(n))).exp() - 1.0);
    }
    let mut sum_log = 0.0;
    for n in 0..n_events {
        let mut lam = 0.0;
        for m in 0..n_events {
            let (mu, xi) = naive_pair(c.location(n), c.time(n), c.location(m), c.time(m), p);
            lam += mu + xi;
        }
        sum_log += lam.ln();
    }
    sum_log - big_lambda
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + step;
            let up = f(&buf);
            buf[i] = x[i] - step;
            let down = f(&buf);
            buf[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Entrywise relative error with a floor on the denominator so that entries
/// near zero are judged on an absolute scale.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Kolmogorov–Smirnov statistic of `samples` against a continuous cdf.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at the 0.001 level.
pub fn ks_critical_001(n: usize) -> f64 {
    1.9495 / (n as f64).sqrt()
}

/// BMDS log-density written pair by pair from the truncated-normal form.
pub fn naive_bmds_density(y: &[f64], x: &[f64], n: usize, dim: usize, sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..i {
            let delta: f64 = (0..dim)
                .map(|d| (x[i * dim + d] - x[j * dim + d]).powi(2))
                .sum::<f64>()
                .sqrt();
            let r = y[i * n + j] - delta;
            total += -0.5 * sigma2.ln() - r * r / (2.0 * sigma2) - std_normal_cdf(delta / sigma).ln();
        }
    }
    total
}

/// Symmetric noisy dissimilarities from random latent points.
pub fn noisy_distances(rng: &mut impl Rng, n: usize, dim: usize, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..dim).map(|k| (x[i * dim + k] - x[j * dim + k]).powi(2)).sum::<f64>().sqrt();
            let v = (d + noise * rng.random_range(-1.0..1.0)).abs().max(1e-3);
            y[i * n + j] = v;
            y[j * n + i] = v;
        }
    }
    (x, y)
}
