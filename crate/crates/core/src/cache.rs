//! Incrementally updated Hawkes log-likelihood for Metropolis moves.
//!
//! Per event the cache keeps the raw exponential sums of the background and
//! triggering kernels, so that weight moves cost O(N), lengthscale moves
//! rebuild one of the two sums, and moving a block of `B` locations costs O(NB).

use crate::error::Result;
use crate::model::{integrated_intensity, log_likelihood, EventCatalog, HawkesParams};

/// Relative size below which an incrementally updated sum is rebuilt from scratch.
const CANCELLATION_GUARD: f64 = 1e-6;
/// Smallest intensity trusted from the raw sums before falling back to the exact path.
const TINY_RATE: f64 = 1e-290;

#[derive(Debug, Clone, Copy)]
struct Shape {
    bg_space: f64,
    bg_time: f64,
    se_space: f64,
    omega: f64,
}

impl Shape {
    fn new(p: &HawkesParams) -> Self {
        Self {
            bg_space: 0.5 / (p.tau_x * p.tau_x),
            bg_time: 0.5 / (p.tau_t * p.tau_t),
            se_space: 0.5 / (p.h * p.h),
            omega: p.omega,
        }
    }
}

fn norms(p: &HawkesParams, dim: usize) -> (f64, f64) {
    let d = dim as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let bg = p.mu0 / (p.tau_x.powi(dim as i32) * p.tau_t) / two_pi.powf(0.5 * (d + 1.0));
    let se = p.theta * p.omega / p.h.powi(dim as i32) / two_pi.powf(0.5 * d);
    (bg, se)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub(crate) struct LikelihoodCache {
    dim: usize,
    times: Vec<f64>,
    flat: bool,
    params: HawkesParams,
    bg_raw: Vec<f64>,
    se_raw: Vec<f64>,
    big_lambda: f64,
    value: f64,
}

/// Candidate sums for a proposed move, committed only on acceptance.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    params: HawkesParams,
    bg_raw: Option<Vec<f64>>,
    se_raw: Option<Vec<f64>>,
    big_lambda: f64,
    pub value: f64,
}

impl LikelihoodCache {
    /// `flat` replaces the likelihood by the constant 0.
    pub fn new(dim: usize, times: Vec<f64>, locations: &[f64], params: HawkesParams, flat: bool) -> Result<Self> {
        let mut c = Self {
            dim,
            times,
            flat,
            params,
            bg_raw: Vec::new(),
            se_raw: Vec::new(),
            big_lambda: 0.0,
            value: 0.0,
        };
        c.refresh(locations)?;
        Ok(c)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Rebuilds every sum for the given locations.
    pub fn refresh(&mut self, locations: &[f64]) -> Result<()> {
        if self.flat {
            return Ok(());
        }
        let shape = Shape::new(&self.params);
        self.bg_raw = self.full_bg(locations, &shape);
        self.se_raw = self.full_se(locations, &shape);
        self.big_lambda = integrated_intensity(&self.times, &self.params);
        self.value = self.assemble(&self.params, &self.bg_raw, &self.se_raw, self.big_lambda, locations)?;
        Ok(())
    }

    fn point<'a>(&self, locations: &'a [f64], n: usize) -> &'a [f64] {
        &locations[n * self.dim..(n + 1) * self.dim]
    }

    fn full_bg(&self, locations: &[f64], s: &Shape) -> Vec<f64> {
        let n = self.times.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let xi = self.point(locations, i);
            for j in 0..i {
                let dt = self.times[i] - self.times[j];
                if dt != 0.0 {
                    let v = (-(sq_dist(xi, self.point(locations, j)) * s.bg_space + dt * dt * s.bg_time)).exp();
                    out[i] += v;
                    out[j] += v;
                }
            }
        }
        out
    }

    fn full_se(&self, locations: &[f64], s: &Shape) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.se_row(locations, s, i)).collect()
    }

    fn bg_row(&self, locations: &[f64], s: &Shape, i: usize) -> f64 {
        let xi = self.point(locations, i);
        let mut acc = 0.0;
        for j in 0..self.times.len() {
            let dt = self.times[i] - self.times[j];
            if dt != 0.0 {
                acc += (-(sq_dist(xi, self.point(locations, j)) * s.bg_space + dt * dt * s.bg_time)).exp();
            }
        }
        acc
    }

    fn se_row(&self, locations: &[f64], s: &Shape, i: usize) -> f64 {
        let xi = self.point(locations, i);
        let mut acc = 0.0;
        for j in 0..self.times.len() {
            let dt = self.times[i] - self.times[j];
            if dt > 0.0 {
                acc += (-(s.omega * dt + sq_dist(xi, self.point(locations, j)) * s.se_space)).exp();
            }
        }
        acc
    }

    fn assemble(
        &self,
        params: &HawkesParams,
        bg: &[f64],
        se: &[f64],
        big_lambda: f64,
        locations: &[f64],
    ) -> Result<f64> {
        let (bg_norm, se_norm) = norms(params, self.dim);
        let mut total = 0.0;
        for (b, s) in bg.iter().zip(se) {
            let lambda = bg_norm * b + se_norm * s;
            if !(lambda > TINY_RATE && lambda.is_finite()) {
                // underflow or overflow in the raw sums; the exact path shifts exponents
                let catalog = EventCatalog::from_parts(self.dim, locations.to_vec(), self.times.clone())?;
                return log_likelihood(&catalog, params);
            }
            total += lambda.ln();
        }
        Ok(total - big_lambda)
    }

    /// Log-likelihood at new parameters with the current locations.
    pub fn propose_params(&self, locations: &[f64], params: HawkesParams) -> Result<Candidate> {
        if self.flat {
            return Ok(Candidate { params, bg_raw: None, se_raw: None, big_lambda: 0.0, value: 0.0 });
        }
        let old = &self.params;
        let shape = Shape::new(&params);
        let bg_raw = (params.tau_x != old.tau_x || params.tau_t != old.tau_t)
            .then(|| self.full_bg(locations, &shape));
        let se_raw = (params.omega != old.omega || params.h != old.h).then(|| self.full_se(locations, &shape));
        let big_lambda = integrated_intensity(&self.times, &params);
        let value = self.assemble(
            &params,
            bg_raw.as_deref().unwrap_or(&self.bg_raw),
            se_raw.as_deref().unwrap_or(&self.se_raw),
            big_lambda,
            locations,
        )?;
        Ok(Candidate { params, bg_raw, se_raw, big_lambda, value })
    }

    /// Log-likelihood after the events in `block` moved from `old` to `new`
    /// (full location buffers, identical outside the block).
    pub fn propose_block(&self, old: &[f64], new: &[f64], block: &[usize]) -> Result<Candidate> {
        let params = self.params;
        if self.flat {
            return Ok(Candidate { params, bg_raw: None, se_raw: None, big_lambda: 0.0, value: 0.0 });
        }
        let s = Shape::new(&params);
        let n = self.times.len();
        let mut in_block = vec![false; n];
        for &k in block {
            in_block[k] = true;
        }
        let mut bg = self.bg_raw.clone();
        let mut se = self.se_raw.clone();
        for i in 0..n {
            if in_block[i] {
                bg[i] = self.bg_row(new, &s, i);
                se[i] = self.se_row(new, &s, i);
                continue;
            }
            let xi = self.point(new, i);
            let (mut db, mut ds) = (0.0, 0.0);
            for &k in block {
                let dt = self.times[i] - self.times[k];
                let d_old = sq_dist(xi, self.point(old, k));
                let d_new = sq_dist(xi, self.point(new, k));
                if dt != 0.0 {
                    let t = dt * dt * s.bg_time;
                    db += (-(d_new * s.bg_space + t)).exp() - (-(d_old * s.bg_space + t)).exp();
                }
                if dt > 0.0 {
                    let t = s.omega * dt;
                    ds += (-(d_new * s.se_space + t)).exp() - (-(d_old * s.se_space + t)).exp();
                }
            }
            let nb = bg[i] + db;
            bg[i] = if nb > CANCELLATION_GUARD * bg[i] { nb } else { self.bg_row(new, &s, i) };
            let ns = se[i] + ds;
            se[i] = if ns > CANCELLATION_GUARD * se[i] { ns } else { self.se_row(new, &s, i) };
        }
        let value = self.assemble(&params, &bg, &se, self.big_lambda, new)?;
        Ok(Candidate { params, bg_raw: Some(bg), se_raw: Some(se), big_lambda: self.big_lambda, value })
    }

    pub fn commit(&mut self, c: Candidate) {
        self.params = c.params;
        if let Some(b) = c.bg_raw {
            self.bg_raw = b;
        }
        if let Some(s) = c.se_raw {
            self.se_raw = s;
        }
        self.big_lambda = c.big_lambda;
        self.value = c.value;
    }
}
