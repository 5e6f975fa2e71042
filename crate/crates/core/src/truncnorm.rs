//! Univariate normal distribution truncated to an interval.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{norm_cdf, norm_interval_mass, norm_ln_pdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    ln_mass: f64,
}

impl TruncatedNormal {
    /// Normal(mean, sd²) restricted to the open interval (lower, upper).
    /// Either bound may be infinite.
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "truncated normal needs finite mean and sd > 0 (mean {mean}, sd {sd})"
            )));
        }
        if !(lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "empty truncation interval ({lower}, {upper})"
            )));
        }
        let mass = norm_interval_mass((lower - mean) / sd, (upper - mean) / sd);
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation interval ({lower}, {upper}) has no mass under N({mean}, {sd}²)"
            )));
        }
        Ok(Self { mean, sd, lower, upper, ln_mass: mass.ln() })
    }

    /// Half-normal on (0, ∞) with the given scale.
    pub fn positive(sd: f64) -> Result<Self> {
        Self::new(0.0, sd, 0.0, f64::INFINITY)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// `ln Z` where `Z = Φ(β) − Φ(α)` is the retained probability mass.
    pub fn ln_mass(&self) -> f64 {
        self.ln_mass
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > self.lower && x < self.upper) {
            return f64::NEG_INFINITY;
        }
        norm_ln_pdf((x - self.mean) / self.sd) - self.sd.ln() - self.ln_mass
    }

    /// Inverse-CDF draw, reflected so the search always runs in the lower tail.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let alpha = (self.lower - self.mean) / self.sd;
        let beta = (self.upper - self.mean) / self.sd;
        let (a, b, sign) = if alpha > 0.0 { (-beta, -alpha, -1.0) } else { (alpha, beta, 1.0) };
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        loop {
            let u: f64 = rng.random();
            let z = norm_quantile(pa + u * (pb - pa)).clamp(a, b);
            let x = self.mean + sign * z * self.sd;
            // endpoints are excluded; only reachable through rounding
            if x > self.lower && x < self.upper {
                return x;
            }
        }
    }
}
