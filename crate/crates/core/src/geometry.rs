//! Uncertainty regions for coarsened locations, their uniform priors, and the
//! constrained proposal kernels used to move latent locations inside them.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::truncnorm::TruncatedNormal;

/// Square meters per international acre.
pub const SQUARE_METERS_PER_ACRE: f64 = 4_046.856_422_4;

/// Target acceptance rate for per-event step-size adaptation.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

/// Rejection-sampler iteration cap for the disc kernel.
pub const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionKind {
    /// Exactly observed location.
    Point,
    /// Axis-aligned open square `|x_d − c_d| < half_width` for every coordinate.
    Square { half_width: f64 },
    /// Open disc `‖x − c‖ < radius`.
    Disc { radius: f64 },
}

/// Region known to contain an event's true location, centered on the observed location.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRegion {
    kind: RegionKind,
    center: Vec<f64>,
}

impl UncertaintyRegion {
    pub fn new(kind: RegionKind, center: Vec<f64>) -> Result<Self> {
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRegion("center must be finite".into()));
        }
        match kind {
            RegionKind::Point => {}
            RegionKind::Square { half_width } => {
                if !(half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::InvalidRegion(format!("half width {half_width} <= 0")));
                }
                if center.len() != 2 {
                    return Err(Error::InvalidRegion("square regions are two-dimensional".into()));
                }
            }
            RegionKind::Disc { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidRegion(format!("radius {radius} <= 0")));
                }
                if center.len() != 2 {
                    return Err(Error::InvalidRegion("disc regions are two-dimensional".into()));
                }
            }
        }
        Ok(Self { kind, center })
    }

    pub fn point(center: Vec<f64>) -> Result<Self> {
        Self::new(RegionKind::Point, center)
    }

    pub fn square(center: Vec<f64>, half_width: f64) -> Result<Self> {
        Self::new(RegionKind::Square { half_width }, center)
    }

    pub fn disc(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(RegionKind::Disc { radius }, center)
    }

    /// Disc whose area equals `area` (same units squared): `r = sqrt(area / π)`.
    pub fn disc_from_area(center: Vec<f64>, area: f64) -> Result<Self> {
        Self::disc(center, radius_from_area(area))
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_point(&self) -> bool {
        matches!(self.kind, RegionKind::Point)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        region_log_prior(x, self) == 0.0
    }

    /// A draw from the uniform prior on the region (the center for a point).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            RegionKind::Point => self.center.clone(),
            RegionKind::Square { half_width } => loop {
                let x: Vec<f64> =
                    self.center.iter().map(|c| c + half_width * (2.0 * rng.random::<f64>() - 1.0)).collect();
                // the open boundary has probability zero but a draw can still round onto it
                if self.contains(&x) {
                    break x;
                }
            },
            RegionKind::Disc { radius } => loop {
                let x = uniform_in_disc(&self.center, radius, rng).to_vec();
                if self.contains(&x) {
                    break x;
                }
            },
        }
    }
}

pub fn radius_from_area(area: f64) -> f64 {
    (area / PI).sqrt()
}

/// Log of the (unnormalized) uniform prior: `0` inside the open region, `-inf` outside.
pub fn region_log_prior(x: &[f64], region: &UncertaintyRegion) -> f64 {
    if x.len() != region.center.len() {
        return f64::NEG_INFINITY;
    }
    let inside = match region.kind {
        RegionKind::Point => x == region.center.as_slice(),
        RegionKind::Square { half_width } => {
            x.iter().zip(&region.center).all(|(v, c)| (v - c).abs() < half_width)
        }
        RegionKind::Disc { radius } => dist(x, &region.center) < radius,
    };
    if inside {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Area of the intersection of two discs with radii `r1`, `r2` and center distance `d`.
pub fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
    let (big, small) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
    if d >= big + small {
        return 0.0;
    }
    if d <= big - small {
        return PI * small * small;
    }
    // circular-segment form, symmetric in the two radii once ordered
    let d2 = d * d;
    let a1 = ((d2 + big * big - small * small) / (2.0 * d * big)).clamp(-1.0, 1.0).acos();
    let a2 = ((d2 + small * small - big * big) / (2.0 * d * small)).clamp(-1.0, 1.0).acos();
    let k = (-d + big + small) * (d + small - big) * (d - small + big) * (d + big + small);
    big * big * a1 + small * small * a2 - 0.5 * k.max(0.0).sqrt()
}

/// Per-event proposal scale plus its adaptation counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalTuning {
    /// Step scale: multiple of the radius for discs, absolute sd for squares.
    pub epsilon: f64,
    pub attempts: u64,
    pub accepts: u64,
    /// Number of adaptation updates applied so far.
    pub updates: u64,
}

impl ProposalTuning {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be > 0")));
        }
        Ok(Self { epsilon, attempts: 0, accepts: 0, updates: 0 })
    }

    /// Default step for a region: a fifth of its extent.
    pub fn for_region(region: &UncertaintyRegion) -> Self {
        let epsilon = match region.kind {
            RegionKind::Point => 1.0,
            RegionKind::Square { half_width } => 0.4 * half_width,
            RegionKind::Disc { .. } => 0.4,
        };
        Self { epsilon, attempts: 0, accepts: 0, updates: 0 }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }

    pub fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        if accepted {
            self.accepts += 1;
        }
    }
}

/// Largest useful step: beyond it the proposal is already close to uniform on the region.
pub fn max_epsilon(region: &UncertaintyRegion) -> f64 {
    match region.kind {
        RegionKind::Point => 1.0,
        RegionKind::Square { half_width } => 4.0 * half_width,
        RegionKind::Disc { .. } => 2.0,
    }
}

/// Adaptation gain at update `s` (1-based): `s^-0.6`.
pub fn adaptation_gain(s: u64) -> f64 {
    (s.max(1) as f64).powf(-0.6)
}

/// Robbins–Monro step on `ln ε` toward the 0.44 acceptance target:
/// `ln ε += s^-0.6 (1[accepted] − 0.44)`.
pub fn adapt_epsilon(tuning: ProposalTuning, accepted: bool) -> ProposalTuning {
    let s = tuning.updates + 1;
    let signal = if accepted { 1.0 } else { 0.0 } - TARGET_ACCEPTANCE;
    ProposalTuning {
        epsilon: tuning.epsilon * (adaptation_gain(s) * signal).exp(),
        updates: s,
        ..tuning
    }
}

/// A proposed location and `ln q(x | x*) − ln q(x* | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub location: Vec<f64>,
    pub log_hastings: f64,
}

fn square_factors(x: &[f64], center: &[f64], half_width: f64, sd: f64) -> Result<Vec<TruncatedNormal>> {
    x.iter()
        .zip(center)
        .map(|(&v, &c)| TruncatedNormal::new(v, sd, c - half_width, c + half_width))
        .collect()
}

/// Per-coordinate normal step of sd `ε` truncated to the square.
pub fn propose_square<R: Rng + ?Sized>(
    x_current: &[f64],
    region: &UncertaintyRegion,
    tuning: &ProposalTuning,
    rng: &mut R,
) -> Result<Proposal> {
    let RegionKind::Square { half_width } = region.kind else {
        return Err(Error::InvalidRegion("propose_square needs a square region".into()));
    };
    let forward = square_factors(x_current, &region.center, half_width, tuning.epsilon)?;
    let location: Vec<f64> = forward.iter().map(|d| d.sample(rng)).collect();
    let reverse = square_factors(&location, &region.center, half_width, tuning.epsilon)?;
    // Gaussian kernels are symmetric, so only the truncation masses differ.
    let log_hastings = forward.iter().map(|d| d.ln_mass()).sum::<f64>()
        - reverse.iter().map(|d| d.ln_mass()).sum::<f64>();
    Ok(Proposal { location, log_hastings })
}

fn uniform_in_disc<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

/// Area of the proposal support at `x`: region disc ∩ step disc.
pub fn disc_support_area(x: &[f64], center: &[f64], radius: f64, epsilon: f64) -> f64 {
    lens_area(radius, radius * epsilon, dist(x, center))
}

/// Uniform draw on `{‖y − c‖ < r} ∩ {‖y − x‖ < r ε}`.
pub fn propose_disc<R: Rng + ?Sized>(
    x_current: &[f64],
    region: &UncertaintyRegion,
    tuning: &ProposalTuning,
    rng: &mut R,
) -> Result<Proposal> {
    let RegionKind::Disc { radius } = region.kind else {
        return Err(Error::InvalidRegion("propose_disc needs a disc region".into()));
    };
    let c = &region.center;
    let step = radius * tuning.epsilon;
    let offset = dist(x_current, c);
    let location = if offset + step < radius {
        // step disc lies inside the region
        uniform_in_disc(x_current, step, rng).to_vec()
    } else {
        // Envelope: whichever disc is smaller; reject points outside the other.
        let (env_center, env_r, other_center, other_r) = if step <= radius {
            (x_current, step, c.as_slice(), radius)
        } else {
            (c.as_slice(), radius, x_current, step)
        };
        let mut found = None;
        for _ in 0..REJECTION_CAP {
            let y = uniform_in_disc(env_center, env_r, rng);
            if dist(&y, other_center) < other_r && dist(&y, env_center) < env_r {
                found = Some(y);
                break;
            }
        }
        found.ok_or(Error::RejectionCapExceeded(REJECTION_CAP))?.to_vec()
    };
    let forward = disc_support_area(x_current, c, radius, tuning.epsilon);
    let reverse = disc_support_area(&location, c, radius, tuning.epsilon);
    Ok(Proposal { location, log_hastings: forward.ln() - reverse.ln() })
}

/// Dispatches to the kernel matching the region; points never move.
pub fn propose_in_region<R: Rng + ?Sized>(
    x_current: &[f64],
    region: &UncertaintyRegion,
    tuning: &ProposalTuning,
    rng: &mut R,
) -> Result<Proposal> {
    match region.kind {
        RegionKind::Point => Ok(Proposal { location: x_current.to_vec(), log_hastings: 0.0 }),
        RegionKind::Square { .. } => propose_square(x_current, region, tuning, rng),
        RegionKind::Disc { .. } => propose_disc(x_current, region, tuning, rng),
    }
}
