//! Bayesian multidimensional scaling: truncated-normal model of observed
//! dissimilarities given latent Euclidean distances, its location gradient,
//! classical-MDS initialization and cross-validated predictive density.
//!
//! For each pair `n > n'`, `y_nn' ~ N(δ_nn', σ²) 1[y_nn' > 0]` with
//! `δ_nn' = ‖x_n − x_n'‖₂`, giving up to a constant
//!
//! ```text
//! ln p(Y | X, σ²) = (N(1−N)/4) ln σ² − Σ_{n>n'} [ (y_nn' − δ_nn')² / (2σ²) + ln Φ(δ_nn'/σ) ]
//! ```

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradients::{for_each_partition, ExecutionPlan};
use crate::math::{log_sum_exp, norm_ln_cdf, norm_ln_pdf, norm_pdf, tree_sum};

/// Symmetric, nonnegative, zero-diagonal `N × N` dissimilarities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates an exactly symmetric row-major matrix.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_tolerant(n, values, 0.0)
    }

    /// Accepts asymmetry up to `tol · max(1, |a|, |b|)`, symmetrizes by
    /// averaging and zeroes the diagonal.
    pub fn from_tolerant(n: usize, mut values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidDistances(format!(
                "expected {} entries for N = {n}, found {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in 0..i {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidDistances(format!("non-finite entry at ({i}, {j})")));
                }
                if a < 0.0 || b < 0.0 {
                    return Err(Error::InvalidDistances(format!("negative entry at ({i}, {j})")));
                }
                if (a - b).abs() > tol * 1f64.max(a.abs()).max(b.abs()) {
                    return Err(Error::InvalidDistances(format!(
                        "asymmetric entries at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let m = if a == b { a } else { 0.5 * (a + b) };
                values[i * n + j] = m;
                values[j * n + i] = m;
            }
        }
        Ok(Self { n, values })
    }

    /// Euclidean distances between the rows of a row-major `N × dim` buffer.
    pub fn from_points(points: &[f64], dim: usize) -> Self {
        let n = points.len() / dim;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = euclid(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Reorders rows and columns: entry `(i, j)` of the result is `(order[i], order[j])`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = order.len();
        let mut values = vec![0.0; n * n];
        for (i, &oi) in order.iter().enumerate() {
            for (j, &oj) in order.iter().enumerate() {
                values[i * n + j] = self.get(oi, oj);
            }
        }
        Self { n, values }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Latent locations `X` (row-major `N × dim`) and the noise variance `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfiguration {
    pub dim: usize,
    pub locations: Vec<f64>,
    pub sigma2: f64,
}

impl LatentConfiguration {
    pub fn new(dim: usize, locations: Vec<f64>, sigma2: f64) -> Result<Self> {
        if dim == 0 || !locations.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: locations.len() });
        }
        if locations.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("latent locations must be finite".into()));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma2 = {sigma2} must be > 0")));
        }
        Ok(Self { dim, locations, sigma2 })
    }

    pub fn len(&self) -> usize {
        self.locations.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.locations[n * self.dim..(n + 1) * self.dim]
    }
}

/// Which lower-triangle pairs enter the density (all, or all but held-out ones).
#[derive(Debug, Clone, PartialEq)]
pub struct PairMask {
    n: usize,
    included: Vec<bool>,
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

impl PairMask {
    pub fn all(n: usize) -> Self {
        Self { n, included: vec![true; n * n.saturating_sub(1) / 2] }
    }

    /// Every pair except `excluded` (each given as `(n, n')` in either order).
    pub fn excluding(n: usize, excluded: &[(usize, usize)]) -> Self {
        let mut m = Self::all(n);
        for &(a, b) in excluded {
            let (i, j) = if a > b { (a, b) } else { (b, a) };
            m.included[tri_index(i, j)] = false;
        }
        m
    }

    #[inline]
    pub fn includes(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (i, j) = if a > b { (a, b) } else { (b, a) };
        self.included[tri_index(i, j)]
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|v| **v).count()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn check_shapes(y: &DistanceMatrix, cfg: &LatentConfiguration, mask: &PairMask) -> Result<()> {
    if cfg.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), found: cfg.len() });
    }
    if mask.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), found: mask.len() });
    }
    if !(cfg.sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 = {} must be > 0", cfg.sigma2)));
    }
    Ok(())
}

/// Log-density of one observed distance under the truncated normal,
/// including its normalizer: `ln φ((y−δ)/σ) − ln σ − ln Φ(δ/σ)`.
pub fn pair_log_density(y: f64, delta: f64, sigma: f64) -> f64 {
    if !(y > 0.0) {
        return f64::NEG_INFINITY;
    }
    norm_ln_pdf((y - delta) / sigma) - sigma.ln() - norm_ln_cdf(delta / sigma)
}

/// `ln p(Y | X, σ²)` up to its additive constant, over all pairs.
pub fn bmds_log_density(y: &DistanceMatrix, cfg: &LatentConfiguration) -> Result<f64> {
    bmds_log_density_masked(y, cfg, &PairMask::all(y.len()), &ExecutionPlan::serial())
}

/// As [`bmds_log_density`] restricted to the pairs in `mask`; the `σ²`
/// prefactor counts only included pairs. Rows are split across the plan's workers.
pub fn bmds_log_density_masked(
    y: &DistanceMatrix,
    cfg: &LatentConfiguration,
    mask: &PairMask,
    plan: &ExecutionPlan,
) -> Result<f64> {
    check_shapes(y, cfg, mask)?;
    let n = y.len();
    let sigma = cfg.sigma2.sqrt();
    let inv_two_s2 = 0.5 / cfg.sigma2;
    let mut rows = vec![0.0; n];
    for_each_partition(plan, n, 1, &mut rows, |range, out| {
        for (slot, i) in out.iter_mut().zip(range) {
            let xi = cfg.point(i);
            let mut s = 0.0;
            for j in 0..i {
                if !mask.includes(i, j) {
                    continue;
                }
                let delta = euclid(xi, cfg.point(j));
                let r = y.get(i, j) - delta;
                s += r * r * inv_two_s2 + norm_ln_cdf(delta / sigma);
            }
            *slot = s;
        }
    });
    let residual = partitioned_sum(plan, &rows);
    Ok(-0.5 * mask.count() as f64 * cfg.sigma2.ln() - residual)
}

fn partitioned_sum(plan: &ExecutionPlan, rows: &[f64]) -> f64 {
    let partials: Vec<f64> = plan
        .partitions(rows.len())
        .into_iter()
        .map(|r| rows[r].iter().sum::<f64>())
        .collect();
    tree_sum(&partials)
}

/// `∂/∂δ` of the log-density for one pair.
#[inline]
fn delta_derivative(y: f64, delta: f64, sigma: f64, sigma2: f64) -> f64 {
    let z = delta / sigma;
    // φ(z)/Φ(z) with Φ ≥ 1/2 for z ≥ 0
    let mills = norm_pdf(z) / (norm_ln_cdf(z)).exp();
    (y - delta) / sigma2 - mills / sigma
}

/// Gradient of [`bmds_log_density`] with respect to the latent locations.
pub fn bmds_grad_locations(y: &DistanceMatrix, cfg: &LatentConfiguration) -> Result<Vec<f64>> {
    bmds_grad_locations_masked(y, cfg, &PairMask::all(y.len()), &ExecutionPlan::serial())
}

pub fn bmds_grad_locations_masked(
    y: &DistanceMatrix,
    cfg: &LatentConfiguration,
    mask: &PairMask,
    plan: &ExecutionPlan,
) -> Result<Vec<f64>> {
    check_shapes(y, cfg, mask)?;
    let n = y.len();
    let dim = cfg.dim;
    let sigma = cfg.sigma2.sqrt();
    // coincidence check up front so the error names the offending pair
    for i in 0..n {
        for j in 0..i {
            if mask.includes(i, j) && euclid(cfg.point(i), cfg.point(j)) == 0.0 {
                return Err(Error::CoincidentPoints(j, i));
            }
        }
    }
    let mut grad = vec![0.0; n * dim];
    for_each_partition(plan, n, dim, &mut grad, |range, rows| {
        for (row, i) in rows.chunks_exact_mut(dim).zip(range) {
            let xi = cfg.point(i);
            for j in 0..n {
                if !mask.includes(i, j) {
                    continue;
                }
                let xj = cfg.point(j);
                let delta = euclid(xi, xj);
                let w = delta_derivative(y.get(i, j), delta, sigma, cfg.sigma2) / delta;
                for d in 0..dim {
                    row[d] += w * (xi[d] - xj[d]);
                }
            }
        }
    });
    Ok(grad)
}

/// Result of classical MDS.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    pub dim: usize,
    /// Row-major `N × dim` coordinates.
    pub coordinates: Vec<f64>,
    /// Leading `dim` eigenvalues of the double-centered matrix, descending, unclipped.
    pub eigenvalues: Vec<f64>,
    /// How many of the requested axes had no positive eigenvalue and were zero-padded.
    pub padded_axes: usize,
}

/// Classical (Torgerson) MDS: double-center `−½ Y∘²`, keep the top `dim`
/// eigenpairs and scale eigenvectors by `sqrt(max(λ, 0))`.
pub fn classical_mds_init(y: &DistanceMatrix, dim: usize) -> Result<MdsEmbedding> {
    let n = y.len();
    if dim == 0 {
        return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
    }
    if n <= dim {
        return Err(Error::TooFewEvents { required: dim + 1, found: n });
    }
    let sq = DMatrix::from_fn(n, n, |i, j| y.get(i, j) * y.get(i, j));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut coordinates = vec![0.0; n * dim];
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut padded_axes = 0;
    for (k, &idx) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        if lambda <= 1e-12 * scale {
            padded_axes += 1;
            continue;
        }
        let s = lambda.sqrt();
        for i in 0..n {
            coordinates[i * dim + k] = eig.eigenvectors[(i, idx)] * s;
        }
    }
    if padded_axes > 0 {
        warn!(
            "classical MDS: only {} of {dim} requested axes have positive eigenvalues; padding with zeros",
            dim - padded_axes
        );
    }
    Ok(MdsEmbedding { dim, coordinates, eigenvalues, padded_axes })
}

/// Partition of the strict lower triangle into `F` folds of held-out pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CvFoldPlan {
    n: usize,
    folds: Vec<Vec<(usize, usize)>>,
}

impl CvFoldPlan {
    /// Shuffles all pairs with a seeded generator and deals them round-robin.
    pub fn random(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
        }
        let mut pairs: Vec<(usize, usize)> =
            (1..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
        if pairs.len() < folds {
            return Err(Error::InvalidConfig(format!(
                "{} pairs cannot fill {folds} folds",
                pairs.len()
            )));
        }
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = vec![Vec::new(); folds];
        for (k, p) in pairs.into_iter().enumerate() {
            out[k % folds].push(p);
        }
        for f in &mut out {
            f.sort_unstable();
        }
        Ok(Self { n, folds: out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn folds(&self) -> &[Vec<(usize, usize)>] {
        &self.folds
    }

    /// Mask of the pairs used for fitting when fold `f` is held out.
    pub fn training_mask(&self, f: usize) -> PairMask {
        PairMask::excluding(self.n, &self.folds[f])
    }
}

/// Per-pair posterior-sample log predictive densities for one fold:
/// `log_densities[pair][s] = ln p(y_pair | state s)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldPredictions {
    pub log_densities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpdEstimate {
    pub value: f64,
    /// Pairs whose averaged predictive density was zero (contributing `-inf`).
    pub degenerate_pairs: usize,
}

/// `Σ_f Σ_pairs ln( (1/S) Σ_s p(y | state s) )`, with a stable log-mean-exp.
pub fn lpd_hat(folds: &[FoldPredictions]) -> Result<LpdEstimate> {
    let mut value = 0.0;
    let mut degenerate_pairs = 0;
    for fold in folds {
        for samples in &fold.log_densities {
            if samples.is_empty() {
                return Err(Error::InvalidParameter("lpd needs at least one posterior sample".into()));
            }
            if samples.iter().any(|v| v.is_nan()) {
                return Err(Error::NotANumber("predictive densities"));
            }
            let term = log_sum_exp(samples) - (samples.len() as f64).ln();
            if term == f64::NEG_INFINITY {
                degenerate_pairs += 1;
            }
            value += term;
        }
    }
    if degenerate_pairs > 0 {
        warn!("lpd: {degenerate_pairs} held-out pairs have zero predictive density");
    }
    Ok(LpdEstimate { value, degenerate_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_pair() {
        let y = DistanceMatrix::new(2, vec![0.0, 1.5, 1.5, 0.0]).unwrap();
        let cfg = LatentConfiguration::new(1, vec![0.0, 1.5], 0.25).unwrap();
        let got = bmds_log_density(&y, &cfg).unwrap();
        let expect = -0.5 * 0.25f64.ln() - norm_ln_cdf(1.5 / 0.5);
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn scale_bookkeeping() {
        let pts = vec![0.0, 0.0, 1.0, 0.2, -0.4, 0.9, 0.3, -1.1];
        let y = DistanceMatrix::new(4, DistanceMatrix::from_points(&pts, 2).as_slice().iter().map(|v| v * 1.1).collect()).unwrap();
        let cfg = LatentConfiguration::new(2, pts.clone(), 0.3).unwrap();
        let c = 3.0;
        let ys = DistanceMatrix::new(4, y.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let scaled = LatentConfiguration::new(2, pts.iter().map(|v| v * c).collect(), 0.3 * c * c).unwrap();
        let a = bmds_log_density(&y, &cfg).unwrap();
        let b = bmds_log_density(&ys, &scaled).unwrap();
        // six pairs: prefactor changes by −(6/2) ln c²
        assert!((b - a - (-3.0 * (c * c).ln())).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn tolerant_loader_symmetrizes() {
        let m = DistanceMatrix::from_tolerant(2, vec![5.0, 1.0, 1.0 + 1e-12, 3.0], 1e-9).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(DistanceMatrix::from_tolerant(2, vec![0.0, 1.0, 1.1, 0.0], 1e-9).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn coincident_points_rejected() {
        let y = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let cfg = LatentConfiguration::new(2, vec![0.5, 0.5, 0.5, 0.5], 1.0).unwrap();
        assert_eq!(bmds_grad_locations(&y, &cfg), Err(Error::CoincidentPoints(0, 1)));
    }

    #[test]
    fn truncation_penalty_pulls_exact_fit_together() {
        let y = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let cfg = LatentConfiguration::new(2, vec![0.0, 0.0, 1.0, 0.0], 100.0).unwrap();
        let g = bmds_grad_locations(&y, &cfg).unwrap();
        // only −ln Φ(δ/σ) varies with δ at an exact fit, and it grows as δ shrinks
        assert!(g[0] > 0.0 && g[2] < 0.0, "{g:?}");
        let expect = norm_pdf(0.1) / crate::math::norm_cdf(0.1) / 10.0;
        assert!((g[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn mds_degenerate_all_zero() {
        let y = DistanceMatrix::new(4, vec![0.0; 16]).unwrap();
        let e = classical_mds_init(&y, 2).unwrap();
        assert!(e.coordinates.iter().all(|v| *v == 0.0));
        assert_eq!(e.padded_axes, 2);
    }

    #[test]
    fn mds_unit_square() {
        let pts = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let y = DistanceMatrix::from_points(&pts, 2);
        let e = classical_mds_init(&y, 2).unwrap();
        let back = DistanceMatrix::from_points(&e.coordinates, 2);
        let mut d: Vec<f64> = (1..4).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| back.get(i, j)).collect();
        d.sort_by(f64::total_cmp);
        let expect = [1.0, 1.0, 1.0, 1.0, 2f64.sqrt(), 2f64.sqrt()];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn mds_rejects_small_n() {
        let y = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(classical_mds_init(&y, 2).is_err());
    }

    #[test]
    fn folds_partition_pairs() {
        let plan = CvFoldPlan::random(9, 4, 1).unwrap();
        let mut all: Vec<(usize, usize)> = plan.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all.len(), 36);
        all.dedup();
        assert_eq!(all.len(), 36);
        assert!(all.iter().all(|(i, j)| i > j));
        assert_eq!(plan, CvFoldPlan::random(9, 4, 1).unwrap());
        assert_ne!(plan, CvFoldPlan::random(9, 4, 2).unwrap());
        assert_eq!(plan.training_mask(0).count(), 36 - plan.folds()[0].len());
        assert!(CvFoldPlan::random(9, 1, 1).is_err());
    }

    #[test]
    fn lpd_single_and_duplicated_states() {
        let single = FoldPredictions { log_densities: vec![vec![-1.2], vec![-0.3]] };
        let dup = FoldPredictions { log_densities: vec![vec![-1.2; 5], vec![-0.3; 5]] };
        let a = lpd_hat(&[single]).unwrap().value;
        let b = lpd_hat(&[dup]).unwrap().value;
        assert!((a - (-1.5)).abs() < 1e-15);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn lpd_flags_zero_density() {
        let f = FoldPredictions { log_densities: vec![vec![f64::NEG_INFINITY, f64::NEG_INFINITY]] };
        let e = lpd_hat(&[f]).unwrap();
        assert_eq!(e.value, f64::NEG_INFINITY);
        assert_eq!(e.degenerate_pairs, 1);
    }
}
