mod common;

use coarse_hawkes::simulator::{round_to, LocationMode};
use coarse_hawkes::{
    coarsen, coverage_study, simulate_catalog, CoverageConfig, SamplerConfig, SimConfig,
};
use common::*;

#[test]
fn mean_catalog_size_matches_branching_formula() {
    let cfg = SimConfig::default();
    let mut r = rng(60);
    let sizes: Vec<f64> = (0..200).map(|_| simulate_catalog(&cfg, &mut r).unwrap().catalog.len() as f64).collect();
    let mean = sizes.iter().sum::<f64>() / 200.0;
    let sd = (sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    let se = sd / 200f64.sqrt();
    assert!((mean - cfg.expected_size()).abs() < 3.0 * se, "mean {mean} ± {se}");
}

#[test]
fn children_follow_their_parents() {
    let mut r = rng(61);
    for _ in 0..20 {
        let s = simulate_catalog(&SimConfig::default(), &mut r).unwrap();
        let t = s.catalog.times();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|&v| (0.0..=100.0).contains(&v)));
        for (k, p) in s.parent.iter().enumerate() {
            match p {
                Some(p) => {
                    assert!(t[*p] < t[k]);
                    assert_eq!(s.generation[k], s.generation[*p] + 1);
                }
                None => assert_eq!(s.generation[k], 0),
            }
        }
        assert!(s.generation.iter().any(|g| *g > 0));
    }
}

#[test]
fn coarsening_is_consistent() {
    let mut r = rng(62);
    let s = simulate_catalog(&SimConfig::default(), &mut r).unwrap();
    for precision in [0.1, 0.5, 1.0, 0.37] {
        let (coarse, regions) = coarsen(&s.catalog, precision).unwrap();
        assert_eq!(coarse.times(), s.catalog.times());
        for k in 0..coarse.len() {
            assert!(regions[k].contains(s.catalog.location(k)));
            for &c in coarse.location(k) {
                let m = (c / precision).round();
                assert!((c - m * precision).abs() <= 0.5 * f64::EPSILON * (m * precision).abs());
            }
        }
        let (again, _) = coarsen(&coarse, precision).unwrap();
        assert_eq!(again, coarse);
    }
    assert_eq!(round_to(0.4, 1.0), 0.0);
    assert_eq!(round_to(-0.6, 1.0), -1.0);
    assert!(coarsen(&s.catalog, 0.0).is_err());
}

fn small_study() -> CoverageConfig {
    CoverageConfig {
        precisions: vec![0.5, 1.0],
        sim: SimConfig { expected_background: 40.0, horizon: 30.0, ..SimConfig::default() },
        sampler: SamplerConfig { iterations: 600, burn_in: 200, thin: 5, ..SamplerConfig::default() },
        ..CoverageConfig::default()
    }
}

#[test]
fn coverage_study_is_deterministic_across_thread_counts() {
    let cfg = small_study();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| coverage_study(3, &cfg).unwrap());
    let b = three.install(|| coverage_study(3, &cfg).unwrap());
    assert_eq!(a, b);
    assert!(a.failures.is_empty());
    assert_eq!(a.rows.len(), 2 * 2 * 3);
    let row = a.row(1.0, 0.95, LocationMode::Sampled).unwrap();
    assert_eq!(row.replicates, 3);
    assert!((0.0..=1.0).contains(&row.covered_fraction));
    // fixed chains never move locations, so their credible balls are points
    assert!(a.location_row(0.5, LocationMode::Fixed).unwrap().mean_proportion < 0.05);
}
