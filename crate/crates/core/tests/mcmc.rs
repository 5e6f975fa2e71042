mod common;

use coarse_hawkes::diagnostics::ess;
use coarse_hawkes::geometry::{adapt_epsilon, adaptation_gain, ProposalTuning};
use coarse_hawkes::mcmc::{hamiltonian, leapfrog, BmdsPotential, ChainState};
use coarse_hawkes::{
    log_likelihood, run_chain, DistanceMatrix, Event, EventCatalog, ExecutionPlan, HawkesParams,
    ModelData, ParamPriors, Sampler, SamplerConfig, ScanProbabilities, UncertaintyRegion,
};
use common::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn grouped_toy(seed: u64, n: usize) -> ModelData {
    let mut r = rng(seed);
    let c = random_catalog(&mut r, n, 2);
    let regions = (0..n)
        .map(|k| {
            let centre = c.location(k).to_vec();
            match k % 3 {
                0 => UncertaintyRegion::square(centre, 0.3).unwrap(),
                1 => UncertaintyRegion::disc(centre, 0.4).unwrap(),
                _ => UncertaintyRegion::point(centre).unwrap(),
            }
        })
        .collect();
    ModelData::grouped(&c, regions).unwrap()
}

fn config(iterations: u64, burn_in: u64) -> SamplerConfig {
    SamplerConfig { iterations, burn_in, thin: 1, seed: 7, ..SamplerConfig::default() }
}

#[test]
fn constraint_violations_are_never_accepted() {
    let data = grouped_toy(1, 20);
    let priors = ParamPriors::default();
    let cfg = SamplerConfig { param_step: 0.5, ..config(3000, 0) };
    let mut state = ChainState::initial(&data, &priors, &cfg).unwrap();
    state.params = HawkesParams::new(0.5, 1.0, 3.0, 0.5, 1.0, 0.999).unwrap();
    let mut s = Sampler::from_state(cfg, priors, &data, state).unwrap();
    for _ in 0..2000 {
        s.step_params().unwrap();
        assert!(s.state().params.is_admissible(), "{:?}", s.state().params);
    }
    assert!(s.stats().params.accepts < s.stats().params.attempts);
}

#[test]
fn zero_step_is_always_accepted_and_changes_nothing() {
    let data = grouped_toy(2, 15);
    let priors = ParamPriors::default();
    let cfg = config(1000, 0);
    let mut state = ChainState::initial(&data, &priors, &cfg).unwrap();
    for t in &mut state.param_tuning {
        t.epsilon = 0.0;
    }
    let before = state.params;
    let mut s = Sampler::from_state(cfg, priors, &data, state).unwrap();
    for _ in 0..100 {
        assert!(s.step_params().unwrap());
    }
    assert_eq!(s.state().params, before);
}

#[test]
fn point_blocks_are_no_ops() {
    let data = grouped_toy(3, 15);
    let mut s = Sampler::new(config(100, 0), ParamPriors::default(), &data).unwrap();
    let before = s.state().locations.clone();
    // indices 2, 5, 8 carry point regions
    assert!(s.step_locations_block(&[2, 5, 8]).unwrap());
    assert_eq!(s.state().locations, before);
    assert_eq!(s.stats().locations.attempts, 0);
}

#[test]
fn cached_likelihood_matches_recomputation_after_block_moves() {
    let data = grouped_toy(4, 40);
    let mut s = Sampler::new(config(100, 0), ParamPriors::default(), &data).unwrap();
    let mut accepted = 0;
    for k in 0..300 {
        let a = (3 * k) % 40;
        let b = (7 * k + 1) % 40;
        let block = if a == b { vec![a] } else { vec![a.min(b), a.max(b)] };
        accepted += s.step_locations_block(&block).unwrap() as usize;
        if k % 10 == 0 {
            s.step_params().unwrap();
        }
        let c = EventCatalog::from_parts(2, s.state().locations.clone(), data.times().to_vec()).unwrap();
        let exact = log_likelihood(&c, &s.state().params).unwrap();
        assert!((s.log_likelihood() - exact).abs() < 1e-10 * exact.abs(), "{} vs {exact}", s.log_likelihood());
    }
    assert!(accepted > 10);
    let regions = data.regions().unwrap();
    for (k, r) in regions.iter().enumerate() {
        assert!(r.contains(&s.state().locations[2 * k..2 * k + 2]));
    }
}

fn flat_chain(region: UncertaintyRegion, seed: u64) -> Vec<Vec<f64>> {
    let c = EventCatalog::new(2, &[Event::new(region.center().to_vec(), 0.0)]).unwrap();
    let data = ModelData::grouped(&c, vec![region]).unwrap();
    let cfg = SamplerConfig {
        iterations: 1_010_000,
        burn_in: 10_000,
        thin: 10,
        block_size: 1,
        scan: ScanProbabilities { params: 0.0, locations: 1.0, sigma2: 0.0 },
        flat_likelihood: true,
        seed,
        ..SamplerConfig::default()
    };
    run_chain(&cfg, &ParamPriors::default(), &data)
        .unwrap()
        .snapshots
        .into_iter()
        .map(|s| s.locations)
        .collect()
}

#[test]
fn flat_likelihood_square_marginals_are_uniform() {
    let draws = flat_chain(UncertaintyRegion::square(vec![0.3, -0.2], 0.5).unwrap(), 11);
    assert_eq!(draws.len(), 100_000);
    for (axis, lo) in [(0, -0.2), (1, -0.7)] {
        let v: Vec<f64> = draws.iter().map(|x| x[axis]).collect();
        let d = ks_statistic(&v, |x| (x - lo).clamp(0.0, 1.0));
        assert!(d < ks_critical_001(v.len()), "axis {axis}: D = {d}");
    }
}

#[test]
fn flat_likelihood_disc_radius_is_uniform() {
    let draws = flat_chain(UncertaintyRegion::disc(vec![1.0, 2.0], 1.5).unwrap(), 12);
    let r: Vec<f64> = draws.iter().map(|x| ((x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)).sqrt()).collect();
    let d = ks_statistic(&r, |v| (v / 1.5).powi(2).min(1.0));
    assert!(d < ks_critical_001(r.len()), "D = {d}");
}

#[test]
fn adaptation_respects_schedule_and_stops_after_burn_in() {
    let mut t = ProposalTuning::new(0.3).unwrap();
    for s in 1..=2000u64 {
        let next = adapt_epsilon(t, s % 3 == 0);
        let step = (next.epsilon.ln() - t.epsilon.ln()).abs();
        assert!(step <= adaptation_gain(s) * 0.56 + 1e-15);
        t = next;
    }
    let data = grouped_toy(5, 30);
    let cfg = SamplerConfig { scan: ScanProbabilities::grouped(), ..config(2000, 500) };
    let mut s = Sampler::new(cfg, ParamPriors::default(), &data).unwrap();
    for _ in 0..500 {
        s.step().unwrap();
    }
    let eps = |s: &Sampler| -> Vec<f64> {
        s.state().location_tuning.iter().chain(&s.state().param_tuning).map(|t| t.epsilon).collect()
    };
    let frozen = eps(&s);
    for _ in 0..1500 {
        s.step().unwrap();
    }
    assert_eq!(eps(&s), frozen);
}

#[test]
fn acceptance_bookkeeping_is_exact() {
    let data = grouped_toy(6, 30);
    let out = run_chain(&config(3000, 1000), &ParamPriors::default(), &data).unwrap();
    let st = &out.state;
    let acc: u64 = st.param_tuning.iter().map(|t| t.accepts).sum();
    let att: u64 = st.param_tuning.iter().map(|t| t.attempts).sum();
    assert_eq!((acc, att), (out.stats.params.accepts, out.stats.params.attempts));
    for t in st.location_tuning.iter().chain(&st.param_tuning) {
        if t.attempts > 0 {
            assert_eq!(t.acceptance_rate(), t.accepts as f64 / t.attempts as f64);
        }
    }
    assert_eq!(out.stats.params.attempts + out.stats.locations.attempts, 3000);
}

#[test]
fn fixed_seed_reproduces_chain() {
    let data = grouped_toy(7, 25);
    let a = run_chain(&config(1500, 500), &ParamPriors::default(), &data).unwrap();
    let b = run_chain(&config(1500, 500), &ParamPriors::default(), &data).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    let c = run_chain(&SamplerConfig { seed: 8, ..config(1500, 500) }, &ParamPriors::default(), &data).unwrap();
    assert_ne!(a.snapshots, c.snapshots);
}

#[test]
fn locations_stay_put_without_location_moves() {
    let data = grouped_toy(8, 25);
    let cfg = SamplerConfig { scan: ScanProbabilities::params_only(), ..config(1000, 100) };
    let out = run_chain(&cfg, &ParamPriors::default(), &data).unwrap();
    assert!(out.snapshots.iter().all(|s| s.locations == data.initial_locations()));
}

fn bmds_toy(seed: u64, n: usize) -> ModelData {
    let mut r = rng(seed);
    let (_, y) = noisy_distances(&mut r, n, 2, 0.05);
    let mut times: Vec<f64> = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
    times.sort_by(f64::total_cmp);
    ModelData::bmds(times, DistanceMatrix::new(n, y).unwrap(), 2, None).unwrap()
}

#[test]
fn leapfrog_energy_error_is_second_order() {
    let data = bmds_toy(20, 12);
    let params = HawkesParams::new(0.8, 1.0, 2.0, 0.5, 1.0, 0.5).unwrap();
    let pot = BmdsPotential::new(&data, params, 0.05, ExecutionPlan::serial());
    let x0 = data.initial_locations().to_vec();
    let mut r = rng(21);
    let p0: Vec<f64> = (0..x0.len()).map(|_| r.sample(StandardNormal)).collect();
    let (u0, g0) = pot.evaluate(&x0).unwrap().unwrap();
    let h0 = hamiltonian(u0, &p0);
    let horizon: f64 = 0.2;
    let errors: Vec<f64> = [5e-3, 2.5e-3, 1.25e-3]
        .iter()
        .map(|&eta| {
            let steps = (horizon / eta).round() as usize;
            let t = leapfrog(&x0, &p0, &g0, eta, steps, |x| pot.evaluate(x)).unwrap().unwrap();
            (hamiltonian(t.potential, &t.momentum) - h0).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "errors {errors:?}");
    }
}

#[test]
fn leapfrog_is_reversible() {
    let data = bmds_toy(22, 12);
    let params = HawkesParams::new(0.8, 1.0, 2.0, 0.5, 1.0, 0.5).unwrap();
    let pot = BmdsPotential::new(&data, params, 0.05, ExecutionPlan::serial());
    let x0 = data.initial_locations().to_vec();
    let mut r = rng(23);
    let p0: Vec<f64> = (0..x0.len()).map(|_| r.sample(StandardNormal)).collect();
    let (_, g0) = pot.evaluate(&x0).unwrap().unwrap();
    let fwd = leapfrog(&x0, &p0, &g0, 5e-3, 20, |x| pot.evaluate(x)).unwrap().unwrap();
    let flipped: Vec<f64> = fwd.momentum.iter().map(|p| -p).collect();
    let (_, g1) = pot.evaluate(&fwd.position).unwrap().unwrap();
    let back = leapfrog(&fwd.position, &flipped, &g1, 5e-3, 20, |x| pot.evaluate(x)).unwrap().unwrap();
    let err = back.position.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn tiny_hmc_steps_are_accepted() {
    let data = bmds_toy(24, 8);
    let cfg = SamplerConfig {
        step_size: 1e-9,
        leapfrog_steps: 1,
        scan: ScanProbabilities::bmds(),
        ..config(100, 0)
    };
    let mut s = Sampler::new(cfg, ParamPriors::default(), &data).unwrap();
    for _ in 0..20 {
        assert!(s.hmc_step_locations().unwrap());
    }
}

#[test]
fn hmc_matches_quadrature_on_two_point_toy() {
    let y = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let data = ModelData::bmds(vec![0.0, 1.0], y, 1, None).unwrap();
    let priors = ParamPriors::default();
    let cfg = SamplerConfig {
        iterations: 40_000,
        burn_in: 2_000,
        thin: 1,
        step_size: 0.1,
        leapfrog_steps: 5,
        flat_likelihood: true,
        scan: ScanProbabilities { params: 0.0, locations: 1.0, sigma2: 0.0 },
        seed: 31,
        ..SamplerConfig::default()
    };
    let mut state = ChainState::initial(&data, &priors, &cfg).unwrap();
    let sigma: f64 = 0.5;
    state.sigma2 = Some(sigma * sigma);
    let mut s = Sampler::from_state(cfg, priors, &data, state).unwrap();
    let mut delta = Vec::new();
    s.run(|snap| delta.push((snap.locations[0] - snap.locations[1]).abs())).unwrap();
    // density of δ: φ((1 − δ)/σ) / Φ(δ/σ) on δ > 0
    let dens = |d: f64| std_normal_pdf((1.0 - d) / sigma) / std_normal_cdf(d / sigma);
    let z = adaptive_simpson(&dens, 0.0, 8.0, 1e-12);
    let m1 = adaptive_simpson(&|d| d * dens(d), 0.0, 8.0, 1e-12) / z;
    let m2 = adaptive_simpson(&|d| d * d * dens(d), 0.0, 8.0, 1e-12) / z;
    let m4 = adaptive_simpson(&|d| (d - m1).powi(4) * dens(d), 0.0, 8.0, 1e-12) / z;
    let var = m2 - m1 * m1;
    let n_eff = ess(&delta).unwrap().value;
    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
    let svar = delta.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / delta.len() as f64;
    assert!((mean - m1).abs() < 3.0 * (var / n_eff).sqrt(), "mean {mean} vs {m1} (ess {n_eff})");
    assert!((svar - var).abs() < 3.0 * ((m4 - var * var) / n_eff).sqrt(), "var {svar} vs {var}");
}

#[test]
fn ess_white_noise_and_ar1() {
    let mut r = rng(40);
    let white: Vec<f64> = (0..10_000).map(|_| r.sample(StandardNormal)).collect();
    let e = ess(&white).unwrap().value;
    assert!((e - 10_000.0).abs() < 1_500.0, "{e}");
    let rho = 0.9;
    let mut ar = vec![0.0f64; 10_000];
    for i in 1..ar.len() {
        ar[i] = rho * ar[i - 1] + r.sample::<f64, _>(StandardNormal);
    }
    let target = 10_000.0 * (1.0 - rho) / (1.0 + rho);
    let e = ess(&ar).unwrap().value;
    assert!((e - target).abs() < 0.25 * target, "{e} vs {target}");
}

#[test]
fn bmds_chain_runs_and_is_reproducible() {
    let data = bmds_toy(50, 10);
    let cfg = SamplerConfig { scan: ScanProbabilities::bmds(), leapfrog_steps: 5, ..config(300, 100) };
    let a = run_chain(&cfg, &ParamPriors::default(), &data).unwrap();
    let b = run_chain(&cfg, &ParamPriors::default(), &data).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    assert!(a.snapshots.iter().all(|s| s.sigma2.is_some_and(|v| v > 0.0)));
    assert!(a.stats.locations.accepts > 0);
}
