//! Subcommand implementations. Each reads its inputs, runs the library and
//! writes a fixed set of files into the output directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coarse_hawkes::diagnostics::{posterior_diagnostics, PosteriorSummary};
use coarse_hawkes::gradients::benchmark_plans;
use coarse_hawkes::simulator::SimulatedCatalog;
use coarse_hawkes::{
    coarsen, coverage_study, cross_validate, run_chain, CoverageConfig, CvConfig, Event, EventCatalog,
    ExecutionPlan, HawkesParams, ModelData, ParamPriors, RegionKind, SamplerConfig, ScanProbabilities, SimConfig,
    Snapshot,
};

use crate::config::{Mode, RunConfig};
use crate::io::{
    ingest, parse_distances, parse_events, read_snapshot_columns, write_binary_dump, write_events, write_snapshots,
    EventFile, EventRecord, Ingested, RegionEntry, Units,
};

/// Relative tolerance when symmetrizing an input distance matrix.
const DISTANCE_TOLERANCE: f64 = 1e-9;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| anyhow!("--{flag} is required"))?;
    if !p.exists() {
        bail!("{} does not exist", p.display());
    }
    Ok(p)
}

/// Output directory with the effective configuration echoed into it.
fn prepare_out(config: &RunConfig) -> Result<&Path> {
    let out = config.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()?)?;
    Ok(out)
}

fn write(out: &Path, name: &str, text: impl AsRef<[u8]>) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn sampler_config(c: &RunConfig, bmds: bool) -> Result<SamplerConfig> {
    let default_scan = if bmds { ScanProbabilities::bmds() } else { ScanProbabilities::grouped() };
    let scan = ScanProbabilities {
        params: c.scan_params.unwrap_or(default_scan.params),
        locations: c.scan_locations.unwrap_or(default_scan.locations),
        sigma2: c.scan_sigma2.unwrap_or(default_scan.sigma2),
    };
    let s = SamplerConfig {
        iterations: c.iterations,
        burn_in: c.burnin,
        thin: c.thin,
        block_size: c.block_size,
        location_sweep: c.location_sweep,
        leapfrog_steps: c.leapfrog_steps,
        step_size: c.step_size,
        scan,
        seed: c.seed,
        plan: ExecutionPlan::new(c.workers, c.block_width)?,
        ..SamplerConfig::default()
    };
    s.validate()?;
    Ok(s)
}

fn priors(c: &RunConfig) -> Result<ParamPriors> {
    Ok(ParamPriors::with_base_sd(c.prior_base_sd)?)
}

fn sim_config(c: &RunConfig) -> SimConfig {
    SimConfig {
        expected_background: c.expected_background,
        horizon: c.horizon,
        expected_children: c.expected_children,
        omega: c.omega,
        h: c.h,
        ..SimConfig::default()
    }
}

fn load_events(c: &RunConfig) -> Result<(EventFile, Ingested)> {
    let path = required(&c.events, "events")?;
    let file = parse_events(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    let ing = ingest(&file, c.units)?;
    Ok((file, ing))
}

fn units(file: &EventFile, c: &RunConfig) -> Units {
    let iso = file.records.iter().any(|r| r.time.parse::<f64>().is_err());
    Units {
        space: if file.is_geographic() { "m".into() } else { "space".into() },
        time: if iso { c.units.label().into() } else { "time".into() },
    }
}

fn unit_of(name: &str, u: &Units) -> String {
    match name {
        "mu0" => "events".into(),
        "tau_x" | "h" => u.space.clone(),
        "tau_t" => u.time.clone(),
        "theta" => "offspring".into(),
        "omega" => format!("1/{}", u.time),
        "se_weight" => "fraction".into(),
        "sigma2" => format!("{}^2", u.space),
        "log_likelihood" => "nats".into(),
        _ => "".into(),
    }
}

fn summary_csv(summary: &PosteriorSummary, u: &Units) -> String {
    let mut s = String::from("quantity,unit,mean[unit],median[unit],q025[unit],q975[unit],ess[draws]\n");
    for q in &summary.quantities {
        let ess = q.ess.map(num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            q.name,
            unit_of(&q.name, u),
            num(q.mean),
            num(q.median),
            num(q.q025),
            num(q.q975),
            ess
        );
    }
    s
}

/// `fit`: one chain in the configured mode.
pub fn fit(c: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let (file, ing) = load_events(c)?;
    let u = units(&file, c);
    let (data, observed) = match c.mode {
        Mode::GroupedSquare | Mode::GroupedDisc => {
            let want_square = c.mode == Mode::GroupedSquare;
            for (id, r) in ing.ids.iter().zip(&ing.regions) {
                let ok = match r.kind() {
                    RegionKind::Point => true,
                    RegionKind::Square { .. } => want_square,
                    RegionKind::Disc { .. } => !want_square,
                };
                if !ok {
                    bail!("event {id}: region kind does not match mode {:?}", c.mode);
                }
            }
            (ModelData::grouped(&ing.catalog, ing.regions.clone())?, ing.catalog.locations().to_vec())
        }
        Mode::Fixed => (ModelData::fixed(&ing.catalog)?, ing.catalog.locations().to_vec()),
        Mode::Bmds => {
            let dim = c.dims[0];
            let path = required(&c.distances, "distances")?;
            let (labels, y) = parse_distances(&read(path)?, DISTANCE_TOLERANCE)?;
            let y = y.permuted(&label_order(&labels, &ing.ids)?);
            let data = ModelData::bmds(ing.catalog.times().to_vec(), y, dim, None)?;
            let init = data.initial_locations().to_vec();
            (data, init)
        }
    };
    let sampler = sampler_config(c, data.is_bmds())?;
    let out_dir = prepare_out(c)?;
    let chain = run_chain(&sampler, &priors(c)?, &data)?;
    let dim = data.dim();
    let diag = posterior_diagnostics(&chain.snapshots, &observed, data.times(), dim)?;
    let subset: Vec<usize> = (0..data.len().min(c.snapshot_events)).collect();
    let space = if data.is_bmds() { Units { space: "latent".into(), time: u.time.clone() } } else { u.clone() };
    write(out_dir, "snapshots.csv", write_snapshots(&chain.snapshots, dim, &subset, &ing.ids, &space)?)?;
    if c.binary_dump {
        write(out_dir, "snapshots.bin", write_binary_dump(&chain.snapshots, data.len(), dim))?;
    }
    write(out_dir, "summary.csv", summary_csv(&diag.summary, &space))?;
    let mut d = format!("id,displacement[{}],self_excitation[probability]\n", space.space);
    for (k, id) in ing.ids.iter().enumerate() {
        let _ = writeln!(d, "{id},{},{}", num(diag.displacement[k]), num(diag.self_excitation[k]));
    }
    write(out_dir, "diagnostics.csv", d)?;
    let mut log = String::new();
    let _ = writeln!(log, "command: fit");
    let _ = writeln!(log, "events: {}", data.len());
    if let Some(p) = ing.projection {
        let _ = writeln!(log, "projection center (lon, lat): {} {}", p.lon0, p.lat0);
    }
    let _ = writeln!(log, "snapshots: {}", chain.snapshots.len());
    let _ = writeln!(log, "acceptance params: {:.4}", chain.stats.params.rate());
    let _ = writeln!(log, "acceptance locations: {:.4}", chain.stats.locations.rate());
    let _ = writeln!(log, "acceptance sigma2: {:.4}", chain.stats.sigma2.rate());
    let _ = writeln!(log, "wall seconds: {:.3}", start.elapsed().as_secs_f64());
    write(out_dir, "run.log", log)
}

/// Position in `labels` of each id, for reordering a distance matrix.
fn label_order(labels: &[String], ids: &[String]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    if index.len() != labels.len() || labels.len() != ids.len() {
        bail!("distance labels must be unique and match the {} event ids", ids.len());
    }
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| anyhow!("event {id} missing from distance labels")))
        .collect()
}

fn simulated_file(sim: &SimulatedCatalog) -> EventFile {
    let cat = &sim.catalog;
    EventFile {
        coord_names: (1..=cat.dim()).map(|d| format!("x{d}")).collect(),
        records: (0..cat.len())
            .map(|k| EventRecord {
                id: k.to_string(),
                time: num(cat.time(k)),
                coords: cat.location(k).to_vec(),
                region: RegionEntry::Point,
            })
            .collect(),
    }
}

/// `simulate`: one catalog from the cluster model plus its ancestry.
pub fn simulate(c: &RunConfig) -> Result<()> {
    let sim_cfg = sim_config(c);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let sim = coarse_hawkes::simulate_catalog(&sim_cfg, &mut rng)?;
    let out = prepare_out(c)?;
    write(out, "events.csv", write_events(&simulated_file(&sim))?)?;
    let mut a = String::from("id,generation[count],parent\n");
    for k in 0..sim.catalog.len() {
        let parent = sim.parent[k].map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(a, "{k},{},{parent}", sim.generation[k]);
    }
    write(out, "ancestry.csv", a)?;
    write(out, "run.log", format!("command: simulate\nevents: {}\nexpected: {}\n", sim.catalog.len(), sim_cfg.expected_size()))
}

/// `coarsen`: rounds every coordinate to the precision grid and attaches the
/// matching square regions.
pub fn coarsen_events(c: &RunConfig) -> Result<()> {
    let path = required(&c.events, "events")?;
    let file = parse_events(&read(path)?)?;
    if file.is_geographic() {
        bail!("coarsen works on planar x1,x2 coordinates");
    }
    let times: Vec<f64> = file
        .records
        .iter()
        .map(|r| r.time.parse::<f64>().map_err(|_| anyhow!("event {}: coarsen needs decimal times", r.id)))
        .collect::<Result<_>>()?;
    let dim = file.coord_names.len();
    let events: Vec<Event> = file.records.iter().zip(&times).map(|(r, &t)| Event::new(r.coords.clone(), t)).collect();
    let (catalog, order) = EventCatalog::from_unsorted(dim, &events)?;
    let (coarse, regions) = coarsen(&catalog, c.precision)?;
    let records = order
        .iter()
        .enumerate()
        .map(|(k, &o)| EventRecord {
            id: file.records[o].id.clone(),
            time: file.records[o].time.clone(),
            coords: coarse.location(k).to_vec(),
            region: match regions[k].kind() {
                RegionKind::Square { half_width } => RegionEntry::Square { half_width },
                _ => RegionEntry::Point,
            },
        })
        .collect();
    let out = prepare_out(c)?;
    write(out, "events.csv", write_events(&EventFile { coord_names: file.coord_names.clone(), records })?)?;
    write(out, "run.log", format!("command: coarsen\nevents: {}\nprecision: {}\n", coarse.len(), c.precision))
}

/// `coverage`: the simulation study of credible-interval coverage for `h`.
pub fn coverage(c: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let cfg = CoverageConfig {
        sim: sim_config(c),
        precisions: c.precisions.clone(),
        sampler: sampler_config(c, false)?,
        priors: priors(c)?,
        seed: c.seed,
        ..CoverageConfig::default()
    };
    let report = coverage_study(c.replicates, &cfg)?;
    let out = prepare_out(c)?;
    let mut t = String::from("precision[space],ci_level[probability],mode,covered_fraction[fraction],replicates[count],failures[count]\n");
    for r in &report.rows {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{}",
            num(r.precision),
            num(r.ci_level),
            r.mode.label(),
            num(r.covered_fraction),
            r.replicates,
            r.failures
        );
    }
    write(out, "coverage.csv", t)?;
    let mut l = String::from("precision[space],mode,mean_proportion[fraction],replicates[count]\n");
    for r in &report.locations {
        let _ = writeln!(l, "{},{},{},{}", num(r.precision), r.mode.label(), num(r.mean_proportion), r.replicates);
    }
    write(out, "location_coverage.csv", l)?;
    let mut raw = String::from(
        "replicate,precision[space],mode,events[count],h_mean[space],h_q025[space],h_q975[space],location_coverage[fraction],acceptance[fraction]\n",
    );
    for r in &report.results {
        let _ = writeln!(
            raw,
            "{},{},{},{},{},{},{},{},{}",
            r.replicate,
            num(r.precision),
            r.mode.label(),
            r.n_events,
            num(r.h_mean),
            num(r.h_interval95.0),
            num(r.h_interval95.1),
            num(r.location_coverage),
            num(r.acceptance_rate)
        );
    }
    write(out, "replicates.csv", raw)?;
    let mut log = format!("command: coverage\nreplicates: {}\n", c.replicates);
    for f in &report.failures {
        let _ = writeln!(log, "failed: replicate {} precision {} {}: {}", f.0, f.1, f.2.label(), f.3);
    }
    let _ = writeln!(log, "wall seconds: {:.3}", start.elapsed().as_secs_f64());
    write(out, "run.log", log)
}

/// `cv`: `lpd-hat` for every requested latent dimension.
pub fn cv(c: &RunConfig) -> Result<()> {
    if c.mode != Mode::Bmds {
        bail!("cv needs --mode bmds");
    }
    let (_, ing) = load_events(c)?;
    let path = required(&c.distances, "distances")?;
    let (labels, y) = parse_distances(&read(path)?, DISTANCE_TOLERANCE)?;
    let y = y.permuted(&label_order(&labels, &ing.ids)?);
    let cfg = CvConfig { folds: c.folds, fold_seed: c.seed, sampler: sampler_config(c, true)?, priors: priors(c)? };
    let out = prepare_out(c)?;
    let mut t = String::from("dim[count],lpd_hat[nats],degenerate_pairs[count]\n");
    for &d in &c.dims {
        let est = cross_validate(ing.catalog.times(), &y, d, &cfg)?;
        info!("D = {d}: lpd_hat = {}", est.value);
        let _ = writeln!(t, "{d},{},{}", num(est.value), est.degenerate_pairs);
    }
    write(out, "lpd.csv", t)?;
    write(out, "run.log", format!("command: cv\nfolds: {}\ndims: {:?}\n", c.folds, c.dims))
}

/// Synthetic planar catalog of `n` events for timing.
pub fn benchmark_catalog(n: usize, seed: u64) -> Result<EventCatalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt();
    let events: Vec<Event> = (0..n)
        .map(|_| {
            let x = vec![side * rng.random::<f64>(), side * rng.random::<f64>()];
            Event::new(x, n as f64 * rng.random::<f64>())
        })
        .collect();
    Ok(EventCatalog::from_unsorted(2, &events)?.0)
}

/// `benchmark`: wall time of the likelihood and gradient per plan and size.
pub fn benchmark(c: &RunConfig) -> Result<()> {
    let params = HawkesParams::new(1.0, 1.0, 10.0, 0.5, 1.0, 0.5)?;
    let mut plans = Vec::new();
    for &w in &c.worker_counts {
        for &j in &c.block_widths {
            plans.push(ExecutionPlan::new(w, j)?);
        }
    }
    let out = prepare_out(c)?;
    let mut t = String::from("N[events]\tworker_count[threads]\tJ[lanes]\twall_seconds[s]\tchecksum[hex]\tspeedup[ratio]\n");
    for &n in &c.sizes {
        let catalog = benchmark_catalog(n, c.seed)?;
        let rows = benchmark_plans(&catalog, &params, &plans, c.repeats)?;
        for r in &rows {
            let base = rows
                .iter()
                .find(|b| b.workers == 1 && b.block_width == r.block_width)
                .map(|b| b.wall_seconds / r.wall_seconds);
            let _ = writeln!(
                t,
                "{}\t{}\t{}\t{:.6}\t{:016x}\t{}",
                r.n,
                r.workers,
                r.block_width,
                r.wall_seconds,
                r.checksum,
                base.map(|s| format!("{s:.3}")).unwrap_or_default()
            );
        }
    }
    write(out, "benchmark.tsv", t)
}

/// `summarize`: posterior summary of a snapshot table written by `fit`.
pub fn summarize(c: &RunConfig) -> Result<()> {
    let path = required(&c.snapshots, "snapshots")?;
    let text = read(path)?;
    let cols = read_snapshot_columns(&text)?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    let unit_in = |name: &str| -> Option<String> {
        header.iter().find(|h| h.split('[').next() == Some(name)).and_then(|h| {
            h.split_once('[').map(|(_, r)| r.trim_end_matches(']').to_string())
        })
    };
    let u = Units {
        space: unit_in("h").unwrap_or_else(|| "space".into()),
        time: unit_in("tau_t").unwrap_or_else(|| "time".into()),
    };
    let get = |name: &str| cols.iter().find(|(n, _)| n == name).map(|(_, v)| v.clone());
    let p: Vec<Vec<f64>> = HawkesParams::NAMES
        .iter()
        .map(|n| get(n).ok_or_else(|| anyhow!("snapshot table lacks column {n}")))
        .collect::<Result<_>>()?;
    let sigma = get("sigma2");
    let ll = get("log_likelihood").ok_or_else(|| anyhow!("snapshot table lacks column log_likelihood"))?;
    let iter = get("iteration").ok_or_else(|| anyhow!("snapshot table lacks column iteration"))?;
    let snaps: Vec<Snapshot> = (0..ll.len())
        .map(|i| Snapshot {
            iteration: iter[i] as u64,
            params: HawkesParams::from_array(std::array::from_fn(|k| p[k][i])),
            sigma2: sigma.as_ref().map(|s| s[i]),
            locations: Vec::new(),
            log_likelihood: ll[i],
        })
        .collect();
    let summary = coarse_hawkes::diagnostics::summarize(&snaps);
    let out = prepare_out(c)?;
    write(out, "summary.csv", summary_csv(&summary, &u))
}
