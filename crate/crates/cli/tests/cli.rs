use std::fs;
use std::path::Path;

use coarse_hawkes::geometry::{RegionKind, SQUARE_METERS_PER_ACRE};
use coarse_hawkes::{DistanceMatrix, HawkesParams, Snapshot};
use coarse_hawkes_cli::config::{parse_dims, Mode, RunConfig, TimeUnits};
use coarse_hawkes_cli::io::{
    convert_times, ingest, parse_distances, parse_events, read_binary_dump, write_binary_dump, write_distances,
    write_events, Projection,
};
use coarse_hawkes_cli::run_from_args;

const THREE_ROWS: &str = "\
id,time,x1,x2,kind,half_width,radius,area
a,0.5,1.25,-3,point,,,
b,1.75,0.001,2.5,square,0.5,,
c,2,-7.125,4,disc,,0.75,
";

fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut v = vec!["coarse-hawkes"];
    v.extend_from_slice(args);
    run_from_args(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn three_row_file_round_trips() {
    let file = parse_events(THREE_ROWS).unwrap();
    assert_eq!(write_events(&file).unwrap(), THREE_ROWS);
    assert_eq!(parse_events(&write_events(&file).unwrap()).unwrap(), file);
}

#[test]
fn area_in_acres_becomes_radius() {
    // π m² expressed in acres: the disc radius must come out as exactly 1 m
    let acres = std::f64::consts::PI / SQUARE_METERS_PER_ACRE;
    let text = format!("id,time,x1,x2,kind,half_width,radius,area\na,0,0,0,disc,,,{acres}\n");
    let ing = ingest(&parse_events(&text).unwrap(), TimeUnits::Hours).unwrap();
    match ing.regions[0].kind() {
        RegionKind::Disc { radius } => assert!((radius - 1.0).abs() < 1e-12, "{radius}"),
        k => panic!("{k:?}"),
    }
}

#[test]
fn projection_matches_geodesic_distance() {
    // WGS84 ellipsoid distance for 0.001° of longitude at 38.9°N, from the
    // prime-vertical radius of curvature: a cos φ / sqrt(1 - e² sin² φ)
    let (a, f) = (6_378_137.0_f64, 1.0 / 298.257_223_563);
    let e2 = f * (2.0 - f);
    let phi = 38.9_f64.to_radians();
    let geodesic = a * phi.cos() / (1.0 - e2 * phi.sin().powi(2)).sqrt() * 0.001_f64.to_radians();
    assert!((geodesic - 86.75).abs() < 0.05, "{geodesic}");

    let proj = Projection::centroid(&[[-77.0, 38.9], [-76.999, 38.9]]);
    let (p0, p1) = (proj.project(-77.0, 38.9), proj.project(-76.999, 38.9));
    let d = ((p0[0] - p1[0]).powi(2) + (p0[1] - p1[1]).powi(2)).sqrt();
    assert!((d - 86.6).abs() < 0.2, "{d}");
    assert!((d / geodesic - 1.0).abs() < 0.01, "{d} vs {geodesic}");
}

#[test]
fn geographic_rows_are_projected_about_the_centroid() {
    let text = "id,time,lon,lat,kind,half_width,radius,area\na,0,-77,38.9,point,,,\nb,1,-76.999,38.9,point,,,\n";
    let ing = ingest(&parse_events(text).unwrap(), TimeUnits::Hours).unwrap();
    let x = ing.catalog.locations();
    assert!((x[0] + x[2]).abs() < 1e-9 && x[1].abs() < 1e-6);
}

#[test]
fn malformed_rows_report_their_line() {
    let bad = "id,time,x1,x2,kind,half_width,radius,area\na,0,0,0,point,,,\nb,1,zz,0,point,,,\n";
    let e = parse_events(bad).unwrap_err().to_string();
    assert!(e.contains("line 3"), "{e}");
    let both = "id,time,x1,x2,kind,half_width,radius,area\na,0,0,0,disc,,1,2\n";
    assert!(parse_events(both).unwrap_err().to_string().contains("mutually exclusive"));
    let nan = "id,time,x1,x2,kind,half_width,radius,area\na,0,NaN,0,point,,,\n";
    assert!(parse_events(nan).is_err());
}

#[test]
fn unsorted_rows_are_sorted_with_ids_following() {
    let text = "id,time,x1,x2,kind,half_width,radius,area\nlate,5,1,1,point,,,\nearly,2,0,0,point,,,\n";
    let ing = ingest(&parse_events(text).unwrap(), TimeUnits::Hours).unwrap();
    assert_eq!(ing.ids, ["early", "late"]);
    assert_eq!(ing.catalog.times(), [2.0, 5.0]);
}

#[test]
fn timestamps_convert_to_hours_or_days() {
    let raw: Vec<String> = ["2020-01-02T06:00:00", "2020-01-01T00:00:00", "2020-01-03 00:00:00"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(convert_times(&raw, TimeUnits::Hours).unwrap(), [30.0, 0.0, 48.0]);
    assert_eq!(convert_times(&raw, TimeUnits::Days).unwrap(), [1.25, 0.0, 2.0]);
    assert!(convert_times(&["2020-01-01".into(), "soon".into()], TimeUnits::Hours).is_err());
}

#[test]
fn distances_round_trip_and_tolerate_rounding() {
    let m = DistanceMatrix::from_points(&[0.0, 0.0, 3.0, 4.0, 1.0, 1.0], 2);
    let labels: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let (l, back) = parse_distances(&write_distances(&labels, &m).unwrap(), 1e-9).unwrap();
    assert_eq!(l, labels);
    assert_eq!(back, m);
    let skew = "a,b\n0,1\n1.0000000001,0\n";
    assert!(parse_distances(skew, 1e-9).is_ok());
    assert!(parse_distances("a,b\n0,1\n1.1,0\n", 1e-9).is_err());
}

#[test]
fn binary_dump_round_trips() {
    let snaps = vec![
        Snapshot {
            iteration: 10,
            params: HawkesParams::new(1.0, 2.0, 3.0, 0.4, 0.5, 0.6).unwrap(),
            sigma2: None,
            locations: vec![0.5, -1.0, 2.25, 3.0],
            log_likelihood: -12.5,
        },
        Snapshot {
            iteration: 20,
            params: HawkesParams::new(1.5, 2.0, 3.0, 0.4, 0.5, 0.7).unwrap(),
            sigma2: Some(0.01),
            locations: vec![0.0, 1.0, 2.0, 3.0],
            log_likelihood: -11.0,
        },
    ];
    let bytes = write_binary_dump(&snaps, 2, 2);
    assert_eq!(&bytes[..8], b"CHSNAP01");
    assert_eq!(bytes.len(), 32 + 2 * 8 * (1 + 6 + 2 + 4));
    assert_eq!(read_binary_dump(&bytes).unwrap(), snaps);
}

#[test]
fn dims_parsing_and_validation() {
    assert_eq!(parse_dims("3").unwrap(), [3]);
    assert_eq!(parse_dims("1,2,4").unwrap(), [1, 2, 4]);
    assert_eq!(parse_dims("1-4").unwrap(), [1, 2, 3, 4]);
    assert!(parse_dims("0").is_err());
    assert!(parse_dims("2-1").is_err());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "iterations = 50\nseed = 9\nmode = \"bmds\"\n").unwrap();
    let flags = coarse_hawkes_cli::config::Flags {
        config: Some(path.clone()),
        seed: Some(4),
        ..Default::default()
    };
    let c = RunConfig::resolve(&flags).unwrap();
    assert_eq!((c.iterations, c.seed, c.mode), (50, 4, Mode::Bmds));
    fs::write(&path, "no_such_key = 1\n").unwrap();
    assert!(RunConfig::resolve(&flags).is_err());
}

/// Simulated catalog of roughly 30 events coarsened to squares of width 0.5.
fn toy_events(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sim.toml");
    fs::write(&cfg, "expected_background = 15.0\nhorizon = 15.0\n").unwrap();
    cli(&["simulate", "--config", p(&cfg), "--seed", "11", "--out", p(&dir.join("sim"))]).unwrap();
    cli(&["coarsen", "--events", p(&dir.join("sim/events.csv")), "--precision", "0.5", "--out", p(&dir.join("coarse"))])
        .unwrap();
    dir.join("coarse/events.csv")
}

fn fit(dir: &Path, events: &Path, out: &str) -> std::path::PathBuf {
    let out = dir.join(out);
    cli(&["fit", "--events", p(events), "--iterations", "1500", "--burnin", "300", "--thin", "5", "--seed", "5", "--out", p(&out)])
        .unwrap();
    out
}

#[test]
fn fit_toy_catalog_gives_ordered_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let events = toy_events(dir.path());
    let n = fs::read_to_string(&events).unwrap().lines().count() - 1;
    assert!((15..=60).contains(&n), "{n} events");
    let out = fit(dir.path(), &events, "fit");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut rows = 0;
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let v: Vec<f64> = f[2..6].iter().map(|s| s.parse().unwrap()).collect();
        let (median, lo, hi) = (v[1], v[2], v[3]);
        assert!(lo <= median && median <= hi, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 7);
    for name in ["config.toml", "snapshots.csv", "diagnostics.csv", "run.log"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let header = fs::read_to_string(out.join("snapshots.csv")).unwrap();
    assert!(header.starts_with("iteration,mu0[events],tau_x[space],tau_t[time],"));
}

#[test]
fn fixed_seed_reproduces_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let events = toy_events(dir.path());
    let a = fit(dir.path(), &events, "a");
    let b = fit(dir.path(), &events, "b");
    for name in ["summary.csv", "snapshots.csv", "diagnostics.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    cli(&["summarize", "--snapshots", p(&a.join("snapshots.csv")), "--out", p(&dir.path().join("s"))]).unwrap();
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(dir.path().join("s/summary.csv")).unwrap());
}

#[test]
fn fit_requires_matching_region_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("e.csv");
    fs::write(&events, THREE_ROWS).unwrap();
    let e = cli(&["fit", "--events", p(&events), "--iterations", "10", "--out", p(&dir.path().join("o"))]).unwrap_err();
    assert!(e.to_string().contains("region kind"), "{e}");
}

fn bmds_inputs(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut ev = String::from("id,time,kind,half_width,radius,area\n");
    let mut pts = Vec::new();
    for k in 0..n {
        let f = k as f64;
        ev.push_str(&format!("e{k},{},point,,,\n", f * 0.7));
        pts.extend([(f * 1.3).sin() * 2.0, (f * 0.7).cos() * 2.0, (f * 0.4).sin()]);
    }
    let labels: Vec<String> = (0..n).map(|k| format!("e{k}")).collect();
    let y = DistanceMatrix::from_points(&pts, 3);
    let (e, d) = (dir.join("ev.csv"), dir.join("y.csv"));
    fs::write(&e, ev).unwrap();
    fs::write(&d, write_distances(&labels, &y).unwrap()).unwrap();
    (e, d)
}

#[test]
fn cv_rejects_zero_dimension_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (e, d) = bmds_inputs(dir.path(), 10);
    let base = ["cv", "--mode", "bmds", "--events", p(&e), "--distances", p(&d), "--iterations", "200", "--burnin", "50"];
    let z = dir.path().join("z");
    let mut zero = base.to_vec();
    zero.extend(["--dims", "0", "--out", p(&z)]);
    assert!(cli(&zero).is_err());
    for out in ["a", "b"] {
        let mut args = base.to_vec();
        let o = dir.path().join(out);
        args.extend(["--dims", "1-2", "--folds", "3", "--out", p(&o)]);
        cli(&args).unwrap();
    }
    let a = fs::read_to_string(dir.path().join("a/lpd.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b/lpd.csv")).unwrap());
    assert_eq!(a.lines().count(), 3);
}

#[test]
fn bmds_fit_writes_sigma2() {
    let dir = tempfile::tempdir().unwrap();
    let (e, d) = bmds_inputs(dir.path(), 8);
    let out = dir.path().join("o");
    cli(&[
        "fit", "--mode", "bmds", "--dims", "3", "--events", p(&e), "--distances", p(&d), "--iterations", "300",
        "--burnin", "50", "--out", p(&out),
    ])
    .unwrap();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("\nsigma2,latent^2,"), "{summary}");
}

#[test]
fn benchmark_checksums_agree_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    fs::write(&cfg, "sizes = [300]\nworker_counts = [1, 2, 4]\nblock_widths = [1, 4]\nrepeats = 1\n").unwrap();
    cli(&["benchmark", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]).unwrap();
    let t = fs::read_to_string(dir.path().join("o/benchmark.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = t.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 6);
    for j in ["1", "4"] {
        let sums: Vec<&str> = rows.iter().filter(|r| r[2] == j).map(|r| r[4]).collect();
        assert!(sums.iter().all(|s| *s == sums[0]), "{sums:?}");
        let base = rows.iter().find(|r| r[2] == j && r[1] == "1").unwrap();
        assert_eq!(base[5], "1.000");
    }
}
