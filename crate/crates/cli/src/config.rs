//! Run configuration: defaults, overlaid by a flat TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Square regions (point rows allowed).
    GroupedSquare,
    /// Disc regions given by radius or area (point rows allowed).
    GroupedDisc,
    /// Locations held at their observed values.
    Fixed,
    /// Latent locations from a distance matrix.
    Bmds,
}

/// Unit of ISO-8601 timestamps after conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TimeUnits {
    Hours,
    Days,
}

impl TimeUnits {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Hours => "hours",
            Self::Days => "days",
        }
    }
}

/// Every setting any subcommand reads. Keys absent from the file and the
/// command line take the defaults of [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Latent dimension(s); `fit` uses the first, `cv` all of them.
    pub dims: Vec<usize>,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
    pub workers: usize,
    pub block_width: usize,
    pub events: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub out: PathBuf,
    pub units: TimeUnits,
    pub block_size: usize,
    pub location_sweep: bool,
    pub leapfrog_steps: usize,
    pub step_size: f64,
    pub prior_base_sd: f64,
    pub scan_params: Option<f64>,
    pub scan_locations: Option<f64>,
    pub scan_sigma2: Option<f64>,
    /// Events whose coordinates go into the snapshot table.
    pub snapshot_events: usize,
    pub binary_dump: bool,
    pub precision: f64,
    pub precisions: Vec<f64>,
    pub replicates: usize,
    pub folds: usize,
    pub sizes: Vec<usize>,
    pub worker_counts: Vec<usize>,
    pub block_widths: Vec<usize>,
    pub repeats: usize,
    pub expected_background: f64,
    pub horizon: f64,
    pub expected_children: f64,
    pub omega: f64,
    pub h: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::GroupedSquare,
            dims: vec![2],
            iterations: 10_000,
            burnin: 2_000,
            thin: 10,
            seed: 1,
            workers: 1,
            block_width: 1,
            events: None,
            distances: None,
            snapshots: None,
            out: PathBuf::from("out"),
            units: TimeUnits::Hours,
            block_size: 10,
            location_sweep: false,
            leapfrog_steps: 20,
            step_size: 0.01,
            prior_base_sd: 1.0,
            scan_params: None,
            scan_locations: None,
            scan_sigma2: None,
            snapshot_events: 10,
            binary_dump: false,
            precision: 1.0,
            precisions: vec![0.1, 0.5, 1.0],
            replicates: 100,
            folds: 5,
            sizes: vec![1_000, 10_000],
            worker_counts: vec![1, 2, 4],
            block_widths: vec![4],
            repeats: 3,
            expected_background: 200.0,
            horizon: 100.0,
            expected_children: 0.5,
            omega: 1.0,
            h: 0.5,
        }
    }
}

/// Command-line overrides; every flag wins over the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat TOML file with any of the configuration keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Latent dimension, or a list (`1,2,3`) or range (`1-6`) for `cv`.
    #[arg(long, global = true)]
    pub dims: Option<String>,
    #[arg(long, global = true)]
    pub iterations: Option<u64>,
    #[arg(long, global = true)]
    pub burnin: Option<u64>,
    #[arg(long, global = true)]
    pub thin: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub block_width: Option<usize>,
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    #[arg(long, global = true)]
    pub distances: Option<PathBuf>,
    #[arg(long, global = true)]
    pub snapshots: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub units: Option<TimeUnits>,
    #[arg(long, global = true)]
    pub precision: Option<f64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
}

/// Parses `3`, `1,2,4` or `1-6`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    let dims: Vec<usize> = if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty dimension range {s}");
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|v| v.trim().parse::<usize>()).collect::<std::result::Result<_, _>>()?
    };
    if dims.is_empty() || dims.contains(&0) {
        bail!("dimensions must be >= 1, got {s:?}");
    }
    Ok(dims)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Defaults, then the file named by `--config`, then the flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &flags.$f { c.$f = v.clone().into(); })*};
        }
        take!(mode, iterations, burnin, thin, seed, workers, block_width, events, distances, snapshots);
        take!(out, units, precision, replicates, folds);
        if let Some(d) = &flags.dims {
            c.dims = parse_dims(d)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            bail!("dims must be >= 1");
        }
        if self.workers == 0 || self.block_width == 0 {
            bail!("workers and block_width must be >= 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
