//! File formats: event tables, distance matrices, snapshot tables and dumps.

use std::f64::consts::PI;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::warn;

use coarse_hawkes::geometry::SQUARE_METERS_PER_ACRE;
use coarse_hawkes::{DistanceMatrix, EventCatalog, Snapshot, UncertaintyRegion};

use crate::config::TimeUnits;

/// Mean Earth radius in meters used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Region column of one event row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionEntry {
    Point,
    Square { half_width: f64 },
    Disc { radius: f64 },
    /// Disc whose area is given in acres.
    DiscArea { acres: f64 },
}

/// One row of an event table, as written.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub id: String,
    /// Decimal model time or an ISO-8601 timestamp.
    pub time: String,
    pub coords: Vec<f64>,
    pub region: RegionEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    /// `x1..xD`, or `lon, lat` for geographic coordinates.
    pub coord_names: Vec<String>,
    pub records: Vec<EventRecord>,
}

impl EventFile {
    pub fn is_geographic(&self) -> bool {
        self.coord_names == ["lon", "lat"]
    }
}

fn parse_opt(field: &str, line: u64, name: &str) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    let v: f64 = f.parse().with_context(|| format!("line {line}: bad {name} {f:?}"))?;
    if !v.is_finite() {
        bail!("line {line}: {name} must be finite");
    }
    Ok(Some(v))
}

/// Parses an event table with header
/// `id,time,<coords>,kind,half_width,radius,area` where `<coords>` is
/// `x1,...,xD`, `lon,lat`, or absent.
pub fn parse_events(text: &str) -> Result<EventFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let tail = ["kind", "half_width", "radius", "area"];
    if header.len() < 6 || header[0] != "id" || header[1] != "time" || header[header.len() - 4..] != tail {
        bail!("line 1: header must be id,time,<coordinates>,kind,half_width,radius,area");
    }
    let coord_names: Vec<String> = header[2..header.len() - 4].to_vec();
    let xs = coord_names.iter().enumerate().all(|(i, n)| *n == format!("x{}", i + 1));
    if !(xs || coord_names == ["lon", "lat"]) {
        bail!("line 1: coordinate columns must be x1..xD or lon,lat, found {coord_names:?}");
    }
    let dim = coord_names.len();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            bail!("line {line}: expected {} fields, found {}", header.len(), row.len());
        }
        let mut coords = Vec::with_capacity(dim);
        for d in 0..dim {
            coords.push(parse_opt(&row[2 + d], line, &coord_names[d])?.ok_or_else(|| anyhow!("line {line}: missing {}", coord_names[d]))?);
        }
        let k = 2 + dim;
        let hw = parse_opt(&row[k + 1], line, "half_width")?;
        let radius = parse_opt(&row[k + 2], line, "radius")?;
        let area = parse_opt(&row[k + 3], line, "area")?;
        let region = match &row[k] {
            "point" if hw.is_none() && radius.is_none() && area.is_none() => RegionEntry::Point,
            "square" if radius.is_none() && area.is_none() => RegionEntry::Square {
                half_width: hw.ok_or_else(|| anyhow!("line {line}: square needs half_width"))?,
            },
            "disc" if hw.is_none() => match (radius, area) {
                (Some(r), None) => RegionEntry::Disc { radius: r },
                (None, Some(a)) => RegionEntry::DiscArea { acres: a },
                (Some(_), Some(_)) => bail!("line {line}: radius and area are mutually exclusive"),
                (None, None) => bail!("line {line}: disc needs radius or area"),
            },
            "point" | "square" | "disc" => bail!("line {line}: region columns do not match kind {:?}", &row[k]),
            other => bail!("line {line}: unknown region kind {other:?}"),
        };
        records.push(EventRecord { id: row[0].to_string(), time: row[1].to_string(), coords, region });
    }
    Ok(EventFile { coord_names, records })
}

pub fn write_events(file: &EventFile) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend(file.coord_names.iter().cloned());
    header.extend(["kind", "half_width", "radius", "area"].map(String::from));
    w.write_record(&header)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &file.records {
        let mut row = vec![r.id.clone(), r.time.clone()];
        row.extend(r.coords.iter().map(|c| c.to_string()));
        let (kind, hw, radius, area) = match r.region {
            RegionEntry::Point => ("point", None, None, None),
            RegionEntry::Square { half_width } => ("square", Some(half_width), None, None),
            RegionEntry::Disc { radius } => ("disc", None, Some(radius), None),
            RegionEntry::DiscArea { acres } => ("disc", None, None, Some(acres)),
        };
        row.extend([kind.to_string(), num(hw), num(radius), num(area)]);
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Times in model units: decimals as given, timestamps as hours or days
/// since the earliest one. A file may not mix the two.
pub fn convert_times(raw: &[String], units: TimeUnits) -> Result<Vec<f64>> {
    if raw.iter().all(|t| t.parse::<f64>().is_ok()) {
        return raw
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v: f64 = t.parse()?;
                if !(v.is_finite() && v >= 0.0) {
                    bail!("event {}: time {t} must be finite and >= 0", i + 1);
                }
                Ok(v)
            })
            .collect();
    }
    let stamps: Vec<NaiveDateTime> = raw
        .iter()
        .enumerate()
        .map(|(i, t)| parse_timestamp(t).ok_or_else(|| anyhow!("event {}: unparsable time {t:?}", i + 1)))
        .collect::<Result<_>>()?;
    let first = *stamps.iter().min().ok_or_else(|| anyhow!("no events"))?;
    let per_unit = match units {
        TimeUnits::Hours => 3_600.0,
        TimeUnits::Days => 86_400.0,
    };
    Ok(stamps
        .iter()
        .map(|t| (*t - first).num_milliseconds() as f64 / 1_000.0 / per_unit)
        .collect())
}

/// Equirectangular projection about a reference point, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    /// Centered on the mean longitude and latitude.
    pub fn centroid(lonlat: &[[f64; 2]]) -> Self {
        let n = lonlat.len().max(1) as f64;
        Self {
            lon0: lonlat.iter().map(|p| p[0]).sum::<f64>() / n,
            lat0: lonlat.iter().map(|p| p[1]).sum::<f64>() / n,
        }
    }

    pub fn project(&self, lon: f64, lat: f64) -> [f64; 2] {
        let k = PI / 180.0 * EARTH_RADIUS_M;
        [k * (lon - self.lon0) * (self.lat0 * PI / 180.0).cos(), k * (lat - self.lat0)]
    }
}

/// An event table turned into model inputs, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub catalog: EventCatalog,
    pub regions: Vec<UncertaintyRegion>,
    /// Ids in catalog order.
    pub ids: Vec<String>,
    pub projection: Option<Projection>,
}

pub fn ingest(file: &EventFile, units: TimeUnits) -> Result<Ingested> {
    if file.records.is_empty() {
        bail!("event file has no rows");
    }
    let times = convert_times(&file.records.iter().map(|r| r.time.clone()).collect::<Vec<_>>(), units)?;
    let (projection, locations): (Option<Projection>, Vec<Vec<f64>>) = if file.is_geographic() {
        let ll: Vec<[f64; 2]> = file.records.iter().map(|r| [r.coords[0], r.coords[1]]).collect();
        if ll.iter().any(|p| p[0].abs() > 180.0 || p[1].abs() > 90.0) {
            bail!("longitude/latitude out of range");
        }
        let proj = Projection::centroid(&ll);
        (Some(proj), ll.iter().map(|p| proj.project(p[0], p[1]).to_vec()).collect())
    } else {
        (None, file.records.iter().map(|r| r.coords.clone()).collect())
    };
    let dim = file.coord_names.len().max(1);
    let events: Vec<coarse_hawkes::Event> = locations
        .iter()
        .zip(&times)
        .map(|(l, &t)| coarse_hawkes::Event::new(if l.is_empty() { vec![0.0] } else { l.clone() }, t))
        .collect();
    let (catalog, order) = EventCatalog::from_unsorted(dim, &events)?;
    if order.iter().enumerate().any(|(i, &o)| i != o) {
        warn!("events were not in time order; sorted them");
    }
    let mut regions = Vec::with_capacity(order.len());
    let mut ids = Vec::with_capacity(order.len());
    for (k, &o) in order.iter().enumerate() {
        let r = &file.records[o];
        let centre = catalog.location(k).to_vec();
        let region = match r.region {
            RegionEntry::Point => UncertaintyRegion::point(centre),
            RegionEntry::Square { half_width } => UncertaintyRegion::square(centre, half_width),
            RegionEntry::Disc { radius } => UncertaintyRegion::disc(centre, radius),
            RegionEntry::DiscArea { acres } => UncertaintyRegion::disc_from_area(centre, acres * SQUARE_METERS_PER_ACRE),
        }
        .with_context(|| format!("event {}", r.id))?;
        regions.push(region);
        ids.push(r.id.clone());
    }
    Ok(Ingested { catalog, regions, ids, projection })
}

/// Distance table: a header of labels, then one row of `N` values per label.
pub fn parse_distances(text: &str, tol: f64) -> Result<(Vec<String>, DistanceMatrix)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != n {
            bail!("line {line}: expected {n} values, found {}", row.len());
        }
        for f in row.iter() {
            values.push(f.parse::<f64>().with_context(|| format!("line {line}: bad distance {f:?}"))?);
        }
        rows += 1;
    }
    if rows != n {
        bail!("distance table has {rows} rows for {n} labels");
    }
    Ok((labels, DistanceMatrix::from_tolerant(n, values, tol)?))
}

pub fn write_distances(labels: &[String], m: &DistanceMatrix) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(labels)?;
    for i in 0..m.len() {
        w.write_record((0..m.len()).map(|j| m.get(i, j).to_string()))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Column units of the snapshot table.
#[derive(Debug, Clone)]
pub struct Units {
    pub space: String,
    pub time: String,
}

pub fn param_headers(u: &Units) -> [String; 6] {
    [
        "mu0[events]".into(),
        format!("tau_x[{}]", u.space),
        format!("tau_t[{}]", u.time),
        "theta[offspring]".into(),
        format!("omega[1/{}]", u.time),
        format!("h[{}]", u.space),
    ]
}

/// Snapshot table: iteration, Θ, `σ²` when present, log-likelihood, then the
/// coordinates of the selected events.
pub fn write_snapshots(snapshots: &[Snapshot], dim: usize, subset: &[usize], ids: &[String], u: &Units) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let with_sigma = snapshots.first().is_some_and(|s| s.sigma2.is_some());
    let mut header = vec!["iteration".to_string()];
    header.extend(param_headers(u));
    if with_sigma {
        header.push(format!("sigma2[{}^2]", u.space));
    }
    header.push("log_likelihood[nats]".into());
    for &k in subset {
        for d in 0..dim {
            header.push(format!("x_{}_{}[{}]", ids[k], d + 1, u.space));
        }
    }
    w.write_record(&header)?;
    for s in snapshots {
        let mut row = vec![s.iteration.to_string()];
        row.extend(s.params.to_array().iter().map(f64::to_string));
        if let Some(v) = s.sigma2 {
            row.push(v.to_string());
        }
        row.push(s.log_likelihood.to_string());
        for &k in subset {
            row.extend(s.locations[k * dim..(k + 1) * dim].iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Reads named scalar columns (unit suffixes stripped) from a snapshot table.
pub fn read_snapshot_columns(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.split('[').next().unwrap_or(h).to_string())
        .collect();
    let mut cols = vec![Vec::new(); names.len()];
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        for (c, f) in cols.iter_mut().zip(row.iter()) {
            c.push(f.parse::<f64>().with_context(|| format!("line {line}: bad value {f:?}"))?);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

const DUMP_MAGIC: &[u8; 8] = b"CHSNAP01";

/// Fixed-layout little-endian dump of every snapshot with all locations:
/// magic `CHSNAP01`, then `u64` event count, dimension and snapshot count;
/// per snapshot a `u64` iteration, six `f64` parameters, `f64` `σ²` (NaN if
/// absent), `f64` log-likelihood and `N·D` `f64` coordinates.
pub fn write_binary_dump(snapshots: &[Snapshot], n: usize, dim: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + snapshots.len() * (8 * (9 + n * dim)));
    out.extend_from_slice(DUMP_MAGIC);
    for v in [n as u64, dim as u64, snapshots.len() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in snapshots {
        out.extend_from_slice(&s.iteration.to_le_bytes());
        let mut vals: Vec<f64> = s.params.to_array().to_vec();
        vals.push(s.sigma2.unwrap_or(f64::NAN));
        vals.push(s.log_likelihood);
        vals.extend_from_slice(&s.locations);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_binary_dump(bytes: &[u8]) -> Result<Vec<Snapshot>> {
    let mut pos = 0;
    let mut take8 = |bytes: &[u8]| -> Result<[u8; 8]> {
        let b = bytes.get(pos..pos + 8).ok_or_else(|| anyhow!("truncated dump"))?;
        pos += 8;
        Ok(b.try_into().expect("eight bytes"))
    };
    if &take8(bytes)? != DUMP_MAGIC {
        bail!("not a snapshot dump");
    }
    let n = u64::from_le_bytes(take8(bytes)?) as usize;
    let dim = u64::from_le_bytes(take8(bytes)?) as usize;
    let count = u64::from_le_bytes(take8(bytes)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let iteration = u64::from_le_bytes(take8(bytes)?);
        let mut f = || -> Result<f64> { Ok(f64::from_le_bytes(take8(bytes)?)) };
        let mut p = [0.0; 6];
        for v in &mut p {
            *v = f()?;
        }
        let sigma2 = Some(f()?).filter(|v| !v.is_nan());
        let log_likelihood = f()?;
        let locations = (0..n * dim).map(|_| f()).collect::<Result<Vec<_>>>()?;
        out.push(Snapshot {
            iteration,
            params: coarse_hawkes::HawkesParams::from_array(p),
            sigma2,
            locations,
            log_likelihood,
        });
    }
    Ok(out)
}
