//! Station measurements, gridded simulator fields, interpolation of the
//! grid to stations and threshold pairing into per-event datasets.
//!
//! Grid files are line-oriented text:
//!
//! ```text
//! FIELDGRID v1
//! event <id>
//! dims <n1> <n2>
//! origin <o1> <o2>
//! spacing <d1> <d2>
//! <n1 * n2 whitespace-separated values, row-major, NA for missing>
//! ```
//!
//! Leading lines starting with `#` are comments. Cell `(i, j)` is centred at
//! `(o1 + i d1, o2 + j d2)`; row `i` holds the `n2` cells along `s2`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub String);

impl EventId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EventId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub event: EventId,
    pub station: String,
    pub s1: f64,
    pub s2: f64,
    /// Measured gust speed.
    pub gust: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationSet {
    pub records: Vec<StationRecord>,
}

impl StationSet {
    /// Builds a set, rejecting repeated `(event, station)` keys.
    pub fn new(records: Vec<StationRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.event.clone(), r.station.clone())) {
                return Err(Error::DuplicateStation {
                    event: r.event.to_string(),
                    station: r.station.clone(),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn for_event<'a>(&'a self, event: &'a EventId) -> impl Iterator<Item = &'a StationRecord> + 'a {
        self.records.iter().filter(move |r| &r.event == event)
    }

    pub fn merge(sets: impl IntoIterator<Item = StationSet>) -> Result<Self> {
        Self::new(sets.into_iter().flat_map(|s| s.records).collect())
    }
}

/// Simulated field on a regular grid in rotated-grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub event: EventId,
    pub n1: usize,
    pub n2: usize,
    pub origin: (f64, f64),
    pub spacing: (f64, f64),
    /// Row-major values; `NaN` marks a missing cell.
    pub values: Vec<f64>,
    pub coordinate_system: String,
}

impl GridField {
    pub fn new(
        event: EventId,
        n1: usize,
        n2: usize,
        origin: (f64, f64),
        spacing: (f64, f64),
        values: Vec<f64>,
    ) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::HeaderMismatch("grid dimensions must be positive".into()));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
            return Err(Error::HeaderMismatch("grid spacing must be positive".into()));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::HeaderMismatch("grid origin must be finite".into()));
        }
        if values.len() != n1 * n2 {
            return Err(Error::HeaderMismatch(format!(
                "{} values for a {n1}x{n2} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::HeaderMismatch("grid values must be finite or NA".into()));
        }
        Ok(Self {
            event,
            n1,
            n2,
            origin,
            spacing,
            values,
            coordinate_system: "rotated-grid".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n2 + j]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.value(i, j).is_nan()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + i as f64 * self.spacing.0,
            self.origin.1 + j as f64 * self.spacing.1,
        )
    }

    /// Cell centres in row-major order.
    pub fn cell_centers(&self) -> Vec<(f64, f64)> {
        (0..self.n1)
            .flat_map(|i| (0..self.n2).map(move |j| (i, j)))
            .map(|(i, j)| self.cell_center(i, j))
            .collect()
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::new(
            self.event.clone(),
            self.n1,
            self.n2,
            self.origin,
            self.spacing,
            values,
        )?;
        g.coordinate_system = self.coordinate_system.clone();
        Ok(g)
    }
}

/// One thresholded (simulated, measured) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub station: String,
    /// Location in rotated-grid coordinates, before the model rotation.
    pub location: (f64, f64),
    /// Simulated intensity interpolated to the station.
    pub x: f64,
    /// Measured value.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    pub event: EventId,
    pub pairs: Vec<Observation>,
    pub threshold: f64,
}

impl EventDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn x(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.x).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.y).collect()
    }
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads station measurements from CSV with header
/// `event,station,s1,s2,gust`.
pub fn load_stations(path: impl AsRef<Path>) -> Result<StationSet> {
    let path = path.as_ref();
    parse_stations(&read_to_string(path)?, path)
}

pub fn parse_stations(text: &str, origin: &Path) -> Result<StationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error(origin, 1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(origin, 1, format!("missing column '{name}'")))
    };
    let (ce, cs, c1, c2, cg) = (
        column("event")?,
        column("station")?,
        column("s1")?,
        column("s2")?,
        column("gust")?,
    );

    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(origin, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| row.get(c).unwrap_or("");
        let number = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c);
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(origin, line, format!("{name} '{raw}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(origin, line, format!("{name} must be finite")));
            }
            Ok(v)
        };
        let event = field(ce).to_owned();
        let station = field(cs).to_owned();
        if event.is_empty() || station.is_empty() {
            return Err(parse_error(origin, line, "empty event or station identifier"));
        }
        let s1 = number(c1, "s1")?;
        let s2 = number(c2, "s2")?;
        let gust = number(cg, "gust")?;
        if gust < 0.0 {
            return Err(parse_error(origin, line, format!("negative gust {gust}")));
        }
        if seen.insert((event.clone(), station.clone()), line).is_some() {
            return Err(Error::DuplicateStation { event, station });
        }
        records.push(StationRecord {
            event: EventId(event),
            station,
            s1,
            s2,
            gust,
        });
    }
    Ok(StationSet { records })
}

/// Formats with 6 significant digits, `%g` style.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding can push the exponent up by one (e.g. 999999.5).
    let sci = format!("{v:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let exp = e.parse::<i32>().unwrap_or(exp);
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_owned()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    parse_grid(&read_to_string(path)?)
}

pub fn parse_grid(text: &str) -> Result<GridField> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .skip_while(|l| l.starts_with('#') || l.is_empty());

    let mut header = |key: &str, n: usize| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::HeaderMismatch(format!("missing '{key}' line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::HeaderMismatch(format!("expected '{key}', found '{line}'")));
        }
        let rest: Vec<String> = parts.map(str::to_owned).collect();
        if rest.len() != n {
            return Err(Error::HeaderMismatch(format!("'{line}' should have {n} fields")));
        }
        Ok(rest)
    };
    let magic = header("FIELDGRID", 1)?;
    if magic[0] != "v1" {
        return Err(Error::HeaderMismatch(format!("unsupported version {}", magic[0])));
    }
    let event = EventId(header("event", 1)?.remove(0));
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::HeaderMismatch(format!("bad dimension '{s}'")))
    };
    let parse_f64 = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::HeaderMismatch(format!("bad number '{s}'")))
    };
    let dims = header("dims", 2)?;
    let (n1, n2) = (parse_usize(&dims[0])?, parse_usize(&dims[1])?);
    let origin = header("origin", 2)?;
    let origin = (parse_f64(&origin[0])?, parse_f64(&origin[1])?);
    let spacing = header("spacing", 2)?;
    let spacing = (parse_f64(&spacing[0])?, parse_f64(&spacing[1])?);

    let expected = n1 * n2;
    let mut values = Vec::with_capacity(expected);
    for tok in lines.flat_map(str::split_whitespace) {
        let v = if tok == "NA" {
            f64::NAN
        } else {
            tok.parse::<f64>()
                .map_err(|_| Error::HeaderMismatch(format!("bad grid value '{tok}'")))?
        };
        values.push(v);
    }
    if values.len() < expected {
        return Err(Error::ShortFile {
            expected,
            found: values.len(),
        });
    }
    if values.len() > expected {
        return Err(Error::HeaderMismatch(format!(
            "{} values for a {n1}x{n2} grid",
            values.len()
        )));
    }
    GridField::new(event, n1, n2, origin, spacing, values)
}

/// Renders a grid, each row of cells on its own line, preceded by `comments`
/// written as `# ` lines.
pub fn format_grid(grid: &GridField, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("FIELDGRID v1\n");
    out.push_str(&format!("event {}\n", grid.event));
    out.push_str(&format!("dims {} {}\n", grid.n1, grid.n2));
    out.push_str(&format!(
        "origin {} {}\n",
        format_sig6(grid.origin.0),
        format_sig6(grid.origin.1)
    ));
    out.push_str(&format!(
        "spacing {} {}\n",
        format_sig6(grid.spacing.0),
        format_sig6(grid.spacing.1)
    ));
    for i in 0..grid.n1 {
        let row: Vec<String> = (0..grid.n2).map(|j| format_sig6(grid.value(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_grid(grid: &GridField, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    write_atomic(path, &format_grid(grid, comments))
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Bilinear interpolation between cell centres. The grid hull is closed.
pub fn interpolate_field(grid: &GridField, s1: f64, s2: f64) -> Result<f64> {
    const EDGE_TOL: f64 = 1e-9;
    let locate = |s: f64, o: f64, d: f64, n: usize| -> Option<(usize, f64)> {
        let f = (s - o) / d;
        let top = (n - 1) as f64;
        if !(f >= -EDGE_TOL && f <= top + EDGE_TOL) {
            return None;
        }
        let f = f.clamp(0.0, top);
        if n == 1 {
            return Some((0, 0.0));
        }
        let i = (f.floor() as usize).min(n - 2);
        Some((i, f - i as f64))
    };
    let out = || Error::OutOfDomain { s1, s2 };
    let (i, t) = locate(s1, grid.origin.0, grid.spacing.0, grid.n1).ok_or_else(out)?;
    let (j, u) = locate(s2, grid.origin.1, grid.spacing.1, grid.n2).ok_or_else(out)?;

    let corners = [
        (i, j, (1.0 - t) * (1.0 - u)),
        (i, j + 1, (1.0 - t) * u),
        (i + 1, j, t * (1.0 - u)),
        (i + 1, j + 1, t * u),
    ];
    let mut value = 0.0;
    for (ci, cj, w) in corners {
        if w == 0.0 {
            continue;
        }
        let v = grid.value(ci, cj);
        if v.is_nan() {
            return Err(Error::MissingNeighbor { s1, s2 });
        }
        value += w * v;
    }
    Ok(value)
}

/// Pairs each station of the grid's event with the interpolated simulated
/// value and keeps pairs whose simulated value strictly exceeds `u`.
pub fn pair_and_threshold(stations: &StationSet, grid: &GridField, u: f64) -> Result<EventDataset> {
    pair_and_threshold_with(stations, grid, u, |s1, s2| (s1, s2))
}

/// As [`pair_and_threshold`], mapping station coordinates through
/// `transform` into the grid's coordinate system first.
pub fn pair_and_threshold_with(
    stations: &StationSet,
    grid: &GridField,
    u: f64,
    transform: impl Fn(f64, f64) -> (f64, f64),
) -> Result<EventDataset> {
    let mut pairs = Vec::new();
    let (mut outside, mut missing) = (0usize, 0usize);
    for r in stations.for_event(&grid.event) {
        let (s1, s2) = transform(r.s1, r.s2);
        match interpolate_field(grid, s1, s2) {
            Ok(x) if x > u => pairs.push(Observation {
                station: r.station.clone(),
                location: (s1, s2),
                x,
                y: r.gust,
            }),
            Ok(_) => {}
            Err(Error::OutOfDomain { .. }) => outside += 1,
            Err(Error::MissingNeighbor { .. }) => missing += 1,
            Err(e) => return Err(e),
        }
    }
    if outside > 0 || missing > 0 {
        log::info!(
            "event {}: dropped {outside} stations outside the grid and {missing} next to missing cells",
            grid.event
        );
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(grid.event.to_string()));
    }
    pairs.sort_by(|a, b| a.station.cmp(&b.station));
    Ok(EventDataset {
        event: grid.event.clone(),
        pairs,
        threshold: u,
    })
}

/// Root mean squared difference.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "rmse of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}
