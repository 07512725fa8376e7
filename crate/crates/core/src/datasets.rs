//! Gridded field data and the on-disk formats.
//!
//! Grid files (`.grd`) carry an ASCII header followed by a binary payload:
//!
//! ```text
//! SNAPEGRID 1
//! axes 2
//! axis x 256 uniform -8 7.9375
//! axis t 3 explicit 0 0.5 2
//! fields 1 u
//! data f64le rowmajor
//! <payload>
//! ```
//!
//! The payload holds every field in turn as little-endian `f64`, each
//! flattened with the first axis varying slowest.
//!
//! Estimation results are JSON documents; see [`ResultDocument`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::{uniform_coords, Axis, Grid};

const MAGIC: &str = "SNAPEGRID";
const GRID_VERSION: u32 = 1;
pub const RESULT_VERSION: u32 = 1;

/// Failures while reading or writing the file formats.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("not a grid file: expected `{MAGIC} {GRID_VERSION}`, found `{0}`")]
    Magic(String),

    #[error("unsupported grid format version {0}")]
    Version(String),

    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },

    #[error("header line {line}: header declares {declared} axes but this line is `{found}`")]
    AxisCount { line: usize, declared: usize, found: String },

    #[error("axis `{0}` coordinates are not finite and strictly increasing")]
    NonMonotone(String),

    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("payload has {0} unexpected trailing bytes")]
    Trailing(usize),

    #[error("field `{name}` has {found} values, grid has {expected} points")]
    SizeMismatch { name: String, expected: usize, found: usize },

    #[error("field `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("result document is missing required key `{0}`")]
    MissingKey(String),

    #[error("unsupported result format version {0}")]
    ResultVersion(u64),

    #[error("malformed result document: {0}")]
    Json(String),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Named fields sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub grid: Grid,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl FieldData {
    pub fn new(grid: Grid, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != values.len() || names.is_empty() {
            return Err(Error::argument(format!("{} field names for {} value arrays", names.len(), values.len())));
        }
        let n = grid.point_count();
        for (name, v) in names.iter().zip(&values) {
            if v.len() != n {
                return Err(FormatError::SizeMismatch { name: name.clone(), expected: n, found: v.len() }.into());
            }
        }
        for (i, name) in names.iter().enumerate() {
            if !valid_name(name) {
                return Err(Error::argument(format!("invalid field name `{name}`")));
            }
            if names[..i].contains(name) {
                return Err(Error::argument(format!("duplicate field `{name}`")));
            }
        }
        Ok(Self { grid, names, values })
    }

    pub fn single(grid: Grid, name: &str, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![name.to_string()], vec![values])
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }

    /// All fields as a name → values map.
    pub fn to_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Restriction to a strided subgrid.
    pub fn subsample(&self, steps: &[usize]) -> Result<FieldData> {
        let (grid, map) = self.grid.subsample(steps)?;
        let values = self.values.iter().map(|v| map.iter().map(|&i| v[i]).collect()).collect();
        Ok(FieldData { grid, names: self.names.clone(), values })
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.starts_with(|c: char| c.is_ascii_digit())
}

/// Encodes `data` in the grid format.
pub fn encode_grid(data: &FieldData) -> Result<Vec<u8>> {
    for (name, v) in data.names.iter().zip(&data.values) {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FormatError::NonFinite(name.clone()).into());
        }
    }
    let axes = data.grid.axes();
    let mut head = format!("{MAGIC} {GRID_VERSION}\naxes {}\n", axes.len());
    for ax in axes {
        let (a, b) = (ax.lower(), ax.upper());
        if ax.coords == uniform_coords(a, b, ax.len()) {
            head.push_str(&format!("axis {} {} uniform {a:?} {b:?}\n", ax.name, ax.len()));
        } else {
            head.push_str(&format!("axis {} {} explicit", ax.name, ax.len()));
            for c in &ax.coords {
                head.push_str(&format!(" {c:?}"));
            }
            head.push('\n');
        }
    }
    head.push_str(&format!("fields {} {}\n", data.names.len(), data.names.join(" ")));
    head.push_str("data f64le rowmajor\n");
    let mut out = head.into_bytes();
    out.reserve(8 * data.names.len() * data.grid.point_count());
    for v in &data.values {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_grid(data: &FieldData, path: &Path) -> Result<()> {
    let bytes = encode_grid(data)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<FieldData> {
    decode_grid(&fs::read(path)?)
}

struct HeaderLines<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> HeaderLines<'a> {
    fn next_line(&mut self) -> std::result::Result<(usize, &'a str), FormatError> {
        self.line += 1;
        let rest = &self.bytes[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(FormatError::Header { line: self.line, message: "unexpected end of header".into() });
        };
        self.pos += end + 1;
        let text = std::str::from_utf8(&rest[..end])
            .map_err(|_| FormatError::Header { line: self.line, message: "header is not valid text".into() })?;
        Ok((self.line, text.trim_end_matches('\r')))
    }
}

fn header_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Header { line, message: message.into() }
}

fn parse_f64(line: usize, s: &str) -> std::result::Result<f64, FormatError> {
    s.parse::<f64>().map_err(|_| header_err(line, format!("malformed number `{s}`")))
}

fn parse_count(line: usize, s: &str) -> std::result::Result<usize, FormatError> {
    s.parse::<usize>().map_err(|_| header_err(line, format!("malformed count `{s}`")))
}

/// Decodes a grid file held in memory.
pub fn decode_grid(bytes: &[u8]) -> Result<FieldData> {
    Ok(decode_grid_inner(bytes)?)
}

fn decode_grid_inner(bytes: &[u8]) -> std::result::Result<FieldData, FormatError> {
    let mut h = HeaderLines { bytes, pos: 0, line: 0 };
    let first = h.next_line().map_err(|_| {
        let shown: String = String::from_utf8_lossy(&bytes[..bytes.len().min(16)]).into_owned();
        FormatError::Magic(shown)
    })?;
    let mut magic = first.1.split_whitespace();
    if magic.next() != Some(MAGIC) {
        return Err(FormatError::Magic(first.1.chars().take(32).collect()));
    }
    match magic.next() {
        Some(v) if v == GRID_VERSION.to_string() && magic.next().is_none() => {}
        other => return Err(FormatError::Version(other.unwrap_or("").to_string())),
    }

    let (ln, text) = h.next_line()?;
    let words: Vec<&str> = text.split_whitespace().collect();
    let naxes = match words.as_slice() {
        ["axes", d] => parse_count(ln, d)?,
        _ => return Err(header_err(ln, "expected `axes <count>`")),
    };
    if naxes == 0 {
        return Err(header_err(ln, "grid needs at least one axis"));
    }
    let mut axes = Vec::with_capacity(naxes);
    for _ in 0..naxes {
        let (ln, text) = h.next_line()?;
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.first() != Some(&"axis") {
            return Err(FormatError::AxisCount { line: ln, declared: naxes, found: text.to_string() });
        }
        if words.len() < 4 {
            return Err(header_err(ln, "expected `axis <name> <count> uniform|explicit ...`"));
        }
        let name = words[1];
        if !valid_name(name) {
            return Err(header_err(ln, format!("invalid axis name `{name}`")));
        }
        let count = parse_count(ln, words[2])?;
        if count < 2 {
            return Err(header_err(ln, "an axis needs at least two coordinates"));
        }
        let coords = match words[3] {
            "uniform" => {
                if words.len() != 6 {
                    return Err(header_err(ln, "uniform axis takes exactly two bounds"));
                }
                let (a, b) = (parse_f64(ln, words[4])?, parse_f64(ln, words[5])?);
                uniform_coords(a, b, count)
            }
            "explicit" => {
                if words.len() != 4 + count {
                    return Err(header_err(ln, format!("explicit axis lists {} values, count is {count}", words.len() - 4)));
                }
                words[4..].iter().map(|w| parse_f64(ln, w)).collect::<std::result::Result<_, _>>()?
            }
            other => return Err(header_err(ln, format!("unknown axis spacing `{other}`"))),
        };
        if coords.iter().any(|c: &f64| !c.is_finite()) || coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FormatError::NonMonotone(name.to_string()));
        }
        axes.push(Axis::new(name, coords));
    }

    let (ln, text) = h.next_line()?;
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.first() == Some(&"axis") {
        return Err(FormatError::AxisCount { line: ln, declared: naxes, found: text.to_string() });
    }
    if words.len() < 2 || words[0] != "fields" {
        return Err(header_err(ln, "expected `fields <count> <names...>`"));
    }
    let nfields = parse_count(ln, words[1])?;
    if nfields == 0 || words.len() != 2 + nfields {
        return Err(header_err(ln, format!("field count {nfields} does not match the {} names given", words.len() - 2)));
    }
    let names: Vec<String> = words[2..].iter().map(|s| s.to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        if !valid_name(n) || names[..i].contains(n) {
            return Err(header_err(ln, format!("invalid or duplicate field name `{n}`")));
        }
    }

    let (ln, text) = h.next_line()?;
    if text.split_whitespace().collect::<Vec<_>>() != ["data", "f64le", "rowmajor"] {
        return Err(header_err(ln, "expected `data f64le rowmajor`"));
    }

    let grid = Grid::new(axes).map_err(|e| header_err(ln, e.to_string()))?;
    let n = grid.point_count();
    let payload = &bytes[h.pos..];
    let expected = n.checked_mul(nfields).and_then(|v| v.checked_mul(8)).ok_or_else(|| header_err(ln, "grid too large"))?;
    if payload.len() < expected {
        return Err(FormatError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(FormatError::Trailing(payload.len() - expected));
    }
    let mut values = Vec::with_capacity(nfields);
    for f in 0..nfields {
        let chunk = &payload[f * 8 * n..(f + 1) * 8 * n];
        values.push(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect());
    }
    Ok(FieldData { grid, names, values })
}

/// Reads `columns: axis values then field values` CSV with a header row,
/// for one- or two-axis grids. Every grid point must appear exactly once.
pub fn read_csv(text: &str, naxes: usize) -> Result<FieldData> {
    Ok(read_csv_inner(text, naxes)?)
}

fn read_csv_inner(text: &str, naxes: usize) -> std::result::Result<FieldData, FormatError> {
    let csv_err = |line: usize, message: String| FormatError::Csv { line, message };
    if !(1..=2).contains(&naxes) {
        return Err(csv_err(0, format!("csv import supports 1 or 2 axes, not {naxes}")));
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(csv_err(1, "empty file".into()));
    };
    let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if cols.len() <= naxes {
        return Err(csv_err(1, "header needs axis columns followed by at least one field".into()));
    }
    for (i, c) in cols.iter().enumerate() {
        if !valid_name(c) || cols[..i].contains(c) {
            return Err(csv_err(1, format!("invalid or duplicate column name `{c}`")));
        }
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, l) in lines {
        let vals = l
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_err(i + 1, format!("malformed number: {e}")))?;
        if vals.len() != cols.len() {
            return Err(csv_err(i + 1, format!("expected {} columns, found {}", cols.len(), vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(csv_err(i + 1, "non-finite value".into()));
        }
        rows.push((i + 1, vals));
    }
    let mut coords: Vec<Vec<f64>> = Vec::new();
    for a in 0..naxes {
        let mut c: Vec<f64> = rows.iter().map(|(_, r)| r[a]).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        if c.len() < 2 {
            return Err(csv_err(0, format!("axis `{}` needs at least two distinct values", cols[a])));
        }
        coords.push(c);
    }
    let shape: Vec<usize> = coords.iter().map(Vec::len).collect();
    let n: usize = shape.iter().product();
    let nf = cols.len() - naxes;
    let mut values = vec![vec![f64::NAN; n]; nf];
    let mut seen = vec![false; n];
    for (line, r) in &rows {
        let mut flat = 0;
        for a in 0..naxes {
            let idx = coords[a].binary_search_by(|v| v.total_cmp(&r[a])).expect("coordinate collected above");
            flat = flat * shape[a] + idx;
        }
        if seen[flat] {
            return Err(csv_err(*line, "duplicate grid point".into()));
        }
        seen[flat] = true;
        for f in 0..nf {
            values[f][flat] = r[naxes + f];
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(csv_err(0, format!("grid point {missing} has no row; data must cover a full rectangular grid")));
    }
    let axes = cols[..naxes].iter().zip(coords).map(|(name, c)| Axis::new(name.clone(), c)).collect();
    let grid = Grid::new(axes).map_err(|e| csv_err(0, e.to_string()))?;
    Ok(FieldData { grid, names: cols[naxes..].to_vec(), values })
}

/// Knots of one basis axis as stored in a result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAxis {
    pub name: String,
    pub order: usize,
    pub knots: Vec<f64>,
}

/// Estimation result document.
///
/// `theta_mean` and `cov_percent` summarise `replicates` over the converged
/// ones. A single fit is stored as one replicate with zero spread, together
/// with its spline coefficients and basis so that it can be evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format_version: u32,
    pub model_source: String,
    pub theta_names: Vec<String>,
    #[serde(with = "nullable")]
    pub theta_mean: Vec<f64>,
    #[serde(with = "nullable")]
    pub cov_percent: Vec<f64>,
    pub replicates: Vec<Vec<f64>>,
    pub converged_flags: Vec<bool>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<StoredAxis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

/// Non-finite summaries (for instance a coefficient of variation around a
/// zero mean) are written as `null`.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

const REQUIRED_KEYS: [&str; 9] = [
    "format_version",
    "model_source",
    "theta_names",
    "theta_mean",
    "cov_percent",
    "replicates",
    "converged_flags",
    "config",
    "seeds",
];

impl ResultDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result documents always serialise");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| FormatError::Json("top level is not an object".into()))?;
        for key in REQUIRED_KEYS {
            if !obj.contains_key(key) {
                return Err(FormatError::MissingKey(key.to_string()).into());
            }
        }
        let version = obj["format_version"].as_u64().ok_or_else(|| FormatError::Json("format_version is not an integer".into()))?;
        if version != RESULT_VERSION as u64 {
            return Err(FormatError::ResultVersion(version).into());
        }
        let doc: ResultDocument = serde_json::from_value(value).map_err(|e| FormatError::Json(e.to_string()))?;
        Ok(doc)
    }
}

pub fn write_result(doc: &ResultDocument, path: &Path) -> Result<()> {
    fs::write(path, doc.to_json())?;
    Ok(())
}

pub fn read_result(path: &Path) -> Result<ResultDocument> {
    ResultDocument::from_json(&fs::read_to_string(path)?)
}
