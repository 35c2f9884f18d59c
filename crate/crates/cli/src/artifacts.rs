// SPDX-License-Identifier: Apache-2.0

//! Artifact formats and the run index.
//!
//! * CSV: comma separated, `#`-prefixed `key: value` metadata, one header row.
//! * Reports: flat `key = value` lines.
//! * Arrays: raw little-endian f64 with a TOML sidecar (`.hdr`) giving shape, layout and
//!   the hash of the grid the samples live on.
//!
//! Every write goes through a temporary file in the target directory and a rename.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use medscat::{Field, Grid, MediumField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "not-applicable",
        }
    }
}

/// One thresholded quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// `None` when the value is not finite.
    pub value: Option<f64>,
    /// Human-readable bound, e.g. `< 1e-8`.
    pub bound: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub experiment: String,
    pub kind: String,
    /// Curve family for plotting (`spectrum`, `cauchy`, `comparison`, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub kind: String,
    pub verdict: Verdict,
    pub wall_time_s: f64,
    pub grid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub checks: Vec<Check>,
}

/// Manifest of a run. The index file itself is the one file in the output directory
/// that it does not list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub scenario: String,
    pub seed: u64,
    pub generator: String,
    pub experiments: Vec<ExperimentRecord>,
    pub files: Vec<ArtifactEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ArtifactIndex {
    pub fn all_pass(&self) -> bool {
        self.experiments.iter().all(|e| e.verdict != Verdict::Fail && e.error.is_none())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        let path = dir.join(INDEX_FILE);
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::io(&path, e))
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Collects artifacts written under one output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    files: Mutex<Vec<ArtifactEntry>>,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root, files: Mutex::new(Vec::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn put(&self, entry: ArtifactEntry, bytes: &[u8]) -> CliResult<()> {
        if entry.path == INDEX_FILE {
            return Err(CliError::Config(format!("`{INDEX_FILE}` is reserved for the run index")));
        }
        let path = self.root.join(&entry.path);
        write_atomic(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let mut files = self.files.lock().expect("artifact list lock");
        files.retain(|f| f.path != entry.path);
        files.push(entry);
        Ok(())
    }

    /// Entries sorted by path.
    pub fn into_entries(self) -> Vec<ArtifactEntry> {
        let mut files = self.files.into_inner().expect("artifact list lock");
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files
    }
}

/// Shortest round-trip representation; `nan`/`inf` for non-finite values.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Csv {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { meta: vec![], header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string().replace('\n', " ")));
        self
    }

    pub fn row(&mut self, values: Vec<f64>) -> &mut Self {
        debug_assert_eq!(values.len(), self.header.len());
        self.rows.push(values);
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut out = Csv::default();
        let mut have_header = false;
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    out.meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !have_header {
                out.header = line.split(',').map(|s| s.trim().to_string()).collect();
                have_header = true;
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| CliError::Config(format!("csv line {}: {e}", i + 1)))?;
            if row.len() != out.header.len() {
                return Err(CliError::Config(format!(
                    "csv line {} has {} cells, header has {}",
                    i + 1,
                    row.len(),
                    out.header.len()
                )));
            }
            out.rows.push(row);
        }
        if !have_header {
            return Err(CliError::Config("csv has no header row".into()));
        }
        Ok(out)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Flat `key = value` report.
#[derive(Debug, Clone, Default)]
pub struct KvReport {
    pub lines: Vec<(String, String)>,
}

impl KvReport {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string().replace('\n', " ")));
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt_num(value))
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Canonical description of a grid, also hashed into array headers.
pub fn grid_label(grid: &Grid) -> String {
    format!("d={} n={} L={:e} k={}", grid.dim(), grid.points_per_axis(), grid.half_length(), grid.fiber())
}

pub fn grid_hash(grid: &Grid) -> String {
    hex::encode(Sha256::digest(format!("medscat-grid {}", grid_label(grid)).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub format: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub layout: String,
    pub grid: String,
    pub grid_hash: String,
}

pub const ARRAY_FORMAT: &str = "medscat-array-1";

fn array_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Data and header text for a sampled medium, laid out as (point, row, col).
pub fn medium_array(m: &MediumField) -> (Vec<u8>, String) {
    let grid = m.grid();
    let k = grid.fiber();
    let header = ArrayHeader {
        format: ARRAY_FORMAT.into(),
        dtype: "f64-le".into(),
        shape: vec![grid.num_points(), k, k],
        layout: "point,fiber-row,fiber-col".into(),
        grid: grid_label(grid),
        grid_hash: grid_hash(grid),
    };
    (array_bytes(m.values()), toml::to_string(&header).expect("header serializes"))
}

/// Data and header text for a complex field, laid out as (point, component, re/im).
pub fn field_array(grid: &Grid, f: &Field) -> (Vec<u8>, String) {
    let values: Vec<f64> = f.values().iter().flat_map(|c| [c.re, c.im]).collect();
    let header = ArrayHeader {
        format: ARRAY_FORMAT.into(),
        dtype: "f64-le".into(),
        shape: vec![grid.num_points(), grid.fiber(), 2],
        layout: "point,fiber,re-im".into(),
        grid: grid_label(grid),
        grid_hash: grid_hash(grid),
    };
    (array_bytes(&values), toml::to_string(&header).expect("header serializes"))
}

pub fn header_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Reads an array and its sidecar header, checking the byte count against the shape.
pub fn read_array(path: &Path) -> Result<(Vec<f64>, ArrayHeader), String> {
    let hpath = header_path(path);
    let htext = fs::read_to_string(&hpath).map_err(|e| format!("header {}: {e}", hpath.display()))?;
    let header: ArrayHeader =
        toml::from_str(&htext).map_err(|e| format!("header {}: {}", hpath.display(), e.message()))?;
    if header.format != ARRAY_FORMAT || header.dtype != "f64-le" {
        return Err(format!("unsupported array format {} / {}", header.format, header.dtype));
    }
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let expected: usize = header.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(format!("{} bytes, header shape {:?} needs {expected}", bytes.len(), header.shape));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((values, header))
}
