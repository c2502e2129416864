//! Dataset files and experiment reports.
//!
//! Datasets are JSON documents
//! `{"format_version": "1", "dim": d, "count": n, "labels": [...], "matrices": [[...], ...]}`
//! with row-major `d²` entries per matrix. Numbers are written in the shortest
//! representation that parses back to the same double. Every write goes to a
//! temporary file in the destination directory which is then renamed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::sliced::EmpiricalSpdMeasure;

pub const FORMAT_VERSION: &str = "1";

/// Asymmetry tolerated in input matrices, relative to the largest entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// On-disk dataset document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdDatasetFile {
    pub format_version: String,
    pub dim: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    pub matrices: Vec<Vec<f64>>,
}

/// A validated dataset.
#[derive(Debug, Clone)]
pub struct SpdDataset {
    pub measure: EmpiricalSpdMeasure,
    pub labels: Option<Vec<usize>>,
}

impl SpdDatasetFile {
    pub fn from_points(points: &[SpdMatrix], labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyMeasure)?.dim();
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::SizeMismatch(l.len(), points.len()));
            }
        }
        Ok(Self {
            format_version: FORMAT_VERSION.to_string(),
            dim,
            count: points.len(),
            labels,
            matrices: points.iter().map(SpdMatrix::to_row_major).collect(),
        })
    }

    /// Checks the schema and builds the measure.
    pub fn validate(self) -> Result<SpdDataset> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported format_version {:?}",
                self.format_version
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidData("dim must be positive".into()));
        }
        if self.count != self.matrices.len() {
            return Err(Error::InvalidData(format!(
                "count is {} but {} matrices are present",
                self.count,
                self.matrices.len()
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.count {
                return Err(Error::InvalidData(format!(
                    "{} labels for {} matrices",
                    l.len(),
                    self.count
                )));
            }
        }
        let d = self.dim;
        let mut points = Vec::with_capacity(self.count);
        for (k, entries) in self.matrices.iter().enumerate() {
            if entries.len() != d * d {
                return Err(Error::InvalidData(format!(
                    "matrix {k} has {} entries, expected {}",
                    entries.len(),
                    d * d
                )));
            }
            let scale = entries.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..d {
                for j in (i + 1)..d {
                    if (entries[i * d + j] - entries[j * d + i]).abs() > SYMMETRY_TOLERANCE * scale {
                        return Err(Error::InvalidData(format!("matrix {k} is not symmetric")));
                    }
                }
            }
            let m = SpdMatrix::from_row_major(d, entries)
                .map_err(|e| Error::InvalidData(format!("matrix {k}: {e}")))?;
            points.push(m);
        }
        Ok(SpdDataset {
            measure: EmpiricalSpdMeasure::new(points)?,
            labels: self.labels,
        })
    }
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<SpdDataset> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let doc: SpdDatasetFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    doc.validate()
}

/// Writes `points` (and optional labels) atomically.
pub fn save_dataset(path: &Path, points: &[SpdMatrix], labels: Option<&[usize]>) -> Result<()> {
    let doc = SpdDatasetFile::from_points(points, labels.map(<[usize]>::to_vec))?;
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &doc)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Writes through a temporary sibling file renamed over `path` on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<&mut File>) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Machine-readable result of one experiment, in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: Value,
    pub rows: Vec<Map<String, Value>>,
    pub timing: Map<String, Value>,
    pub version: String,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: Value) -> Self {
        Self {
            experiment: experiment.to_string(),
            config,
            rows: Vec::new(),
            timing: Map::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn push_row(&mut self, row: Value) {
        match row {
            Value::Object(map) => self.rows.push(map),
            other => {
                let mut map = Map::new();
                map.insert("value".into(), other);
                self.rows.push(map);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV of the rows; the header is the union of row keys in first-seen order.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<&str> = Vec::new();
        for row in &self.rows {
            for k in row.keys() {
                if !header.contains(&k.as_str()) {
                    header.push(k);
                }
            }
        }
        let mut out = String::new();
        out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = header
                .iter()
                .map(|h| match row.get(*h) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => csv_field(s),
                    Some(v) => csv_field(&v.to_string()),
                })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<()> {
        let text = match format {
            ReportFormat::Json => self.to_json()? + "\n",
            ReportFormat::Csv => self.to_csv(),
        };
        write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Drops wall times so reruns produce identical bytes.
    pub fn without_timing(mut self) -> Self {
        self.timing.clear();
        self
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Output encoding of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}
