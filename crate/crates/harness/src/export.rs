//! Persistence: bit-stable CSV, JSON, and plot tables. Every file is written
//! to a temporary sibling and renamed into place, so readers never see a
//! partial row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::aggregate::Summary;
use crate::experiment::{CoverageRecord, ExperimentOutput, ExperimentRecord, GridGeometry, Timing};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("cannot encode row: {0}")]
    Encode(String),
    #[error("no records to export")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn cell(v: &Value) -> Result<String, ExportError> {
    Ok(match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) if n.is_f64() => format!("{:.16e}", n.as_f64().expect("f64")),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        other => return Err(ExportError::Encode(format!("nested value {other}"))),
    })
}

/// CSV bytes for a homogeneous row set. Floats are printed with 17
/// significant digits, so parsing recovers them exactly.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ExportError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Option<Vec<String>> = None;
    for row in rows {
        let Value::Object(map) =
            serde_json::to_value(row).map_err(|e| ExportError::Encode(e.to_string()))?
        else {
            return Err(ExportError::Encode("rows must be structs".into()));
        };
        if header.is_none() {
            let keys: Vec<String> = map.keys().cloned().collect();
            w.write_record(&keys)
                .map_err(|e| ExportError::Encode(e.to_string()))?;
            header = Some(keys);
        }
        let fields = map.values().map(cell).collect::<Result<Vec<_>, _>>()?;
        w.write_record(&fields)
            .map_err(|e| ExportError::Encode(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| ExportError::Encode(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExportError> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExportError> {
    let text = fs::read(path).map_err(io_err(path))?;
    csv::Reader::from_reader(text.as_slice())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| ExportError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExportError> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Rows in either format.
pub fn write_rows<T: Serialize>(
    path_stem: &Path,
    rows: &[T],
    format: Format,
) -> Result<PathBuf, ExportError> {
    let path = path_stem.with_extension(format.extension());
    match format {
        Format::Csv => write_csv(&path, rows)?,
        Format::Json => write_json(&path, rows)?,
    }
    Ok(path)
}

pub fn read_rows<T: DeserializeOwned>(path_stem: &Path) -> Result<Option<Vec<T>>, ExportError> {
    for format in [Format::Csv, Format::Json] {
        let path = path_stem.with_extension(format.extension());
        if path.exists() {
            return Ok(Some(match format {
                Format::Csv => read_csv(&path)?,
                Format::Json => read_json(&path)?,
            }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorVsN {
    pub grid_index: usize,
    pub n: usize,
    pub p: usize,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CoverageVsN {
    pub grid_index: usize,
    pub n: usize,
    pub category: String,
    pub coverage: f64,
    pub mean_width: f64,
    pub contrasts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct WidthVsDimension {
    pub grid_index: usize,
    pub p: usize,
    pub complexity: usize,
    pub cone_width: f64,
    pub cone_width_stderr: f64,
    pub image_width: Option<f64>,
    pub gamma: f64,
}

pub fn error_vs_n(summary: &Summary) -> Vec<ErrorVsN> {
    let mut rows = Vec::new();
    for g in &summary.grid {
        let mut push = |statistic: &str, value: f64| {
            rows.push(ErrorVsN {
                grid_index: g.grid_index,
                n: g.n,
                p: g.p,
                statistic: statistic.to_string(),
                value,
            })
        };
        push("median_l2_error", g.median_l2_error);
        push("median_atomic_error", g.median_atomic_error);
        push("median_prediction_error", g.median_prediction_error);
        if let Some(geo) = summary
            .geometry
            .iter()
            .find(|x| x.grid_index == g.grid_index)
        {
            push("upper_bound_l2", geo.upper_l2);
        }
    }
    rows
}

pub fn coverage_vs_n(summary: &Summary) -> Vec<CoverageVsN> {
    summary
        .grid
        .iter()
        .flat_map(|g| {
            g.coverage.iter().map(move |c| CoverageVsN {
                grid_index: g.grid_index,
                n: g.n,
                category: c.category.name().to_string(),
                coverage: c.rate,
                mean_width: c.mean_width,
                contrasts: c.total,
            })
        })
        .collect()
}

pub fn width_vs_dimension(geometry: &[GridGeometry]) -> Vec<WidthVsDimension> {
    geometry
        .iter()
        .map(|g| WidthVsDimension {
            grid_index: g.grid_index,
            p: g.p,
            complexity: g.complexity,
            cone_width: g.cone_width,
            cone_width_stderr: g.cone_width_stderr,
            image_width: g.image_width,
            gamma: g.gamma,
        })
        .collect()
}

/// Writes the plot tables that have content into `dir/plots`.
pub fn export_plot_data(dir: &Path, summary: &Summary) -> Result<Vec<PathBuf>, ExportError> {
    let plots = dir.join("plots");
    let mut written = Vec::new();
    let errors = error_vs_n(summary);
    if !errors.is_empty() {
        written.push(write_rows(&plots.join("error_vs_n"), &errors, Format::Csv)?);
    }
    let coverage = coverage_vs_n(summary);
    if !coverage.is_empty() {
        written.push(write_rows(
            &plots.join("coverage_vs_n"),
            &coverage,
            Format::Csv,
        )?);
    }
    let widths = width_vs_dimension(&summary.geometry);
    if !widths.is_empty() {
        written.push(write_rows(
            &plots.join("width_vs_dimension"),
            &widths,
            Format::Csv,
        )?);
    }
    Ok(written)
}

/// Writes records, coverage rows, geometry, timings, the summary and
/// (optionally) plot tables under `dir`. Nothing is written for an empty
/// record set.
pub fn export_results(
    dir: &Path,
    output: &ExperimentOutput,
    summary: &Summary,
    format: Format,
    plotdata: bool,
) -> Result<Vec<PathBuf>, ExportError> {
    if output.records.is_empty() {
        return Err(ExportError::Empty);
    }
    let mut written = vec![write_rows(&dir.join("records"), &output.records, format)?];
    if !output.coverage.is_empty() {
        written.push(write_rows(&dir.join("coverage"), &output.coverage, format)?);
    }
    if !output.geometry.is_empty() {
        written.push(write_rows(&dir.join("geometry"), &output.geometry, format)?);
    }
    written.push(write_rows(&dir.join("timings"), &output.timings, format)?);
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, summary)?;
    written.push(summary_path);
    if plotdata {
        written.extend(export_plot_data(dir, summary)?);
    }
    Ok(written)
}

/// Reads back what [`export_results`] wrote.
pub fn load_results(dir: &Path) -> Result<ExperimentOutput, ExportError> {
    let records: Vec<ExperimentRecord> =
        read_rows(&dir.join("records"))?.ok_or_else(|| ExportError::Io {
            path: dir.join("records.csv"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no records file"),
        })?;
    let coverage: Vec<CoverageRecord> = read_rows(&dir.join("coverage"))?.unwrap_or_default();
    let geometry: Vec<GridGeometry> = read_rows(&dir.join("geometry"))?.unwrap_or_default();
    let timings: Vec<Timing> = read_rows(&dir.join("timings"))?.unwrap_or_default();
    Ok(ExperimentOutput {
        records,
        coverage,
        timings,
        geometry,
    })
}
