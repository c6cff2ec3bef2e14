use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::activations::LogitVector;
use crate::conformal::LabeledLogitDataset;
use crate::error::Error;

use super::experiment::ExperimentReport;
use super::{HarnessError, HarnessResult};

/// Reads a `label,z0,...` CSV file.
pub fn load_dataset(path: impl AsRef<Path>) -> HarnessResult<LabeledLogitDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
    parse_dataset(file)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> HarnessError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::io("<input>", source),
        kind => HarnessError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_real(field: &str, line: u64, column: usize) -> HarnessResult<f64> {
    let v: f64 = field.parse().map_err(|_| HarnessError::Parse {
        line,
        message: format!("column {column}: {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(HarnessError::Parse {
            line,
            message: format!("column {column}: non-finite value {field:?}"),
        });
    }
    Ok(v)
}

/// Parses labeled logits. The header fixes `K`; every row must carry a
/// label and exactly `K` logits. Row order is preserved.
pub fn parse_dataset<R: Read>(input: R) -> HarnessResult<LabeledLogitDataset> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.get(0) != Some("label") {
        return Err(HarnessError::Parse {
            line: 1,
            message: "header must start with `label`".into(),
        });
    }
    let width = header.len();
    let classes = width - 1;
    if classes < 2 {
        return Err(HarnessError::Parse {
            line: 1,
            message: format!("need at least 2 logit columns, found {classes}"),
        });
    }

    let mut instances = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(HarnessError::InconsistentWidth {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let label: usize = record[0].parse().map_err(|_| HarnessError::Parse {
            line,
            message: format!("label {:?} is not a non-negative integer", &record[0]),
        })?;
        if label >= classes {
            return Err(HarnessError::LabelOutOfRange {
                line,
                label,
                classes,
            });
        }
        let values = (1..width)
            .map(|c| parse_real(&record[c], line, c))
            .collect::<HarnessResult<Vec<_>>>()?;
        let z = LogitVector::new(values).map_err(|e| HarnessError::Parse {
            line,
            message: e.to_string(),
        })?;
        instances.push((z, label));
    }
    LabeledLogitDataset::new(instances).map_err(|e| match e {
        Error::EmptyCalibration => HarnessError::core("input has no data rows", e),
        other => HarnessError::core("input", other),
    })
}

/// Parses bare logit rows. A header is required; a leading `label` column is
/// skipped.
pub fn parse_logits<R: Read>(input: R) -> HarnessResult<Vec<LogitVector>> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let skip = usize::from(header.get(0) == Some("label"));
    let width = header.len();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(HarnessError::InconsistentWidth {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let values = (skip..width)
            .map(|c| parse_real(&record[c], line, c))
            .collect::<HarnessResult<Vec<_>>>()?;
        out.push(LogitVector::new(values).map_err(|e| HarnessError::Parse {
            line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes a dataset in the input CSV format.
pub fn write_dataset<W: Write>(data: &LabeledLogitDataset, out: W) -> HarnessResult<()> {
    let mut w = BufWriter::new(out);
    let io = |e| HarnessError::io("<output>", e);
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..data.num_classes()).map(|k| format!("z{k}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (z, y) in data.instances() {
        write!(w, "{y}").map_err(io)?;
        for v in z.values() {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One long-format plot data row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub method: String,
    pub alpha: f64,
    pub split: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Per-split rows for coverage, set size and singleton metrics, sorted by
/// `(method, alpha, split, metric)`. Absent values are left out.
pub fn plot_data_rows(report: &ExperimentReport) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for cell in &report.cells {
        let m = &cell.metrics;
        let metrics = [
            ("avg_set_size", Some(m.avg_set_size)),
            ("coverage", Some(m.coverage)),
            ("singleton_coverage", m.singleton_coverage),
            ("singleton_ratio", Some(m.singleton_ratio)),
        ];
        for (metric, value) in metrics {
            if let Some(value) = value {
                rows.push(PlotRow {
                    method: cell.method.clone(),
                    alpha: cell.alpha,
                    split: cell.split,
                    metric,
                    value,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.split.cmp(&b.split))
            .then(a.metric.cmp(b.metric))
    });
    rows
}

/// Writes `method,alpha,split,metric,value` with 6-decimal values.
pub fn emit_plot_data(report: &ExperimentReport, path: impl AsRef<Path>) -> HarnessResult<()> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::create(path).map_err(|e| HarnessError::io(shown.clone(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::io(shown.clone(), source),
        kind => HarnessError::Parse {
            line: 0,
            message: format!("{kind:?}"),
        },
    };
    w.write_record(["method", "alpha", "split", "metric", "value"])
        .map_err(wrap)?;
    for row in plot_data_rows(report) {
        w.write_record([
            row.method.as_str(),
            &row.alpha.to_string(),
            &row.split.to_string(),
            row.metric,
            &format!("{:.6}", row.value),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| HarnessError::io(shown.clone(), e))
}
