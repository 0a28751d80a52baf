//! File formats. Every file written here starts with a `#` comment line
//! naming the format and its version; readers skip comment lines.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::PValueRecord;
use crate::error::{ClpError, Result};
use crate::evalue::{ClpOutput, Diagnostics, EValueRecord};
use crate::harness::{CurvePoint, MetricRow};
use crate::network::{MissingMask, Topology, WeightedNetwork};
use crate::thresholds::{Hypothesis, HypothesisThresholds};

pub const FORMAT_VERSION: u32 = 1;

fn header(kind: &str) -> String {
    format!("# clp {kind} v{FORMAT_VERSION}\n")
}

fn reader(src: impl Read, has_headers: bool) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(src)
}

fn parse_err(record: &csv::StringRecord, column: usize, reason: impl Into<String>) -> ClpError {
    ClpError::Parse {
        line: record.position().map_or(0, |p| p.line()),
        column,
        reason: reason.into(),
    }
}

fn is_na(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Dense matrix of optional cells; `None` marks `NA` or an empty cell.
pub fn read_matrix_from(src: impl Read) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader(src, false).records() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(&record, record.len().min(w) + 1, format!("expected {w} cells, found {}", record.len())));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                if is_na(cell) {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    Ok(_) => Err(parse_err(&record, k + 1, format!("non-finite weight {cell:?}"))),
                    Err(_) => Err(parse_err(&record, k + 1, format!("cannot parse {cell:?} as a number"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ClpError::Parse {
            line: 0,
            column: 0,
            reason: "matrix file has no data rows".into(),
        });
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    read_matrix_from(File::open(path)?)
}

/// Builds a network and its mask from optional cells. Square topologies
/// ignore the diagonal.
pub fn network_from_cells(cells: &[Vec<Option<f64>>], topology: Topology) -> Result<(WeightedNetwork, MissingMask)> {
    let n_rows = cells.len();
    let n_cols = cells[0].len();
    let diag = topology.has_diagonal();
    if !diag && n_rows != n_cols {
        return Err(ClpError::Validation(format!(
            "{topology:?} networks must be square, got {n_rows}x{n_cols}"
        )));
    }
    let weights = cells.iter().flatten().map(|c| c.unwrap_or(0.0)).collect();
    let network = WeightedNetwork::from_vec(n_rows, n_cols, weights, diag)?;
    let mask = MissingMask::from_fn(n_rows, n_cols, diag, |i, j| cells[i][j].is_none());
    Ok((network, mask))
}

pub fn read_network(path: &Path, topology: Topology) -> Result<(WeightedNetwork, MissingMask)> {
    network_from_cells(&read_matrix(path)?, topology)
}

/// Reads a 0/1 mask file (1 = missing).
pub fn read_mask(path: &Path, topology: Topology) -> Result<MissingMask> {
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader(File::open(path)?, false).records() {
        let record = record?;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(&record, record.len().min(w) + 1, format!("expected {w} cells, found {}", record.len())));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, cell)| match cell {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(parse_err(&record, k + 1, format!("mask cells must be 0 or 1, found {cell:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ClpError::Parse {
            line: 0,
            column: 0,
            reason: "mask file has no data rows".into(),
        });
    }
    let diag = topology.has_diagonal();
    Ok(MissingMask::from_fn(rows.len(), rows[0].len(), diag, |i, j| rows[i][j]))
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

/// Writes a network, `NA` at missing cells when a mask is given. The
/// diagonal of square networks is written as `NA`.
pub fn write_network(path: &Path, network: &WeightedNetwork, mask: Option<&MissingMask>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(header("matrix").as_bytes())?;
    for i in 0..network.n_rows() {
        let line: Vec<String> = (0..network.n_cols())
            .map(|j| {
                let hidden = (!network.diagonal_defined() && i == j) || mask.is_some_and(|m| m.is_missing(i, j));
                if hidden {
                    "NA".to_string()
                } else {
                    fmt_f64(network.get(i, j))
                }
            })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &MissingMask) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(header("mask").as_bytes())?;
    for i in 0..mask.n_rows() {
        let line: Vec<&str> = (0..mask.n_cols())
            .map(|j| if mask.is_missing(i, j) { "1" } else { "0" })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ThresholdRow {
    row: usize,
    col: usize,
    threshold: f64,
    #[serde(default)]
    alternative: Option<u8>,
}

/// Reads `row,col,threshold[,alternative]` with a header line.
pub fn read_thresholds(path: &Path) -> Result<HypothesisThresholds> {
    let mut rdr = reader(File::open(path)?, true);
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let r: ThresholdRow = record
            .deserialize(None)
            .map_err(|e| parse_err(&record, 0, e.to_string()))?;
        entries.push(Hypothesis {
            row: r.row,
            col: r.col,
            threshold: r.threshold,
            alternative: r.alternative.map(|a| a != 0),
        });
    }
    HypothesisThresholds::from_hypotheses(entries)
}

pub fn write_thresholds(path: &Path, thresholds: &HypothesisThresholds) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(header("thresholds").as_bytes())?;
    // header written by hand so an empty set still yields a readable file
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["row", "col", "threshold", "alternative"])?;
    for h in thresholds.entries() {
        w.serialize(ThresholdRow {
            row: h.row,
            col: h.col,
            threshold: h.threshold,
            alternative: h.alternative.map(u8::from),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Serialises any record type as a headed CSV after the version line.
pub fn write_records<T: Serialize>(path: &Path, kind: &str, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(header(kind).as_bytes())?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = reader(File::open(path)?, true);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        out.push(
            record
                .deserialize(Some(&headers))
                .map_err(|e| parse_err(&record, 0, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_evalues(path: &Path, evalues: &[EValueRecord]) -> Result<()> {
    write_records(path, "evalues", evalues)
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_records(path, "metrics", rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_records(path)
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_records(path, "curves", points)
}

#[derive(Debug, Serialize)]
struct PValueRow {
    i0: usize,
    j0: usize,
    k0: usize,
    p_num: u32,
    p_den: u32,
    p: f64,
    c: f64,
    calib_size: usize,
}

pub fn write_pvalues(path: &Path, records: &[PValueRecord]) -> Result<()> {
    let rows: Vec<PValueRow> = records
        .iter()
        .map(|r| PValueRow {
            i0: r.row,
            j0: r.col,
            k0: r.block,
            p_num: r.p.num,
            p_den: r.p.den,
            p: r.p.value(),
            c: r.threshold,
            calib_size: r.calib_size,
        })
        .collect();
    write_records(path, "pvalues", &rows)
}

#[derive(Debug, Serialize)]
struct RejectedEntry {
    row: usize,
    col: usize,
    e_value: f64,
    e_bar: f64,
    threshold: f64,
}

#[derive(Debug, Serialize)]
struct RejectionReport<'a> {
    format: String,
    alpha_ebh: f64,
    n_total: usize,
    k_hat: usize,
    /// `None` when nothing is rejected.
    ebh_threshold: Option<f64>,
    rejected: Vec<RejectedEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

pub fn rejections_json(output: &ClpOutput, thresholds: &HypothesisThresholds) -> Result<String> {
    let rejected = output
        .rejection
        .rejected
        .iter()
        .map(|&(row, col)| {
            let rec = output
                .evalues
                .iter()
                .find(|r| (r.row, r.col) == (row, col))
                .ok_or_else(|| ClpError::Internal(format!("no e-value for rejected ({row}, {col})")))?;
            Ok(RejectedEntry {
                row,
                col,
                e_value: rec.e_value,
                e_bar: rec.e_bar,
                threshold: thresholds.get(row, col).unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = RejectionReport {
        format: format!("clp rejections v{FORMAT_VERSION}"),
        alpha_ebh: output.rejection.alpha_ebh,
        n_total: output.rejection.n_total,
        k_hat: output.rejection.k_hat,
        ebh_threshold: output.rejection.threshold.is_finite().then_some(output.rejection.threshold),
        rejected,
        note: (output.rejection.n_total == 0).then_some("no missing entries to test"),
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

pub fn diagnostics_json(diagnostics: &Diagnostics) -> Result<String> {
    #[derive(Serialize)]
    struct Versioned<'a> {
        format: String,
        #[serde(flatten)]
        diagnostics: &'a Diagnostics,
    }
    Ok(serde_json::to_string_pretty(&Versioned {
        format: format!("clp diagnostics v{FORMAT_VERSION}"),
        diagnostics,
    })?)
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(contents.as_bytes())?;
    if !contents.ends_with('\n') {
        f.write_all(b"\n")?;
    }
    Ok(())
}
