//! Training metrics CSV: one row per logging interval.

use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::error::{CliError, Result};

pub const HEADER: [&str; 10] = [
    "iteration",
    "consistency",
    "kl",
    "lambda_kl",
    "total",
    "grad_norm",
    "grad_var",
    "grad_var_ema",
    "n_k",
    "skipped",
];

/// Reals are written with 17 significant digits; a missing probe is empty.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Completed iterations at the end of the interval.
    pub iteration: u64,
    /// Means over the interval's non-skipped steps (NaN if all were skipped).
    pub consistency: f64,
    pub kl: f64,
    pub lambda_kl: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub grad_var: Option<f64>,
    pub grad_var_ema: Option<f64>,
    pub n_k: usize,
    pub skipped: u64,
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            fmt_real(self.consistency),
            fmt_real(self.kl),
            fmt_real(self.lambda_kl),
            fmt_real(self.total),
            fmt_real(self.grad_norm),
            fmt_opt(self.grad_var),
            fmt_opt(self.grad_var_ema),
            self.n_k.to_string(),
            self.skipped.to_string(),
        ]
    }
}

pub(crate) fn csv_writer(file: File) -> csv::Writer<File> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(file)
}

pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// New file containing only the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = MetricsWriter {
            inner: csv_writer(file),
        };
        w.write(&HEADER.map(String::from))?;
        Ok(w)
    }

    /// Keeps the header and the complete rows up to `iteration`, then
    /// appends from there. Rows past the checkpoint, including a torn last
    /// line from an interrupted write, are dropped.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.split_inclusive('\n').filter(|l| l.ends_with('\n'));
        let header = lines.next().unwrap_or("");
        if header.trim_end().split(',').ne(HEADER) {
            return Err(CliError::Metrics("unexpected metrics header".into()));
        }
        let mut kept = header.to_string();
        for line in lines {
            let it = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
            match it {
                Some(i) if i <= iteration => kept.push_str(line),
                _ => break,
            }
        }
        std::fs::write(path, kept).map_err(|e| CliError::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(MetricsWriter {
            inner: csv_writer(file),
        })
    }

    fn write(&mut self, rec: &[String]) -> Result<()> {
        self.inner
            .write_record(rec)
            .and_then(|_| self.inner.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Metrics(format!("cannot write metrics: {e}")))
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.write(&row.record())
    }
}

fn parse_real(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| CliError::Metrics(format!("line {line}: bad `{name}` value `{field}`")))
}

fn parse_opt(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_real(field, name, line).map(Some)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    if !path.is_file() {
        return Err(CliError::Metrics(format!("missing {}", path.display())));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Metrics(format!("unreadable header: {e}")))?
        .clone();
    if headers.iter().ne(HEADER) {
        return Err(CliError::Metrics("unexpected metrics header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| CliError::Metrics(format!("line {line}: {e}")))?;
        let int = |j: usize| -> Result<u64> {
            rec[j].parse::<u64>().map_err(|_| {
                CliError::Metrics(format!("line {line}: bad `{}` value `{}`", HEADER[j], &rec[j]))
            })
        };
        rows.push(MetricsRow {
            iteration: int(0)?,
            consistency: parse_real(&rec[1], HEADER[1], line)?,
            kl: parse_real(&rec[2], HEADER[2], line)?,
            lambda_kl: parse_real(&rec[3], HEADER[3], line)?,
            total: parse_real(&rec[4], HEADER[4], line)?,
            grad_norm: parse_real(&rec[5], HEADER[5], line)?,
            grad_var: parse_opt(&rec[6], HEADER[6], line)?,
            grad_var_ema: parse_opt(&rec[7], HEADER[7], line)?,
            n_k: int(8)? as usize,
            skipped: int(9)?,
        });
    }
    Ok(rows)
}

/// Accumulates per-step values between logging points.
#[derive(Debug, Default, Clone)]
pub struct IntervalStats {
    count: u64,
    skipped: u64,
    consistency: f64,
    kl: f64,
    lambda_kl: f64,
    total: f64,
    grad_norm: f64,
    n_k: usize,
}

impl IntervalStats {
    pub fn add(&mut self, b: &vct_core::LossBreakdown) {
        self.count += 1;
        self.consistency += b.consistency;
        self.kl += b.kl;
        self.lambda_kl += b.lambda_kl;
        self.total += b.total;
        self.grad_norm += b.grad_norm_pre_clip;
        self.n_k = b.n_k;
    }

    pub fn skip(&mut self) {
        self.skipped += 1;
    }

    pub fn row(&self, iteration: u64, grad_var: Option<f64>, grad_var_ema: Option<f64>) -> MetricsRow {
        let n = self.count as f64;
        let mean = |s: f64| if self.count == 0 { f64::NAN } else { s / n };
        MetricsRow {
            iteration,
            consistency: mean(self.consistency),
            kl: mean(self.kl),
            lambda_kl: mean(self.lambda_kl),
            total: mean(self.total),
            grad_norm: mean(self.grad_norm),
            grad_var,
            grad_var_ema,
            n_k: self.n_k,
            skipped: self.skipped,
        }
    }
}

/// `ema <- rate ema + (1 - rate) x`, starting at the first value.
pub fn ema_trace(values: &[f64], rate: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc: Option<f64> = None;
    for &v in values {
        let next = acc.map_or(v, |a| rate * a + (1.0 - rate) * v);
        acc = Some(next);
        out.push(next);
    }
    out
}
