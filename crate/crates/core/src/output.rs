//! CSV traces, per-iteration aggregation and the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{TraceRow, DEFAULT_STOP_GRAD_SQ};
use crate::sketch::Side;

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "f",
    "grad_sq_norm",
    "estimator_gap",
    "lyapunov",
    "stepsize",
    "comm_scalars",
    "side",
];

/// Columns aggregated across seeds, in output order.
pub const AGG_COLUMNS: [&str; 6] = [
    "f",
    "grad_sq_norm",
    "estimator_gap",
    "lyapunov",
    "stepsize",
    "comm_scalars",
];

/// Shortest decimal string that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.f),
            fmt_f64(r.grad_sq_norm),
            fmt_f64(r.estimator_gap),
            fmt_f64(r.lyapunov),
            fmt_f64(r.stepsize),
            fmt_f64(r.comm_scalars),
            r.side.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let bad = |msg: String| Error::Parse {
        context: path.display().to_string(),
        message: msg,
    };
    let mut rd = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(bad(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: column `{}` is not a number", k + 1, TRACE_HEADER[i])))
        };
        let side = match &rec[7] {
            "left" => Side::Left,
            "right" => Side::Right,
            s => return Err(bad(format!("row {}: unknown side `{s}`", k + 1))),
        };
        rows.push(TraceRow {
            iter: rec[0]
                .parse()
                .map_err(|_| bad(format!("row {}: bad iteration index", k + 1)))?,
            f: num(1)?,
            grad_sq_norm: num(2)?,
            estimator_gap: num(3)?,
            lyapunov: num(4)?,
            stepsize: num(5)?,
            comm_scalars: num(6)?,
            side,
        });
    }
    Ok(rows)
}

fn column(r: &TraceRow, k: usize) -> f64 {
    match k {
        0 => r.f,
        1 => r.grad_sq_norm,
        2 => r.estimator_gap,
        3 => r.lyapunov,
        4 => r.stepsize,
        _ => r.comm_scalars,
    }
}

/// Linear-interpolation quantile of finite values; NaN if there are none.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * frac
    }
}

/// One aggregated row: `(p25, median, p75)` per column of [`AGG_COLUMNS`].
#[derive(Clone, Debug, PartialEq)]
pub struct AggRow {
    pub iter: usize,
    pub stats: [(f64, f64, f64); 6],
}

/// Per-iteration quantiles across seeds. Runs that stopped early
/// contribute their last row to later iterations.
pub fn aggregate(traces: &[Vec<TraceRow>]) -> Vec<AggRow> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let rows: Vec<&TraceRow> = traces
                .iter()
                .filter(|tr| !tr.is_empty())
                .map(|tr| &tr[t.min(tr.len() - 1)])
                .collect();
            let mut stats = [(0.0, 0.0, 0.0); 6];
            for (k, s) in stats.iter_mut().enumerate() {
                let vals: Vec<f64> = rows.iter().map(|r| column(r, k)).collect();
                *s = (quantile(&vals, 0.25), quantile(&vals, 0.5), quantile(&vals, 0.75));
            }
            AggRow { iter: t, stats }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggRow]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["iter".to_string()];
    for c in AGG_COLUMNS {
        header.extend([format!("{c}_p25"), format!("{c}_median"), format!("{c}_p75")]);
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.iter.to_string()];
        for (a, b, c) in r.stats {
            rec.extend([fmt_f64(a), fmt_f64(b), fmt_f64(c)]);
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Which observed quantity a theorem bound refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMetric {
    /// `(1/T) sum_t ||grad f(W^t)||^2`.
    AvgGradSq,
    /// `f(W^T) - f*`.
    FinalGap,
    /// `f(mean of iterates) - f*`.
    AveragedGap,
}

/// Per-method side file written next to the traces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodMeta {
    pub method: String,
    #[serde(default)]
    pub theorem: Option<String>,
    #[serde(default)]
    pub stepsize: Option<f64>,
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub bound_metric: Option<BoundMetric>,
    #[serde(default)]
    pub f_star: Option<f64>,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Seed -> "completed" | "converged" | "diverged at N".
    #[serde(default)]
    pub outcomes: BTreeMap<String, String>,
    /// Seed -> observed value of `bound_metric` when it is not derivable
    /// from the CSV (final-iterate or averaged-iterate gaps).
    #[serde(default)]
    pub observed: BTreeMap<String, f64>,
}

pub const META_FILE: &str = "meta.toml";
pub const MEDIAN_FILE: &str = "median.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

impl MethodMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub diverged: usize,
    /// First iteration where the median `||grad f||^2` is at most the threshold.
    pub iters_to_threshold: Option<usize>,
    /// Final median `||grad f||^2`.
    pub plateau: f64,
    pub min_grad_sq: f64,
    /// Seed mean of the uniformly averaged `||grad f||^2`.
    pub avg_grad_sq: f64,
    pub total_comm: f64,
    pub delta0: Option<f64>,
    pub observed: Option<f64>,
    pub bound: Option<f64>,
    pub bound_ok: Option<bool>,
}

fn seed_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.strip_suffix(".csv")) {
            out.push((seed.to_string(), p.clone()));
        }
    }
    out.sort_by(|a, b| match (a.0.parse::<u64>(), b.0.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.0.cmp(&b.0),
    });
    Ok(out)
}

/// Mean of `grad_sq_norm` over `horizon` steps, holding the last value of a
/// run that stopped early.
fn padded_mean(t: &[TraceRow], horizon: Option<usize>) -> f64 {
    let n = horizon.unwrap_or(t.len()).max(t.len());
    let last = t.last().map_or(0.0, |r| r.grad_sq_norm);
    (t.iter().map(|r| r.grad_sq_norm).sum::<f64>() + (n - t.len()) as f64 * last) / n as f64
}

pub fn summarize_method(dir: &Path) -> Result<Option<SummaryRow>> {
    let files = seed_files(dir)?;
    if files.is_empty() {
        return Ok(None);
    }
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        MethodMeta::load(&meta_path)?
    } else {
        MethodMeta::default()
    };
    let mut traces = Vec::new();
    for (_, p) in &files {
        traces.push(read_trace(p)?);
    }
    let agg = aggregate(&traces);
    let threshold = meta.threshold.unwrap_or(DEFAULT_STOP_GRAD_SQ);
    let med = |r: &AggRow, k: usize| r.stats[k].1;
    let iters_to_threshold = agg.iter().find(|r| med(r, 1) <= threshold).map(|r| r.iter);
    let plateau = agg.last().map_or(f64::NAN, |r| med(r, 1));
    let min_grad_sq = agg.iter().map(|r| med(r, 1)).fold(f64::INFINITY, f64::min);
    let total_comm = agg.last().map_or(0.0, |r| med(r, 5));
    let per_seed_avg: Vec<f64> = traces
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| padded_mean(t, meta.horizon))
        .collect();
    let avg_grad_sq = per_seed_avg.iter().sum::<f64>() / per_seed_avg.len().max(1) as f64;
    let diverged = meta.outcomes.values().filter(|s| s.starts_with("diverged")).count();
    let observed = match meta.bound_metric {
        Some(BoundMetric::AvgGradSq) => Some(avg_grad_sq),
        Some(_) if !meta.observed.is_empty() => Some(meta.observed.values().sum::<f64>() / meta.observed.len() as f64),
        _ => None,
    };
    let bound_ok = match (observed, meta.bound) {
        (Some(o), Some(b)) => Some(o <= b),
        _ => None,
    };
    let name = if meta.method.is_empty() {
        dir.file_name().and_then(|s| s.to_str()).unwrap_or("?").to_string()
    } else {
        meta.method.clone()
    };
    Ok(Some(SummaryRow {
        method: name,
        seeds: files.len(),
        diverged,
        iters_to_threshold,
        plateau,
        min_grad_sq,
        avg_grad_sq,
        total_comm,
        delta0: meta.delta0,
        observed,
        bound: meta.bound,
        bound_ok,
    }))
}

/// Rows for every method subdirectory of `dir`, sorted by name.
pub fn summarize_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut subdirs = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
        if p.is_dir() {
            subdirs.push(p);
        }
    }
    subdirs.sort();
    let mut rows = Vec::new();
    for d in subdirs {
        if let Some(r) = summarize_method(&d)? {
            rows.push(r);
        }
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.6e}"))
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let header = [
        "method",
        "seeds",
        "diverged",
        "iters_to_threshold",
        "plateau_grad_sq",
        "min_grad_sq",
        "avg_grad_sq",
        "total_comm",
        "delta0",
        "observed",
        "bound",
        "bound_ok",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.seeds.to_string(),
                r.diverged.to_string(),
                r.iters_to_threshold.map_or("-".into(), |v| v.to_string()),
                format!("{:.6e}", r.plateau),
                format!("{:.6e}", r.min_grad_sq),
                format!("{:.6e}", r.avg_grad_sq),
                format!("{}", r.total_comm),
                opt(r.delta0),
                opt(r.observed),
                opt(r.bound),
                r.bound_ok
                    .map_or("-".into(), |b| if b { "yes".into() } else { "no".into() }),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert!(quantile(&[f64::NAN], 0.5).is_nan());
    }

    #[test]
    fn float_format_roundtrips() {
        for x in [0.1, 1e-300, 123456.789, -0.0, 5e-16] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1");
    }

    fn row(iter: usize, g: f64) -> TraceRow {
        TraceRow {
            iter,
            f: g,
            grad_sq_norm: g,
            estimator_gap: 0.0,
            lyapunov: g,
            stepsize: 0.5,
            comm_scalars: 0.0,
            side: Side::Left,
        }
    }

    #[test]
    fn aggregation_carries_short_runs_forward() {
        let a = vec![row(0, 4.0), row(1, 2.0), row(2, 1.0)];
        let b = vec![row(0, 2.0)];
        let agg = aggregate(&[a, b]);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[2].stats[1].1, 1.5);
    }

    #[test]
    fn trace_roundtrip_and_malformed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seed-1.csv");
        let rows = vec![row(0, 0.25), row(1, 1e-20)];
        write_trace(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iter,f,grad_sq_norm,estimator_gap,lyapunov,stepsize,comm_scalars,side\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_trace(&p).unwrap(), rows);
        let bad = dir.path().join("seed-2.csv");
        fs::write(&bad, "iter,f\n0,1\n").unwrap();
        let err = read_trace(&bad).unwrap_err().to_string();
        assert!(err.contains("seed-2.csv"));
    }
}
