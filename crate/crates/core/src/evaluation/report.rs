use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::metrics::Metric;
use crate::evaluation::protocol::ProtocolRow;
use crate::evaluation::stats::{paired_ttest, TTest};

pub const RESULTS_HEADER: [&str; 9] = [
    "method",
    "target_prev",
    "trial",
    "est_prev",
    "ae",
    "rae",
    "kld",
    "sample_size",
    "seed",
];
pub const SUMMARY_HEADER: [&str; 4] = ["method", "metric", "mean", "std"];
pub const PLOT_HEADER: [&str; 4] = ["method", "target_prev", "mean_est", "std_est"];

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub method: String,
    pub target_prev: f64,
    pub mean_est: f64,
    pub std_est: f64,
}

impl ProtocolRow {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Ae => self.ae,
            Metric::Rae => self.rae,
            Metric::Kld => self.kld,
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups values by key, keeping keys in order of first appearance.
fn group<K: Eq + std::hash::Hash + Clone>(items: impl Iterator<Item = (K, f64)>) -> Vec<(K, Vec<f64>)> {
    let mut pos: HashMap<K, usize> = HashMap::new();
    let mut out: Vec<(K, Vec<f64>)> = Vec::new();
    for (k, v) in items {
        let i = *pos.entry(k.clone()).or_insert_with(|| {
            out.push((k.clone(), Vec::new()));
            out.len() - 1
        });
        out[i].1.push(v);
    }
    out
}

/// Methods in order of first appearance.
pub fn methods(rows: &[ProtocolRow]) -> Vec<String> {
    group(rows.iter().map(|r| (r.method.clone(), 0.0)))
        .into_iter()
        .map(|(m, _)| m)
        .collect()
}

/// Per method and metric: mean and standard deviation over all rows.
pub fn summarize(rows: &[ProtocolRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::invalid("nothing to summarize"));
    }
    let mut out = Vec::new();
    for method in methods(rows) {
        for metric in Metric::ALL {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.metric(metric))
                .collect();
            let (mean, std) = mean_std(&xs);
            out.push(SummaryRow {
                method: method.clone(),
                metric,
                mean,
                std,
            });
        }
    }
    Ok(out)
}

/// Per method and target prevalence: mean and standard deviation of the
/// estimates.
pub fn plot_data(rows: &[ProtocolRow]) -> Vec<PlotRow> {
    group(
        rows.iter()
            .map(|r| ((r.method.clone(), r.target_prev.to_bits()), r.est_prev)),
    )
    .into_iter()
    .map(|((method, bits), xs)| {
        let (mean_est, std_est) = mean_std(&xs);
        PlotRow {
            method,
            target_prev: f64::from_bits(bits),
            mean_est,
            std_est,
        }
    })
    .collect()
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ProtocolRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.target_prev.to_string(),
            r.trial.to_string(),
            r.est_prev.to_string(),
            r.ae.to_string(),
            r.rae.to_string(),
            r.kld.to_string(),
            r.sample_size.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.metric.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plot(path: impl AsRef<Path>, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PLOT_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.target_prev.to_string(),
            r.mean_est.to_string(),
            r.std_est.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {} value `{raw}`", RESULTS_HEADER[i]),
    })
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ProtocolRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{}`", RESULTS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != RESULTS_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", RESULTS_HEADER.len(), rec.len()),
            });
        }
        rows.push(ProtocolRow {
            method: rec[0].to_string(),
            target_prev: field(path, line, &rec, 1)?,
            trial: field(path, line, &rec, 2)?,
            est_prev: field(path, line, &rec, 3)?,
            ae: field(path, line, &rec, 4)?,
            rae: field(path, line, &rec, 5)?,
            kld: field(path, line, &rec, 6)?,
            sample_size: field(path, line, &rec, 7)?,
            seed: field(path, line, &rec, 8)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no result rows".into(),
        });
    }
    Ok(rows)
}

/// Table of mean errors, one row per method, pooled over every run, with
/// per-run paired t-tests against the best method of each column.
#[derive(Clone, Debug)]
pub struct Report {
    pub methods: Vec<String>,
    /// `means[i][j]`: method `i`, metric `Metric::ALL[j]`.
    pub means: Vec<[f64; 3]>,
    /// Index of the lowest mean per metric.
    pub best: [usize; 3],
    pub runs: usize,
    /// `ttests[i][j]`: method `i` against the best of metric `j`, present
    /// when at least two runs exist and `i` is not the best.
    pub ttests: Vec<[Option<TTest>; 3]>,
}

/// Builds the report over several runs, each the rows of one seed.
pub fn build_report(runs: &[Vec<ProtocolRow>]) -> Result<Report> {
    let all: Vec<ProtocolRow> = runs.iter().flatten().cloned().collect();
    let summary = summarize(&all)?;
    let methods = methods(&all);
    let means: Vec<[f64; 3]> = methods
        .iter()
        .map(|m| {
            let mut v = [0.0; 3];
            for s in summary.iter().filter(|s| &s.method == m) {
                v[Metric::ALL.iter().position(|x| *x == s.metric).unwrap()] = s.mean;
            }
            v
        })
        .collect();
    let mut best = [0usize; 3];
    for (j, b) in best.iter_mut().enumerate() {
        for i in 1..means.len() {
            if means[i][j] < means[*b][j] {
                *b = i;
            }
        }
    }
    let per_run: Vec<Vec<[f64; 3]>> = runs
        .iter()
        .map(|rows| {
            methods
                .iter()
                .map(|m| {
                    let mut v = [f64::NAN; 3];
                    for (j, metric) in Metric::ALL.iter().enumerate() {
                        let xs: Vec<f64> = rows
                            .iter()
                            .filter(|r| &r.method == m)
                            .map(|r| r.metric(*metric))
                            .collect();
                        if !xs.is_empty() {
                            v[j] = mean_std(&xs).0;
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut ttests = vec![[None; 3]; methods.len()];
    if runs.len() >= 2 {
        for (i, row) in ttests.iter_mut().enumerate() {
            for j in 0..3 {
                if i == best[j] {
                    continue;
                }
                let a: Vec<f64> = per_run.iter().map(|r| r[i][j]).collect();
                let b: Vec<f64> = per_run.iter().map(|r| r[best[j]][j]).collect();
                if a.iter().chain(&b).all(|x| x.is_finite()) {
                    row[j] = Some(paired_ttest(&a, &b)?);
                }
            }
        }
    }
    Ok(Report {
        methods,
        means,
        best,
        runs: runs.len(),
        ttests,
    })
}

impl Report {
    /// Plain-text table. `*` marks the best method per column; with two or
    /// more runs each other cell carries the p-value of its paired t-test
    /// against that best method.
    pub fn render(&self) -> String {
        let with_t = self.runs >= 2;
        let cell = |i: usize, j: usize| {
            let mut s = format!("{:.4}", self.means[i][j]);
            if self.best[j] == i {
                s.push('*');
            } else if let Some(t) = self.ttests[i][j] {
                let _ = write!(s, " (p={:.3})", t.p_value);
            }
            s
        };
        let width = self.methods.iter().map(|m| m.len()).max().unwrap_or(0).max(6);
        let col = if with_t { 20 } else { 10 };
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "method");
        for m in Metric::ALL {
            let _ = write!(out, "  {:>col$}", m.as_str().to_uppercase());
        }
        out.push('\n');
        for (i, name) in self.methods.iter().enumerate() {
            let _ = write!(out, "{name:<width$}");
            for j in 0..3 {
                let _ = write!(out, "  {:>col$}", cell(i, j));
            }
            out.push('\n');
        }
        let _ = write!(out, "runs: {}", self.runs);
        if with_t {
            out.push_str("; p-values: two-tailed paired t-test over per-run means against the best (*)");
        }
        out.push('\n');
        out
    }
}
