//! Averaged summaries, per-version traces and the run directory layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::relative_degradation;
use super::runner::{MethodRun, Reference};
use crate::error::{Error, Result};
use crate::method::Method;

/// One line of the summary table. Raw metrics are averaged over versions
/// (and tasks) first; degradations are computed from those averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    /// Mean Recall@K over `k = 0..=K`.
    pub intended: f64,
    /// Mean ROC-AUC over every scored `(task, k)`; `None` if no task was scored.
    pub unintended: Option<f64>,
    /// Mean alignment error over `k = 1..=K`.
    pub alignment_error: f64,
    pub intended_degradation: f64,
    pub unintended_degradation: Option<f64>,
    /// `(1) + (2)`.
    pub combined: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean ROC-AUC of `run` over the `(task, k)` pairs scored for both runs.
fn unintended_average(run: &MethodRun, keep_all: &MethodRun) -> Option<(f64, f64)> {
    let mut ours = Vec::new();
    let mut theirs = Vec::new();
    for (v, r) in run.versions.iter().zip(&keep_all.versions) {
        for task in v.unintended.keys() {
            if let (Some(a), Some(b)) = (v.unintended_mean(*task), r.unintended_mean(*task)) {
                ours.push(a);
                theirs.push(b);
            }
        }
    }
    Some((mean(ours)?, mean(theirs)?))
}

pub fn summarize(run: &MethodRun, keep_all: &MethodRun) -> Result<SummaryRow> {
    if keep_all.method != Method::KeepAll {
        return Err(Error::State(format!("degradation baseline must be Keep-All, got {}", keep_all.method)));
    }
    if run.versions.len() != keep_all.versions.len() {
        return Err(Error::State(format!(
            "{} has {} versions, Keep-All has {}",
            run.method,
            run.versions.len(),
            keep_all.versions.len()
        )));
    }
    let intended = mean(run.versions.iter().map(|v| v.recall)).unwrap_or(0.0);
    let baseline = mean(keep_all.versions.iter().map(|v| v.recall)).unwrap_or(0.0);
    let intended_degradation = relative_degradation(intended, baseline)?;
    let alignment_error = mean(run.versions.iter().filter_map(|v| v.alignment_error)).unwrap_or(0.0);
    let (unintended, unintended_degradation) = match unintended_average(run, keep_all) {
        Some((ours, theirs)) => (Some(ours), Some(relative_degradation(ours, theirs)?)),
        None => (None, None),
    };
    Ok(SummaryRow {
        method: run.method,
        intended,
        unintended,
        alignment_error,
        intended_degradation,
        unintended_degradation,
        combined: unintended_degradation.map(|u| u + intended_degradation),
    })
}

/// Fixed-width text rendering of the summary table.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>14} {:>14} {:>10} {:>12}  {:>9} {:>9}",
        "method", "(1) intended%", "(2) unintend%", "(1)+(2)", "(3) align", "recall", "auc"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>14.2} {:>14} {:>10} {:>12.4}  {:>9.4} {:>9}",
            r.method.name(),
            r.intended_degradation,
            opt(r.unintended_degradation),
            opt(r.combined),
            r.alignment_error,
            r.intended,
            r.unintended.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}")),
        );
    }
    out
}

/// `(method, version, metric, value)` rows for plotting metrics over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: String,
    pub version: usize,
    pub metric: String,
    pub value: f64,
}

pub fn trace_rows(run: &MethodRun, keep_all: &MethodRun) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    let mut push = |version: usize, metric: &str, value: f64| {
        rows.push(TraceRow {
            method: run.method.key().to_string(),
            version,
            metric: metric.to_string(),
            value,
        })
    };
    for (v, r) in run.versions.iter().zip(&keep_all.versions) {
        push(v.version, "dim", v.dim as f64);
        push(v.version, "recall", v.recall);
        if let Ok(d) = relative_degradation(v.recall, r.recall) {
            push(v.version, "intended_degradation", d);
        }
        if let Some(e) = v.alignment_error {
            push(v.version, "alignment_error", e);
        }
        for task in v.unintended.keys() {
            if let (Some(a), Some(b)) = (v.unintended_mean(*task), r.unintended_mean(*task)) {
                push(v.version, &format!("auc_{}", task.key()), a);
                if let Ok(d) = relative_degradation(a, b) {
                    push(v.version, &format!("degradation_{}", task.key()), d);
                }
            }
        }
    }
    rows
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AucRow<'a> {
    method: &'a str,
    task: &'a str,
    version: usize,
    seed: usize,
    roc_auc: f64,
}

#[derive(Serialize)]
struct GrowthRow {
    from_version: usize,
    to_version: usize,
    gap: usize,
    mean_l2: f64,
}

/// Writes one method's checkpoints, tables, loss log and traces under `dir`.
pub fn write_method_artifacts(dir: &Path, run: &MethodRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, (enc, table)) in run.encoders.iter().zip(&run.tables).enumerate() {
        enc.save(&dir.join(format!("encoder_v{k}.bin")))?;
        table.save(&dir.join(format!("table_v{k}.bin")))?;
    }
    if let Some(reg) = &run.registry {
        reg.save(&dir.join("registry.bin"))?;
    }
    write_csv(&dir.join("loss_log.csv"), &run.log)?;
    if let Some(g) = &run.growth {
        write_csv(
            &dir.join("growth_trace.csv"),
            g.entries.iter().map(|&(j, k, m)| GrowthRow {
                from_version: k,
                to_version: j,
                gap: k - j,
                mean_l2: m,
            }),
        )?;
    }
    Ok(())
}

/// Writes the full run directory: summary, traces, per-seed ROC-AUC,
/// consumers and every method's artifacts.
pub fn write_run(dir: &Path, reference: &Reference, runs: &[MethodRun]) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let keep_all = &reference.run;
    let rows = runs.iter().map(|r| summarize(r, keep_all)).collect::<Result<Vec<_>>>()?;
    write_csv(&dir.join("summary.csv"), &rows)?;
    fs::write(dir.join("summary.txt"), render_summary(&rows)).map_err(|e| Error::io(dir.join("summary.txt"), e))?;
    write_csv(&dir.join("trace.csv"), runs.iter().flat_map(|r| trace_rows(r, keep_all)))?;

    let mut aucs = Vec::new();
    for run in runs {
        for v in &run.versions {
            for (task, per_seed) in &v.unintended {
                for (seed, &roc_auc) in per_seed.iter().enumerate() {
                    aucs.push(AucRow {
                        method: run.method.key(),
                        task: task.key(),
                        version: v.version,
                        seed,
                        roc_auc,
                    });
                }
            }
        }
    }
    write_csv(&dir.join("unintended.csv"), aucs)?;

    let consumer_dir = dir.join("consumers");
    fs::create_dir_all(&consumer_dir).map_err(|e| Error::io(&consumer_dir, e))?;
    for (task, models) in &reference.consumers {
        for (s, m) in models.iter().enumerate() {
            m.save(&consumer_dir.join(format!("{}_seed{s}.bin", task.key())))?;
        }
    }
    if !reference.skipped_tasks.is_empty() {
        let text: String = reference
            .skipped_tasks
            .iter()
            .map(|(t, why)| format!("{}: {why}\n", t.key()))
            .collect();
        fs::write(dir.join("skipped_tasks.txt"), text).map_err(|e| Error::io(dir.join("skipped_tasks.txt"), e))?;
    }
    for run in runs {
        write_method_artifacts(&dir.join(run.method.key()), run)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::consumer::TaskId;
    use crate::evaluation::VersionMetrics;

    fn run(method: Method, recalls: &[f64], aucs: &[Option<f64>], align: &[f64]) -> MethodRun {
        let versions = recalls
            .iter()
            .enumerate()
            .map(|(k, &recall)| {
                let mut unintended = BTreeMap::new();
                if let Some(a) = aucs[k] {
                    unintended.insert(TaskId::EdgeRating, vec![a, a]);
                }
                VersionMetrics {
                    version: k,
                    dim: 4,
                    recall,
                    unintended,
                    alignment_error: (k > 0).then(|| align[k - 1]),
                }
            })
            .collect();
        MethodRun {
            method,
            versions,
            encoders: Vec::new(),
            tables: Vec::new(),
            registry: None,
            log: Vec::new(),
            growth: None,
        }
    }

    #[test]
    fn keep_all_against_itself_is_zero() {
        let ka = run(Method::KeepAll, &[0.2, 0.3], &[None, Some(0.7)], &[0.0]);
        let row = summarize(&ka, &ka).unwrap();
        assert_eq!(row.intended_degradation, 0.0);
        assert_eq!(row.unintended_degradation, Some(0.0));
        assert_eq!(row.combined, Some(0.0));
    }

    #[test]
    fn degradation_is_taken_after_averaging() {
        let ka = run(Method::KeepAll, &[0.1, 0.3], &[None, Some(0.8)], &[0.0]);
        let m = run(Method::BCAligner, &[0.1, 0.1], &[None, Some(0.6)], &[0.5]);
        let row = summarize(&m, &ka).unwrap();
        // Averages 0.1 vs 0.2 → −50 %, not the mean of per-version degradations (−33.3 %).
        assert!((row.intended_degradation + 50.0).abs() < 1e-12);
        assert!((row.unintended_degradation.unwrap() + 25.0).abs() < 1e-12);
        assert!((row.combined.unwrap() + 75.0).abs() < 1e-12);
        assert_eq!(row.alignment_error, 0.5);
        assert!(summarize(&ka, &m).is_err());
    }
}
