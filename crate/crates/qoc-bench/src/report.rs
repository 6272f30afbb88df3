// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Artifact emission: convergence-trace CSVs, per-restart TOML records,
//! TOML summaries, and aligned plain-text tables.
//!
//! A benchmark writes into one output directory:
//!
//! ```text
//! out/
//!   config.toml        canonical config echo (reparses to the same run)
//!   summary.toml       aggregated statistics plus the problem fingerprint
//!   summary.txt        the same statistics as an aligned table
//!   restarts/
//!     restart_000.toml one record per restart
//!     trace_000.csv    one convergence trace per restart
//! ```
//!
//! All numbers are written in shortest round-trip decimal form, so files
//! are byte-deterministic for a fixed `(config, seed)` — except wall-time
//! fields, which depend on the machine.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qoc::optimize::TracePoint;

use crate::config::BenchConfig;
use crate::harness::{summarize, BenchOutcome, BenchSummary, RestartRecord};
use crate::{BenchError, Result};

/// Exact column set of a trace CSV, in order.
pub const TRACE_COLUMNS: [&str; 6] = [
    "iteration",
    "elapsed_s",
    "fidelity",
    "one_minus_fidelity",
    "n_eig_cum",
    "n_matmul_cum",
];

/// Renders a convergence trace as CSV text (header plus one row per
/// recorded iteration, in iteration order).
pub fn trace_csv_string(trace: &[TracePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for p in trace {
        w.write_record(&[
            p.r.to_string(),
            p.elapsed_s.to_string(),
            p.fidelity.to_string(),
            (1.0 - p.fidelity).to_string(),
            p.counters.n_eig.to_string(),
            p.counters.n_matmul.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))
}

/// Drops the machine-dependent `elapsed_s` column from trace CSV text,
/// leaving exactly the bytes that the determinism contract covers.
pub fn trace_csv_without_elapsed(csv_text: &str) -> String {
    let mut out = String::with_capacity(csv_text.len());
    for line in csv_text.lines() {
        let mut kept = 0usize;
        for (i, field) in line.split(',').enumerate() {
            if i == 1 {
                continue;
            }
            if kept > 0 {
                out.push(',');
            }
            out.push_str(field);
            kept += 1;
        }
        out.push('\n');
    }
    out
}

/// Summary file contents: the aggregate statistics plus the problem
/// fingerprint the restarts were verified against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryDoc {
    pub fingerprint: String,
    pub summary: BenchSummary,
}

fn toml_pretty<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| BenchError::Config(e.to_string()))
}

/// Index width for restart file names: at least three digits, growing as
/// needed so lexicographic and numeric order agree.
fn index_width(restarts: usize) -> usize {
    let mut width = 1;
    let mut top = restarts.saturating_sub(1);
    while top >= 10 {
        width += 1;
        top /= 10;
    }
    width.max(3)
}

/// Path of restart `i`'s record file under `dir`.
pub fn restart_record_path(dir: &Path, i: usize, restarts: usize) -> PathBuf {
    dir.join("restarts")
        .join(format!("restart_{i:0w$}.toml", w = index_width(restarts)))
}

/// Path of restart `i`'s trace file under `dir`.
pub fn restart_trace_path(dir: &Path, i: usize, restarts: usize) -> PathBuf {
    dir.join("restarts")
        .join(format!("trace_{i:0w$}.csv", w = index_width(restarts)))
}

/// Writes the complete artifact set for one benchmark run.
pub fn write_run_outputs(dir: &Path, config: &BenchConfig, outcome: &BenchOutcome) -> Result<()> {
    fs::create_dir_all(dir.join("restarts"))?;
    fs::write(dir.join("config.toml"), config.canonical_toml()?)?;
    let n = outcome.restarts.len();
    for run in &outcome.restarts {
        let i = run.record.restart;
        fs::write(
            restart_record_path(dir, i, n),
            toml_pretty(&run.record)?,
        )?;
        fs::write(restart_trace_path(dir, i, n), trace_csv_string(&run.trace)?)?;
    }
    let doc = SummaryDoc {
        fingerprint: outcome.fingerprint.clone(),
        summary: outcome.summary.clone(),
    };
    fs::write(dir.join("summary.toml"), toml_pretty(&doc)?)?;
    fs::write(
        dir.join("summary.txt"),
        render_summary_table(std::slice::from_ref(&outcome.summary)),
    )?;
    Ok(())
}

/// Reads back the emitted summary document.
pub fn read_summary(dir: &Path) -> Result<SummaryDoc> {
    let text = fs::read_to_string(dir.join("summary.toml"))?;
    toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))
}

/// Reads back all per-restart records under `dir`, in restart order.
pub fn read_restart_records(dir: &Path) -> Result<Vec<RestartRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("restarts"))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "toml")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("restart_"))
        })
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let record: RestartRecord = toml::from_str(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        records.push(record);
    }
    Ok(records)
}

/// Recomputes the summary from the per-restart files on disk.  By the
/// emission contract it must equal the summary in `summary.toml` exactly.
pub fn recompute_summary(dir: &Path) -> Result<BenchSummary> {
    let config_text = fs::read_to_string(dir.join("config.toml"))?;
    let config: BenchConfig =
        toml::from_str(&config_text).map_err(|e| BenchError::Config(e.to_string()))?;
    let records = read_restart_records(dir)?;
    summarize(&config, &records)
}

fn fmt_stat(stat: &crate::harness::Stat, decimals: usize) -> String {
    format!(
        "{:.d$}/{:.d$}/{:.d$}",
        stat.mean,
        stat.min,
        stat.max,
        d = decimals
    )
}

/// Renders summaries as an aligned plain-text table, one row per summary:
/// final fidelity, wall seconds, and operation counts in thousands, each
/// as mean/min/max over the completed restarts.
pub fn render_summary_table(rows: &[BenchSummary]) -> String {
    let header = [
        "problem",
        "scheme",
        "restarts",
        "fidelity (mean/min/max)",
        "wall s (mean/min/max)",
        "eigendecs/1e3 (mean/min/max)",
        "matmuls/1e3 (mean/min/max)",
    ];
    let mut table: Vec<[String; 7]> = vec![header.map(String::from)];
    for s in rows {
        let restarts = if s.incomplete {
            format!("{}/{}!", s.completed, s.restarts)
        } else {
            format!("{}", s.restarts)
        };
        table.push([
            s.problem.clone(),
            s.scheme.clone(),
            restarts,
            fmt_stat(&s.final_fidelity, 4),
            fmt_stat(&s.wall_s, 2),
            fmt_stat(&s.kilo_eig, 2),
            fmt_stat(&s.kilo_matmul, 2),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &table {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(widths.iter()) {
            if !line.is_empty() {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<w$}"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Combined result of a multi-scheme comparison on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareDoc {
    pub problem: String,
    pub rows: Vec<BenchSummary>,
}

/// Joins summaries of the same problem for side-by-side comparison;
/// mixing problems is rejected.
pub fn compare_summaries(rows: &[BenchSummary]) -> Result<CompareDoc> {
    if rows.len() < 2 {
        return Err(BenchError::Config(
            "compare needs at least two benchmark results".into(),
        ));
    }
    let problem = rows[0].problem.clone();
    if rows.iter().any(|r| r.problem != problem) {
        return Err(BenchError::Config(format!(
            "compare requires a common problem; got {:?}",
            rows.iter().map(|r| r.problem.as_str()).collect::<Vec<_>>()
        )));
    }
    Ok(CompareDoc {
        problem,
        rows: rows.to_vec(),
    })
}

/// Writes the machine-readable and plain-text versions of a comparison.
pub fn write_compare_outputs(dir: &Path, doc: &CompareDoc) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("compare.toml"), toml_pretty(doc)?)?;
    fs::write(dir.join("compare.txt"), render_summary_table(&doc.rows))?;
    Ok(())
}
