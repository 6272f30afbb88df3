// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness around the [`qoc`] optimizers.
//!
//! The harness runs one optimization scheme on one catalog (or custom)
//! problem over many restarts with deterministically seeded random initial
//! pulses, then aggregates final fidelity, wall time, and operation counts
//! into mean/min/max summaries.  Everything an analysis needs is written to
//! plain files: one TOML record and one CSV convergence trace per restart,
//! plus a TOML summary and an aligned plain-text table.
//!
//! Reproducibility contract: a `(config, seed)` pair fully determines every
//! output byte except the `elapsed_s` trace column and the wall-time
//! statistics.  Restart `i` draws its initial controls from a ChaCha stream
//! keyed by `(seed, i)`, so runs are independent of restart order and of
//! the `--jobs` parallelism bound.

// Validation guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`
// they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod harness;
pub mod report;

pub use config::{parse_config, BenchConfig, InitDistribution, ProblemRef, Scheme, UInit};
pub use harness::{run_benchmark, BenchOutcome, BenchSummary, RestartRecord, RestartRun, Stat};

/// Harness-level errors, split by exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Invalid configuration (exit code 1).
    #[error("config error: {0}")]
    Config(String),
    /// A numerical routine failed or aborted (exit code 2).
    #[error("numeric error: {0}")]
    Numeric(#[from] qoc::Error),
    /// Reading or writing artifacts failed (exit code 3).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code for this error class: 1 config, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Numeric(_) => 2,
            BenchError::Io(_) => 3,
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::Io(io),
            other => BenchError::Io(std::io::Error::other(format!("csv: {other:?}"))),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, BenchError>;
