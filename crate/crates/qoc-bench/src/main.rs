// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! `qoc-bench`: run quantum-control benchmark problems and emit traces and
//! summary tables.
//!
//! ```text
//! qoc-bench run --problem 1 --scheme grape-bfgs --seed 42 --out out/
//! qoc-bench run --config bench.toml
//! qoc-bench compare a.toml b.toml --out cmp/
//! qoc-bench list-problems
//! qoc-bench trace --problem 21 --scheme krotov --seed 1 --out trace.csv
//! ```
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric abort, 3 I/O
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qoc_bench::config::{load_problem, parse_config, BenchConfig, Bounds, ProblemRef, Scheme};
use qoc_bench::harness::{run_benchmark, run_one_restart};
use qoc_bench::report::{
    compare_summaries, render_summary_table, trace_csv_string, write_compare_outputs,
    write_run_outputs,
};
use qoc_bench::{BenchError, Result};

#[derive(Parser)]
#[command(
    name = "qoc-bench",
    about = "Benchmark harness for quantum optimal control schemes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark (a problem × scheme × restarts grid).
    Run(RunArgs),
    /// Run several configs on the same problem and tabulate side by side.
    Compare(CompareArgs),
    /// List the built-in problem catalog.
    ListProblems,
    /// Run a single restart and emit its convergence trace CSV.
    Trace(TraceArgs),
}

/// Config selection plus command-line overrides shared by `run` and
/// `trace`.  Flags win over the config file.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; optional when --problem/--scheme/--seed are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog id (1..=23) or path to a problem TOML file.
    #[arg(long)]
    problem: Option<String>,
    /// krotov | grape-bfgs | grape-lbfgs | hybrid(n,s_limit,rule) |
    /// handover(threshold,first,second)
    #[arg(long)]
    scheme: Option<String>,
    /// Number of restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Master seed (required unless the config file provides one).
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the random initial pulses.
    #[arg(long)]
    std: Option<f64>,
    /// Amplitude bounds "lo,hi"; initial pulses are clipped into them.
    #[arg(long, value_name = "LO,HI")]
    constrained: Option<String>,
    /// Wrap the scheme in handover(T, krotov, scheme): run sequential
    /// first-order updates until fidelity T, then the given scheme.
    #[arg(long, value_name = "THRESHOLD")]
    handover: Option<f64>,
    /// Parallel restart bound (does not affect results).
    #[arg(long)]
    jobs: Option<usize>,
    /// Cap on optimizer micro-iterations per restart.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for config echo, per-restart records/traces, and
    /// the summary; when omitted, only the summary table is printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more benchmark config files over the same problem.
    #[arg(required = true, num_args = 2..)]
    configs: Vec<PathBuf>,
    /// Output directory for compare.toml / compare.txt and per-config
    /// subdirectories.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Restart index whose trace to emit.
    #[arg(long, default_value_t = 0)]
    restart: usize,
    /// Output CSV file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_problem_ref(text: &str) -> ProblemRef {
    match text.parse::<usize>() {
        Ok(id) => ProblemRef::Id(id),
        Err(_) => ProblemRef::Path(text.to_string()),
    }
}

fn parse_bounds(text: &str) -> Result<Bounds> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(BenchError::Config(format!(
            "--constrained takes \"lo,hi\", got {text:?}"
        )));
    }
    let lo = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|e| BenchError::Config(format!("--constrained lo: {e}")))?;
    let hi = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|e| BenchError::Config(format!("--constrained hi: {e}")))?;
    Ok(Bounds { lo, hi })
}

impl ConfigArgs {
    /// Builds the effective config: file (if any) first, then flag
    /// overrides, then validation.
    fn resolve(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                parse_config(&text)?
            }
            None => {
                let problem = self.problem.as_deref().ok_or_else(|| {
                    BenchError::Config("either --config or --problem is required".into())
                })?;
                let scheme = self.scheme.as_deref().ok_or_else(|| {
                    BenchError::Config("either --config or --scheme is required".into())
                })?;
                let seed = self.seed.ok_or_else(|| {
                    BenchError::Config("a master --seed is required".into())
                })?;
                BenchConfig::new(parse_problem_ref(problem), scheme.parse()?, seed)
            }
        };
        if self.config.is_some() {
            if let Some(problem) = &self.problem {
                cfg.problem = parse_problem_ref(problem);
            }
            if let Some(scheme) = &self.scheme {
                cfg.scheme = scheme.parse()?;
            }
            if let Some(seed) = self.seed {
                cfg.seed = seed;
            }
        }
        if let Some(restarts) = self.restarts {
            cfg.restarts = restarts;
        }
        if let Some(std) = self.std {
            cfg.u_init.std = std;
        }
        if let Some(bounds) = &self.constrained {
            cfg.constrained = Some(parse_bounds(bounds)?);
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(max_iters) = self.max_iters {
            cfg.stop.max_iters = Some(max_iters);
        }
        if let Some(threshold) = self.handover {
            if matches!(cfg.scheme, Scheme::Handover { .. }) {
                return Err(BenchError::Config(
                    "--handover cannot wrap a scheme that is already a handover".into(),
                ));
            }
            cfg.scheme = Scheme::Handover {
                threshold,
                first: Box::new(Scheme::Krotov),
                second: Box::new(cfg.scheme),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let outcome = run_benchmark(&cfg)?;
    if let Some(dir) = &args.out {
        write_run_outputs(dir, &cfg, &outcome)?;
    }
    print!("{}", render_summary_table(std::slice::from_ref(&outcome.summary)));
    if outcome.summary.incomplete {
        for run in &outcome.restarts {
            if let Some(err) = &run.record.error {
                eprintln!("restart {} aborted: {err}", run.record.restart);
            }
        }
        return Err(BenchError::Numeric(qoc::Error::Numeric(format!(
            "{} of {} restarts aborted",
            outcome.summary.restarts - outcome.summary.completed,
            outcome.summary.restarts
        ))));
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let mut configs = Vec::with_capacity(args.configs.len());
    for path in &args.configs {
        let text = std::fs::read_to_string(path)?;
        configs.push(parse_config(&text)?);
    }
    let problem = &configs[0].problem;
    if configs.iter().any(|c| &c.problem != problem) {
        return Err(BenchError::Config(
            "compare requires all configs to target the same problem".into(),
        ));
    }
    let mut summaries = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let outcome = run_benchmark(cfg)?;
        if let Some(dir) = &args.out {
            write_run_outputs(&dir.join(format!("config_{i}")), cfg, &outcome)?;
        }
        summaries.push(outcome.summary);
    }
    let doc = compare_summaries(&summaries)?;
    if let Some(dir) = &args.out {
        write_compare_outputs(dir, &doc)?;
    }
    print!("{}", render_summary_table(&doc.rows));
    Ok(())
}

fn cmd_list_problems() -> Result<()> {
    let mut rows = vec![[
        "id".to_string(),
        "dim".to_string(),
        "slices".to_string(),
        "T".to_string(),
        "controls".to_string(),
        "description".to_string(),
    ]];
    for id in qoc::problems::catalog_ids() {
        let p = qoc::problems::build_problem_default(id).map_err(BenchError::Numeric)?;
        rows.push([
            p.id.to_string(),
            p.dim().to_string(),
            p.m_slices.to_string(),
            p.total_time.to_string(),
            p.n_controls().to_string(),
            p.description.clone(),
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    for row in &rows {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(widths.iter()) {
            if !line.is_empty() {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<w$}"));
        }
        println!("{}", line.trim_end());
    }
    Ok(())
}

fn cmd_trace(args: &TraceArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.restart >= cfg.restarts {
        return Err(BenchError::Config(format!(
            "--restart {} is outside 0..{}",
            args.restart, cfg.restarts
        )));
    }
    let problem = load_problem(&cfg)?;
    let run = run_one_restart(&problem, &cfg, args.restart);
    if let Some(err) = &run.record.error {
        return Err(BenchError::Numeric(qoc::Error::Numeric(format!(
            "restart {} aborted: {err}",
            args.restart
        ))));
    }
    let csv = trace_csv_string(&run.trace)?;
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; everything else is a
            // configuration error (exit 1).
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::ListProblems => cmd_list_problems(),
        Command::Trace(args) => cmd_trace(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
