// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Multi-restart benchmark execution.
//!
//! Restart `i` of a benchmark with master seed `s` draws its initial pulse
//! from a ChaCha stream keyed by the pair `(s, i)`, so each restart is
//! reproducible in isolation and the set of restarts is independent of
//! execution order and of the `jobs` parallelism bound.  A restart that
//! aborts numerically records its error instead of failing the whole
//! benchmark; the summary is then marked incomplete.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qoc::linalg::CMatrix;
use qoc::model::ControlSequence;
use qoc::optimize::{handover_run, run, RunResult, StoppingCriteria, TracePoint};
use qoc::problems::ProblemInstance;

use crate::config::{load_problem, BenchConfig, InitDistribution, Scheme, UInit};
use crate::{BenchError, Result};

/// The deterministic random stream of restart `restart` under master seed
/// `seed`: the two values are packed into the 256-bit ChaCha key, so
/// distinct `(seed, restart)` pairs never share a stream.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(restart as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Draws the random initial pulse for one restart: i.i.d. amplitudes per
/// (slice, control) in row-major slice order, clipped into the bounds when
/// the benchmark is constrained.
pub fn initial_controls(
    problem: &ProblemInstance,
    u_init: &UInit,
    bounds: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<ControlSequence> {
    let m = problem.m_slices;
    let nc = problem.n_controls();
    let mut u = Array2::<f64>::zeros((m, nc));
    match u_init.distribution {
        InitDistribution::Gaussian => {
            let dist = Normal::new(u_init.mean, u_init.std)
                .map_err(|e| BenchError::Config(format!("u_init: {e}")))?;
            for k in 0..m {
                for j in 0..nc {
                    u[[k, j]] = dist.sample(rng);
                }
            }
        }
        InitDistribution::Uniform => {
            // Half-width √3·std keeps the requested standard deviation.
            let half = 3.0_f64.sqrt() * u_init.std;
            let dist = Uniform::new_inclusive(u_init.mean - half, u_init.mean + half);
            for k in 0..m {
                for j in 0..nc {
                    u[[k, j]] = dist.sample(rng);
                }
            }
        }
    }
    if let Some((lo, hi)) = bounds {
        u.mapv_inplace(|v| v.clamp(lo, hi));
    }
    ControlSequence::new(u, problem.dt(), bounds).map_err(BenchError::Numeric)
}

/// Runs `scheme` on `problem` from the given initial pulse.
pub fn execute_scheme(
    problem: &ProblemInstance,
    scheme: &Scheme,
    u0: ControlSequence,
    stop: &StoppingCriteria,
) -> qoc::Result<RunResult> {
    match scheme {
        Scheme::Handover {
            threshold,
            first,
            second,
        } => {
            let leg1 = first.leg().expect("validated: handover legs are plain schemes");
            let leg2 = second.leg().expect("validated: handover legs are plain schemes");
            handover_run(
                problem.system.clone(),
                problem.task.clone(),
                u0,
                leg1,
                *threshold,
                leg2,
                stop,
            )
        }
        plain => {
            let (schedule, rule) = plain.leg().expect("non-handover schemes have one leg");
            run(
                problem.system.clone(),
                problem.task.clone(),
                u0,
                schedule,
                rule,
                stop,
            )
        }
    }
}

/// The per-restart result record written to (and read back from) disk.
///
/// Completed restarts carry all metric fields; aborted restarts carry only
/// the error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartRecord {
    pub restart: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_eig: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_matmul: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_expm_general: Option<u64>,
}

impl RestartRecord {
    fn completed(restart: usize, result: &RunResult) -> Self {
        let last = result
            .trace
            .last()
            .expect("a run trace always holds the initial evaluation");
        Self {
            restart,
            error: None,
            final_fidelity: Some(result.final_fidelity),
            stop_reason: Some(format!("{:?}", result.stop_reason)),
            iterations: Some(last.r),
            wall_s: Some(last.elapsed_s),
            n_eig: Some(last.counters.n_eig),
            n_matmul: Some(last.counters.n_matmul),
            n_expm_general: Some(last.counters.n_expm_general),
        }
    }

    fn aborted(restart: usize, error: String) -> Self {
        Self {
            restart,
            error: Some(error),
            final_fidelity: None,
            stop_reason: None,
            iterations: None,
            wall_s: None,
            n_eig: None,
            n_matmul: None,
            n_expm_general: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

/// One restart: its record plus the full convergence trace (empty when the
/// restart aborted).
#[derive(Debug, Clone)]
pub struct RestartRun {
    pub record: RestartRecord,
    pub trace: Vec<TracePoint>,
}

/// mean/min/max of one metric over the completed restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    /// Aggregates non-empty samples; the mean is clamped into
    /// `[min, max]` so the ordering invariant survives summation
    /// round-off.
    pub fn over(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        let mean = (sum / values.len() as f64).clamp(min, max);
        Some(Self { mean, min, max })
    }
}

/// Aggregated benchmark result in the mean/min/max format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSummary {
    /// Catalog id or problem-file path.
    pub problem: String,
    /// Canonical scheme string.
    pub scheme: String,
    pub restarts: usize,
    /// Restarts that finished without a numeric abort.
    pub completed: usize,
    /// True when any restart aborted; statistics then cover the completed
    /// subset only.
    pub incomplete: bool,
    pub final_fidelity: Stat,
    pub wall_s: Stat,
    /// Eigendecompositions per restart, in thousands.
    pub kilo_eig: Stat,
    /// Dense matrix multiplications per restart, in thousands.
    pub kilo_matmul: Stat,
}

/// Builds the summary from per-restart records.  Fails when every restart
/// aborted (there is nothing to aggregate).
pub fn summarize(config: &BenchConfig, records: &[RestartRecord]) -> Result<BenchSummary> {
    let completed: Vec<&RestartRecord> = records.iter().filter(|r| r.is_complete()).collect();
    if completed.is_empty() {
        let first = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "no restarts were run".into());
        return Err(BenchError::Numeric(qoc::Error::Numeric(format!(
            "all {} restarts aborted; first error: {first}",
            records.len()
        ))));
    }
    let metric = |f: &dyn Fn(&RestartRecord) -> f64| -> Stat {
        let values: Vec<f64> = completed.iter().map(|r| f(r)).collect();
        Stat::over(&values).expect("completed set is non-empty")
    };
    Ok(BenchSummary {
        problem: config.problem.to_string(),
        scheme: config.scheme.to_string(),
        restarts: records.len(),
        completed: completed.len(),
        incomplete: completed.len() < records.len(),
        final_fidelity: metric(&|r| r.final_fidelity.unwrap()),
        wall_s: metric(&|r| r.wall_s.unwrap()),
        kilo_eig: metric(&|r| r.n_eig.unwrap() as f64 / 1000.0),
        kilo_matmul: metric(&|r| r.n_matmul.unwrap() as f64 / 1000.0),
    })
}

/// Everything a benchmark produced, ready for reporting.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub summary: BenchSummary,
    pub restarts: Vec<RestartRun>,
    /// SHA-256 of the problem matrices, identical before and after the
    /// restarts ran.
    pub fingerprint: String,
}

fn digest_matrix(hasher: &mut Sha256, m: &CMatrix) {
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        hasher.update(v.re.to_le_bytes());
        hasher.update(v.im.to_le_bytes());
    }
}

/// SHA-256 fingerprint over all matrices defining the problem, used to
/// verify the harness never mutates a problem between restarts.
pub fn problem_fingerprint(problem: &ProblemInstance) -> String {
    let mut hasher = Sha256::new();
    digest_matrix(&mut hasher, &problem.system.drift);
    for c in &problem.system.controls {
        digest_matrix(&mut hasher, c);
    }
    digest_matrix(&mut hasher, &problem.task.x0);
    digest_matrix(&mut hasher, &problem.task.xtarget);
    hasher.update(problem.task.norm_c.to_le_bytes());
    format!("{:x}", hasher.finalize())
}

fn run_one(
    problem: &ProblemInstance,
    config: &BenchConfig,
    stop: &StoppingCriteria,
    restart: usize,
) -> RestartRun {
    let mut rng = restart_rng(config.seed, restart);
    let bounds = config.constrained.map(|b| (b.lo, b.hi));
    let u0 = match initial_controls(problem, &config.u_init, bounds, &mut rng) {
        Ok(u0) => u0,
        Err(e) => {
            return RestartRun {
                record: RestartRecord::aborted(restart, e.to_string()),
                trace: Vec::new(),
            }
        }
    };
    match execute_scheme(problem, &config.scheme, u0, stop) {
        Ok(result) => RestartRun {
            record: RestartRecord::completed(restart, &result),
            trace: result.trace,
        },
        Err(e) => RestartRun {
            record: RestartRecord::aborted(restart, e.to_string()),
            trace: Vec::new(),
        },
    }
}

/// Runs a single restart by index, drawing exactly the initial pulse that
/// [`run_benchmark`] would give it.
pub fn run_one_restart(
    problem: &ProblemInstance,
    config: &BenchConfig,
    restart: usize,
) -> RestartRun {
    let stop = config.stopping();
    run_one(problem, config, &stop, restart)
}

/// Runs the full benchmark: all restarts, the problem-immutability check,
/// and aggregation.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchOutcome> {
    config.validate()?;
    let problem = load_problem(config)?;
    let stop = config.stopping();
    let fingerprint = problem_fingerprint(&problem);

    let n = config.restarts;
    let workers = config.jobs.min(n);
    let restarts: Vec<RestartRun> = if workers <= 1 {
        (0..n).map(|i| run_one(&problem, config, &stop, i)).collect()
    } else {
        let slots: Mutex<Vec<Option<RestartRun>>> = Mutex::new((0..n).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let done = run_one(&problem, config, &stop, i);
                    slots.lock().unwrap()[i] = Some(done);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every restart index was claimed by a worker"))
            .collect()
    };

    if problem_fingerprint(&problem) != fingerprint {
        return Err(BenchError::Numeric(qoc::Error::Numeric(
            "problem definition mutated during the benchmark".into(),
        )));
    }
    let records: Vec<RestartRecord> = restarts.iter().map(|r| r.record.clone()).collect();
    let summary = summarize(config, &records)?;
    Ok(BenchOutcome {
        summary,
        restarts,
        fingerprint,
    })
}

/// Cumulative dense-operation count (matrix multiplications plus
/// eigendecompositions) when `trace` first reaches fidelity `f`, if it
/// ever does.
///
/// The two schemes buy progress with different op mixes — sequential
/// updates lean on eigendecompositions, concurrent sweeps on products —
/// so a single counter is a lopsided yardstick.  Both are O(n³) dense
/// kernels of comparable constant, and their sum tracks measured wall
/// time across the suite, while staying deterministic.
pub fn effort_to_reach(trace: &[TracePoint], f: f64) -> Option<u64> {
    trace
        .iter()
        .find(|p| p.fidelity >= f)
        .map(|p| p.counters.n_matmul + p.counters.n_eig)
}

/// Mean effort over restarts to reach fidelity `f`; `None` when any
/// restart never got there.
pub fn mean_effort_to_reach(runs: &[RestartRun], f: f64) -> Option<f64> {
    let mut sum = 0.0;
    for run in runs {
        sum += effort_to_reach(&run.trace, f)? as f64;
    }
    Some(sum / runs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, ProblemRef};
    use rand::RngCore;

    fn quick_config(extra: &str) -> BenchConfig {
        parse_config(&format!(
            "problem = 1\nscheme = \"grape-bfgs\"\nseed = 11\nrestarts = 2\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn restart_streams_are_keyed_by_seed_and_index() {
        let mut a = restart_rng(5, 0);
        let mut a2 = restart_rng(5, 0);
        let mut b = restart_rng(5, 1);
        let mut c = restart_rng(6, 0);
        let (xa, xa2, xb, xc) = (
            a.next_u64(),
            a2.next_u64(),
            b.next_u64(),
            c.next_u64(),
        );
        assert_eq!(xa, xa2);
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn initial_pulse_statistics_match_the_protocol() {
        let problem = qoc::problems::build_problem_default(3).unwrap(); // 128 × 4 samples
        let u_init = UInit::default();
        let mut rng = restart_rng(1, 0);
        let u = initial_controls(&problem, &u_init, None, &mut rng).unwrap();
        let n = (u.u.nrows() * u.u.ncols()) as f64;
        let mean = u.u.sum() / n;
        let var = u.u.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        assert!(mean.abs() < 0.15, "sample mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.15, "sample std {}", var.sqrt());
    }

    #[test]
    fn uniform_initial_pulses_stay_in_range_with_matching_std() {
        let problem = qoc::problems::build_problem_default(3).unwrap();
        let u_init = UInit {
            mean: 0.0,
            std: 2.0,
            distribution: InitDistribution::Uniform,
        };
        let mut rng = restart_rng(2, 0);
        let u = initial_controls(&problem, &u_init, None, &mut rng).unwrap();
        let half = 3.0_f64.sqrt() * 2.0;
        assert!(u.u.iter().all(|&v| (-half..=half).contains(&v)));
        let n = (u.u.nrows() * u.u.ncols()) as f64;
        let mean = u.u.sum() / n;
        let var = u.u.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        assert!((var.sqrt() - 2.0).abs() < 0.3, "sample std {}", var.sqrt());
    }

    #[test]
    fn constrained_pulses_are_clipped_into_bounds() {
        let problem = qoc::problems::build_problem_default(1).unwrap();
        let u_init = UInit::default();
        let mut rng = restart_rng(3, 0);
        let u = initial_controls(&problem, &u_init, Some((-0.5, 0.5)), &mut rng).unwrap();
        assert!(u.u.iter().all(|&v| (-0.5..=0.5).contains(&v)));
        assert_eq!(u.bounds, Some((-0.5, 0.5)));
    }

    #[test]
    fn zero_iteration_budget_reports_the_initial_fidelity() {
        let cfg = quick_config("[stop]\nmax_iters = 0\n");
        let outcome = run_benchmark(&cfg).unwrap();
        assert_eq!(outcome.summary.completed, 2);
        for run in &outcome.restarts {
            assert_eq!(run.trace.len(), 1, "only the initial evaluation");
            assert_eq!(run.record.iterations, Some(0));
            assert_eq!(run.record.stop_reason.as_deref(), Some("IterBudget"));
        }
        let f0 = outcome.restarts[0].trace[0].fidelity;
        assert_eq!(outcome.restarts[0].record.final_fidelity, Some(f0));
    }

    #[test]
    fn identical_configs_reproduce_identical_outcomes() {
        let cfg = quick_config("[stop]\nmax_iters = 15\n");
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a.summary.final_fidelity, b.summary.final_fidelity);
        assert_eq!(a.summary.kilo_eig, b.summary.kilo_eig);
        assert_eq!(a.summary.kilo_matmul, b.summary.kilo_matmul);
        for (ra, rb) in a.restarts.iter().zip(b.restarts.iter()) {
            assert_eq!(ra.trace.len(), rb.trace.len());
            for (pa, pb) in ra.trace.iter().zip(rb.trace.iter()) {
                assert_eq!(pa.fidelity.to_bits(), pb.fidelity.to_bits());
                assert_eq!(pa.counters.n_eig, pb.counters.n_eig);
                assert_eq!(pa.counters.n_matmul, pb.counters.n_matmul);
            }
        }
    }

    #[test]
    fn jobs_bound_does_not_change_the_results() {
        let serial = quick_config("[stop]\nmax_iters = 10\n");
        let mut parallel = serial.clone();
        parallel.jobs = 2;
        let a = run_benchmark(&serial).unwrap();
        let b = run_benchmark(&parallel).unwrap();
        // Everything but wall time is covered by the determinism contract.
        assert_eq!(a.summary.final_fidelity, b.summary.final_fidelity);
        assert_eq!(a.summary.kilo_eig, b.summary.kilo_eig);
        assert_eq!(a.summary.kilo_matmul, b.summary.kilo_matmul);
        assert_eq!(a.summary.completed, b.summary.completed);
    }

    #[test]
    fn restarts_decorrelate_under_different_master_seeds() {
        let mut cfg = quick_config("[stop]\nmax_iters = 0\n");
        let a = run_benchmark(&cfg).unwrap();
        cfg.seed = 12;
        let b = run_benchmark(&cfg).unwrap();
        assert_ne!(
            a.summary.final_fidelity.mean,
            b.summary.final_fidelity.mean,
            "different seeds should give different initial fidelities"
        );
    }

    #[test]
    fn summaries_mark_aborted_restarts_incomplete() {
        let cfg = quick_config("");
        let ok = RestartRecord {
            restart: 0,
            error: None,
            final_fidelity: Some(0.5),
            stop_reason: Some("IterBudget".into()),
            iterations: Some(1),
            wall_s: Some(0.1),
            n_eig: Some(1000),
            n_matmul: Some(4000),
            n_expm_general: Some(0),
        };
        let bad = RestartRecord::aborted(1, "synthetic failure".into());
        let summary = summarize(&cfg, &[ok.clone(), bad.clone()]).unwrap();
        assert!(summary.incomplete);
        assert_eq!(summary.completed, 1);
        assert_eq!(summary.final_fidelity.mean, 0.5);
        assert_eq!(summary.kilo_eig.mean, 1.0);
        let all_bad = summarize(&cfg, &[bad]);
        assert!(matches!(all_bad, Err(BenchError::Numeric(_))));
    }

    #[test]
    fn stat_invariant_holds_under_aggregation() {
        let s = Stat::over(&[0.3, 0.1, 0.2]).unwrap();
        assert_eq!(s.min, 0.1);
        assert_eq!(s.max, 0.3);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert!(Stat::over(&[]).is_none());
    }

    #[test]
    fn fingerprints_distinguish_problems_and_targets() {
        let p1 = qoc::problems::build_problem_default(1).unwrap();
        let p2 = qoc::problems::build_problem_default(2).unwrap();
        assert_eq!(problem_fingerprint(&p1), problem_fingerprint(&p1));
        assert_ne!(problem_fingerprint(&p1), problem_fingerprint(&p2));
        let t20 = qoc::problems::build_problem(20, 20).unwrap();
        let t20b = qoc::problems::build_problem(20, 21).unwrap();
        assert_ne!(problem_fingerprint(&t20), problem_fingerprint(&t20b));
    }

    #[test]
    fn effort_helpers_scan_the_trace_in_order() {
        use qoc::propagation::Counters;
        let mk = |r: usize, f: f64, matmul: u64, eig: u64| TracePoint {
            r,
            fidelity: f,
            counters: Counters {
                n_eig: eig,
                n_matmul: matmul,
                n_expm_general: 0,
            },
            elapsed_s: 0.0,
        };
        let trace = vec![mk(0, 0.2, 0, 0), mk(1, 0.6, 8, 2), mk(2, 0.9, 20, 5)];
        assert_eq!(effort_to_reach(&trace, 0.5), Some(10));
        assert_eq!(effort_to_reach(&trace, 0.9), Some(25));
        assert_eq!(effort_to_reach(&trace, 0.95), None);
        let runs = vec![
            RestartRun {
                record: RestartRecord::aborted(0, "unused".into()),
                trace: trace.clone(),
            },
            RestartRun {
                record: RestartRecord::aborted(1, "unused".into()),
                trace: vec![mk(0, 0.7, 30, 0)],
            },
        ];
        assert_eq!(mean_effort_to_reach(&runs, 0.5), Some(20.0));
        assert_eq!(mean_effort_to_reach(&runs, 0.95), None);
    }

    #[test]
    fn custom_problem_configs_run_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flip.toml");
        std::fs::write(
            &path,
            r#"
            description = "single-qubit x flip"
            m_slices = 8
            total_time = 2.0
            drift = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
            controls = [[[[0.0, 0.0], [0.5, 0.0]], [[0.5, 0.0], [0.0, 0.0]]]]
            target = [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]]
            "#,
        )
        .unwrap();
        let mut cfg = BenchConfig::new(
            ProblemRef::Path(path.to_string_lossy().into_owned()),
            Scheme::GrapeBfgs,
            4,
        );
        cfg.restarts = 2;
        let outcome = run_benchmark(&cfg).unwrap();
        assert_eq!(outcome.summary.completed, 2);
        assert!(
            outcome.summary.final_fidelity.min > 0.9999,
            "single-qubit flip should be easy: {:?}",
            outcome.summary.final_fidelity
        );
    }
}
