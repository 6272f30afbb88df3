// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Benchmark configuration: the TOML file format, the scheme grammar, and
//! loading of catalog or file-defined problems.
//!
//! A minimal config is two lines plus the mandatory seed:
//!
//! ```toml
//! problem = 1
//! scheme = "grape-bfgs"
//! seed = 42
//! ```
//!
//! Unknown keys are rejected (typos must not silently change a benchmark),
//! and every config round-trips: [`BenchConfig::canonical_toml`] emits a
//! form that reparses to an equal value.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use qoc::linalg::{c64, dagger, hermiticity_deviation, identity, matmul, max_abs, CMatrix};
use qoc::model::{build_boundary, BilinearSystem, Representation, TaskKind};
use qoc::optimize::{StoppingCriteria, SubspaceSchedule, UpdateRule};
use qoc::problems::{build_problem, ProblemInstance};

use crate::{BenchError, Result};

/// Hermiticity / unitarity slack for matrices read from problem files;
/// generous against decimal-literal rounding but far below any physical
/// coefficient.
const MATRIX_TOL: f64 = 1e-8;

/// Update rule inside a hybrid scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    FirstOrder,
    Bfgs,
    Lbfgs,
}

impl RuleKind {
    fn as_str(self) -> &'static str {
        match self {
            RuleKind::FirstOrder => "first-order",
            RuleKind::Bfgs => "bfgs",
            RuleKind::Lbfgs => "lbfgs",
        }
    }

    fn rule(self) -> UpdateRule {
        match self {
            RuleKind::FirstOrder => UpdateRule::first_order(),
            RuleKind::Bfgs => UpdateRule::Bfgs,
            RuleKind::Lbfgs => UpdateRule::lbfgs_default(),
        }
    }
}

impl FromStr for RuleKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "first-order" => Ok(RuleKind::FirstOrder),
            "bfgs" => Ok(RuleKind::Bfgs),
            "lbfgs" => Ok(RuleKind::Lbfgs),
            other => Err(BenchError::Config(format!(
                "unknown update rule {other:?} (expected first-order, bfgs, or lbfgs)"
            ))),
        }
    }
}

/// An optimization scheme, written in configs and on the command line as
/// `krotov`, `grape-bfgs`, `grape-lbfgs`, `hybrid(n,s_limit,rule)`, or
/// `handover(threshold,first,second)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// Sequential slice-by-slice first-order updates.
    Krotov,
    /// Concurrent full-grid updates with dense BFGS.
    GrapeBfgs,
    /// Concurrent full-grid updates with limited-memory BFGS.
    GrapeLbfgs,
    /// Blocks of `block` slices, up to `s_limit` steps per visit.
    Hybrid {
        block: usize,
        s_limit: usize,
        rule: RuleKind,
    },
    /// Run `first` until `threshold` fidelity, then continue with
    /// `second`.  Legs must themselves be non-handover schemes.
    Handover {
        threshold: f64,
        first: Box<Scheme>,
        second: Box<Scheme>,
    },
}

/// Splits on commas that are not nested inside parentheses.
fn split_args(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// The inner `…` of `name(…)`, if `s` has exactly that shape.
fn call_args<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(name)?;
    let rest = rest.strip_prefix('(')?;
    rest.strip_suffix(')')
}

impl FromStr for Scheme {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "krotov" => return Ok(Scheme::Krotov),
            "grape-bfgs" => return Ok(Scheme::GrapeBfgs),
            "grape-lbfgs" => return Ok(Scheme::GrapeLbfgs),
            _ => {}
        }
        if let Some(args) = call_args(s, "hybrid") {
            let parts = split_args(args);
            if parts.len() != 3 {
                return Err(BenchError::Config(format!(
                    "hybrid takes (block,s_limit,rule), got {s:?}"
                )));
            }
            let block = parts[0].trim().parse::<usize>().map_err(|e| {
                BenchError::Config(format!("hybrid block size {:?}: {e}", parts[0].trim()))
            })?;
            let s_limit = parts[1].trim().parse::<usize>().map_err(|e| {
                BenchError::Config(format!("hybrid step limit {:?}: {e}", parts[1].trim()))
            })?;
            let rule = parts[2].parse::<RuleKind>()?;
            return Ok(Scheme::Hybrid {
                block,
                s_limit,
                rule,
            });
        }
        if let Some(args) = call_args(s, "handover") {
            let parts = split_args(args);
            if parts.len() != 3 {
                return Err(BenchError::Config(format!(
                    "handover takes (threshold,first,second), got {s:?}"
                )));
            }
            let threshold = parts[0].trim().parse::<f64>().map_err(|e| {
                BenchError::Config(format!("handover threshold {:?}: {e}", parts[0].trim()))
            })?;
            let first = Box::new(parts[1].parse::<Scheme>()?);
            let second = Box::new(parts[2].parse::<Scheme>()?);
            return Ok(Scheme::Handover {
                threshold,
                first,
                second,
            });
        }
        Err(BenchError::Config(format!(
            "unknown scheme {s:?} (expected krotov, grape-bfgs, grape-lbfgs, \
             hybrid(n,s_limit,rule), or handover(threshold,first,second))"
        )))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Krotov => f.write_str("krotov"),
            Scheme::GrapeBfgs => f.write_str("grape-bfgs"),
            Scheme::GrapeLbfgs => f.write_str("grape-lbfgs"),
            Scheme::Hybrid {
                block,
                s_limit,
                rule,
            } => write!(f, "hybrid({block},{s_limit},{})", rule.as_str()),
            Scheme::Handover {
                threshold,
                first,
                second,
            } => write!(f, "handover({threshold},{first},{second})"),
        }
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Scheme {
    /// Rejects degenerate parameters and nested handovers.
    pub fn validate(&self) -> Result<()> {
        match self {
            Scheme::Hybrid { block, s_limit, .. } => {
                if *block == 0 || *s_limit == 0 {
                    return Err(BenchError::Config(
                        "hybrid block size and step limit must be at least 1".into(),
                    ));
                }
            }
            Scheme::Handover {
                threshold,
                first,
                second,
            } => {
                if !(*threshold > 0.0 && *threshold <= 1.0) {
                    return Err(BenchError::Config(format!(
                        "handover threshold must lie in (0, 1], got {threshold}"
                    )));
                }
                for leg in [first.as_ref(), second.as_ref()] {
                    if matches!(leg, Scheme::Handover { .. }) {
                        return Err(BenchError::Config(
                            "handover legs cannot themselves be handovers".into(),
                        ));
                    }
                    leg.validate()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Schedule and update rule for a non-handover scheme.
    pub fn leg(&self) -> Option<(SubspaceSchedule, UpdateRule)> {
        match self {
            Scheme::Krotov => Some((SubspaceSchedule::sequential(), UpdateRule::first_order())),
            Scheme::GrapeBfgs => Some((SubspaceSchedule::concurrent(), UpdateRule::Bfgs)),
            Scheme::GrapeLbfgs => Some((SubspaceSchedule::concurrent(), UpdateRule::lbfgs_default())),
            Scheme::Hybrid {
                block,
                s_limit,
                rule,
            } => Some((SubspaceSchedule::block(*block, *s_limit), rule.rule())),
            Scheme::Handover { .. } => None,
        }
    }

    /// Base stopping criteria before config overrides: concurrent schemes
    /// get the 3000-iteration default, everything that iterates over
    /// subspaces (sequential, hybrid, handover) the 300000 micro-iteration
    /// default.
    pub fn default_stop(&self) -> StoppingCriteria {
        match self {
            Scheme::GrapeBfgs | Scheme::GrapeLbfgs => StoppingCriteria::concurrent_default(),
            _ => StoppingCriteria::sequential_default(),
        }
    }
}

/// Distribution of the random initial control amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDistribution {
    /// Normal(mean, std) — the benchmark default.
    Gaussian,
    /// Uniform on `mean ± √3·std`, which has the same mean and standard
    /// deviation as the Gaussian option.
    Uniform,
}

/// Initial-pulse statistics: amplitudes are drawn i.i.d. per slice and
/// control channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UInit {
    pub mean: f64,
    pub std: f64,
    pub distribution: InitDistribution,
}

impl Default for UInit {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            distribution: InitDistribution::Gaussian,
        }
    }
}

/// Optional overrides of the scheme's default stopping criteria.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_control_change: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_cap: Option<f64>,
}

impl StopOverrides {
    /// Applies the overrides on top of `base`.
    pub fn apply(&self, mut base: StoppingCriteria) -> StoppingCriteria {
        if let Some(v) = self.f_target {
            base.f_target = v;
        }
        if let Some(v) = self.max_iters {
            base.max_iters = v;
        }
        if let Some(v) = self.df_threshold {
            base.df_threshold = v;
        }
        if let Some(v) = self.min_control_change {
            base.min_control_change = v;
        }
        if let Some(v) = self.gradient_floor {
            base.gradient_floor = v;
        }
        if let Some(v) = self.wall_clock_cap {
            base.wall_clock_cap = Some(v);
        }
        base
    }
}

/// Amplitude bounds for constrained optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

/// Which problem to benchmark: a catalog id or a TOML problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Id(usize),
    Path(String),
}

impl fmt::Display for ProblemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemRef::Id(id) => write!(f, "{id}"),
            ProblemRef::Path(p) => f.write_str(p),
        }
    }
}

fn default_restarts() -> usize {
    20
}

fn default_jobs() -> usize {
    1
}

/// One benchmark: a problem, a scheme, and the restart protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Catalog id (1..=23) or path to a problem file.
    pub problem: ProblemRef,
    pub scheme: Scheme,
    /// Number of independent restarts (default 20).
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Master seed; restart `i` derives its own stream from `(seed, i)`.
    pub seed: u64,
    /// Seed for random-matrix targets; defaults to the problem id so the
    /// target is a fixed property of the problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_seed: Option<u64>,
    #[serde(default)]
    pub u_init: UInit,
    #[serde(default)]
    pub stop: StopOverrides,
    /// Optional amplitude bounds; initial pulses are clipped into them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<Bounds>,
    /// Restart-level parallelism bound (default 1); has no effect on the
    /// outputs.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl BenchConfig {
    /// A config with all protocol defaults for the given problem/scheme.
    pub fn new(problem: ProblemRef, scheme: Scheme, seed: u64) -> Self {
        Self {
            problem,
            scheme,
            restarts: default_restarts(),
            seed,
            target_seed: None,
            u_init: UInit::default(),
            stop: StopOverrides::default(),
            constrained: None,
            jobs: default_jobs(),
        }
    }

    /// Rejects invalid field combinations.
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(BenchError::Config("restarts must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(BenchError::Config("jobs must be at least 1".into()));
        }
        if !(self.u_init.std > 0.0) || !self.u_init.std.is_finite() {
            return Err(BenchError::Config(format!(
                "u_init.std must be positive and finite, got {}",
                self.u_init.std
            )));
        }
        if !self.u_init.mean.is_finite() {
            return Err(BenchError::Config("u_init.mean must be finite".into()));
        }
        if let Some(b) = &self.constrained {
            if !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                return Err(BenchError::Config(format!(
                    "constrained bounds need lo < hi and finite, got [{}, {}]",
                    b.lo, b.hi
                )));
            }
        }
        self.scheme.validate()?;
        let stop = self.stop.apply(self.scheme.default_stop());
        for (name, v) in [
            ("df_threshold", stop.df_threshold),
            ("min_control_change", stop.min_control_change),
            ("gradient_floor", stop.gradient_floor),
        ] {
            if !(v > 0.0) {
                return Err(BenchError::Config(format!("stop.{name} must be positive")));
            }
        }
        if stop.f_target > 1.0 {
            return Err(BenchError::Config("stop.f_target cannot exceed 1".into()));
        }
        if let Some(cap) = stop.wall_clock_cap {
            if !(cap > 0.0) {
                return Err(BenchError::Config(
                    "stop.wall_clock_cap must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Fully resolved stopping criteria (scheme default plus overrides).
    pub fn stopping(&self) -> StoppingCriteria {
        self.stop.apply(self.scheme.default_stop())
    }

    /// Canonical TOML form; reparsing it yields an equal config.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// Parses and validates a config document, reporting unknown keys and
/// malformed values with the line they occur on.
pub fn parse_config(text: &str) -> Result<BenchConfig> {
    let cfg: BenchConfig =
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A complex matrix in problem files: rows of `[re, im]` pairs.
type MatrixDef = Vec<Vec<[f64; 2]>>;

/// A self-contained gate-synthesis problem definition, for benchmarking
/// systems outside the built-in catalog.  All matrices are plain (not yet
/// `i`-scaled) Hamiltonians in row-major `[re, im]` entries; the target is
/// a unitary of the same dimension, synthesized up to global phase.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub description: Option<String>,
    pub m_slices: usize,
    pub total_time: f64,
    pub drift: MatrixDef,
    pub controls: Vec<MatrixDef>,
    pub target: MatrixDef,
}

fn matrix_from_def(def: &MatrixDef, what: &str) -> Result<CMatrix> {
    let n = def.len();
    if n == 0 {
        return Err(BenchError::Config(format!("{what}: matrix is empty")));
    }
    if def.iter().any(|row| row.len() != n) {
        return Err(BenchError::Config(format!(
            "{what}: matrix must be square ({n} rows)"
        )));
    }
    Ok(CMatrix::from_shape_fn((n, n), |(i, j)| {
        c64(def[i][j][0], def[i][j][1])
    }))
}

fn require_hermitian(h: &CMatrix, what: &str) -> Result<()> {
    let dev = hermiticity_deviation(h);
    if dev > MATRIX_TOL * (1.0 + max_abs(h)) {
        return Err(BenchError::Config(format!(
            "{what}: not Hermitian (max |H − H†| element = {dev:.3e})"
        )));
    }
    Ok(())
}

impl ProblemFile {
    /// Validates the definition and builds a runnable problem (id 0).
    pub fn build(&self) -> Result<ProblemInstance> {
        if self.m_slices == 0 {
            return Err(BenchError::Config("m_slices must be at least 1".into()));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(BenchError::Config("total_time must be positive".into()));
        }
        if self.controls.is_empty() {
            return Err(BenchError::Config(
                "at least one control Hamiltonian is required".into(),
            ));
        }
        let h_d = matrix_from_def(&self.drift, "drift")?;
        require_hermitian(&h_d, "drift")?;
        let dim = h_d.nrows();
        let mut controls = Vec::with_capacity(self.controls.len());
        for (j, def) in self.controls.iter().enumerate() {
            let what = format!("controls[{j}]");
            let h = matrix_from_def(def, &what)?;
            if h.nrows() != dim {
                return Err(BenchError::Config(format!(
                    "{what}: dimension {} does not match the drift ({dim})",
                    h.nrows()
                )));
            }
            require_hermitian(&h, &what)?;
            controls.push(h);
        }
        let target = matrix_from_def(&self.target, "target")?;
        if target.nrows() != dim {
            return Err(BenchError::Config(format!(
                "target: dimension {} does not match the drift ({dim})",
                target.nrows()
            )));
        }
        let unit_dev = max_abs(&(&matmul(&dagger(&target), &target) - &identity(dim)));
        if unit_dev > MATRIX_TOL {
            return Err(BenchError::Config(format!(
                "target: not unitary (max |U†U − 1| element = {unit_dev:.3e})"
            )));
        }
        let i = c64(0.0, 1.0);
        let system = BilinearSystem::new(
            h_d.mapv(|v| v * i),
            controls.into_iter().map(|h| h.mapv(|v| v * i)).collect(),
            Representation::HilbertUnitary,
        )
        .map_err(|e| BenchError::Config(e.to_string()))?;
        let task = build_boundary(TaskKind::GatePSU, &system, &target, None)
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(ProblemInstance {
            id: 0,
            system: Arc::new(system),
            task: Arc::new(task),
            m_slices: self.m_slices,
            total_time: self.total_time,
            description: self
                .description
                .clone()
                .unwrap_or_else(|| "custom problem".into()),
        })
    }
}

/// Resolves the config's problem reference into a runnable instance.
///
/// Unknown catalog ids and invalid problem files are config errors; a
/// missing file is an I/O error.
pub fn load_problem(config: &BenchConfig) -> Result<ProblemInstance> {
    match &config.problem {
        ProblemRef::Id(id) => {
            let seed = config.target_seed.unwrap_or(*id as u64);
            build_problem(*id, seed).map_err(|e| match e {
                qoc::Error::UnknownProblem(_) => BenchError::Config(e.to_string()),
                other => BenchError::Numeric(other),
            })
        }
        ProblemRef::Path(path) => {
            let text = std::fs::read_to_string(path)?;
            let file: ProblemFile =
                toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?;
            file.build()
        }
    }
}
