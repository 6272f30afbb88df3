// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Problem-statement layer: bilinear systems, piecewise-constant control
//! sequences, task boundary conditions, and fidelity functions together with
//! their per-slice gradient assembly.
//!
//! A bilinear control system evolves as
//!
//! ```text
//!     Ẋ(t) = −(A + Σ_j u_j(t) B_j) X(t),
//! ```
//!
//! where `A` is the drift generator and `B_j` are the control generators.
//! Closed quantum systems take `A = iH_d`, `B_j = iH_j` with Hermitian
//! Hamiltonians; open quantum systems in Liouville space take `A = iĤ + Γ`
//! built by [`build_liouvillian`].
//!
//! Six optimization task kinds are supported, each defining its boundary
//! conditions (initial object `X_0`, target `X_{M+1}`), a normalization
//! constant `c`, and a fidelity functional.  All six share one product
//! pipeline: state vectors are stored as `N×1` matrices so that the same
//! forward/backward accumulation code serves gates, states, and maps.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;

use crate::linalg::{
    dagger, frobenius, hermiticity_deviation, identity, kron, matmul, max_abs,
    trace_product, vectorize, CMatrix,
};
use crate::{Error, Result};

/// Relative tolerance for deciding that a generator is `i` times a Hermitian
/// matrix.  Matches the tolerance used by the eigensolver's input check, so
/// that any system flagged `hermitian_generators` is guaranteed to be
/// accepted by the spectral propagation path.
const HERMITIAN_GENERATOR_RTOL: f64 = 1e-10;

/// What kind of dynamical object the system propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Unitary propagators on an `N`-dimensional Hilbert space.
    HilbertUnitary,
    /// State vectors on an `N`-dimensional Hilbert space.
    HilbertState,
    /// Closed-system dynamics lifted to Liouville space (dimension `N²`),
    /// i.e. no dissipator; generators remain `i` times Hermitian.
    LiouvilleClosed,
    /// Open-system dynamics in Liouville space with a dissipator.
    LiouvilleOpen,
}

impl Representation {
    /// True for the Liouville-space representations (matrix dimension `N²`).
    pub fn is_liouville(self) -> bool {
        matches!(
            self,
            Representation::LiouvilleClosed | Representation::LiouvilleOpen
        )
    }
}

/// A bilinear control system `Ẋ = −(A + Σ_j u_j B_j) X`.
///
/// Immutable after construction; the optimization loop only ever mutates
/// control amplitudes, never the system itself.
#[derive(Debug, Clone)]
pub struct BilinearSystem {
    /// Drift generator `A`.
    pub drift: CMatrix,
    /// Control generators `B_j`, one per control channel.
    pub controls: Vec<CMatrix>,
    /// Matrix dimension (`N` in Hilbert space, `N²` in Liouville space).
    pub dim: usize,
    /// What the system propagates.
    pub representation: Representation,
    /// True iff `A = iH_d` and every `B_j = iH_j` with `H` Hermitian.  When
    /// set, slice propagators can be computed by eigendecomposition of the
    /// Hermitian generator instead of a general matrix exponential.
    pub hermitian_generators: bool,
}

impl BilinearSystem {
    /// Validates shapes and detects whether all generators are `i` times a
    /// Hermitian matrix (within [`HERMITIAN_GENERATOR_RTOL`] relative to the
    /// largest entry).
    pub fn new(
        drift: CMatrix,
        controls: Vec<CMatrix>,
        representation: Representation,
    ) -> Result<Self> {
        let dim = drift.nrows();
        if drift.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "drift generator must be square, got {}x{}",
                drift.nrows(),
                drift.ncols()
            )));
        }
        for (j, b) in controls.iter().enumerate() {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "control generator {} is {}x{}, expected {}x{}",
                    j,
                    b.nrows(),
                    b.ncols(),
                    dim,
                    dim
                )));
            }
        }
        let hermitian_generators = is_i_times_hermitian(&drift)
            && controls.iter().all(is_i_times_hermitian);
        Ok(Self {
            drift,
            controls,
            dim,
            representation,
            hermitian_generators,
        })
    }

    /// Number of control channels `m`.
    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    /// Total generator `A + Σ_j u_j B_j` for one vector of amplitudes.
    pub fn generator(&self, u: ArrayView1<f64>) -> Result<CMatrix> {
        if u.len() != self.controls.len() {
            return Err(Error::ShapeMismatch(format!(
                "amplitude vector has {} entries for {} controls",
                u.len(),
                self.controls.len()
            )));
        }
        let mut g = self.drift.clone();
        for (uj, b) in u.iter().zip(&self.controls) {
            g.zip_mut_with(b, |a, &bv| *a += bv * *uj);
        }
        Ok(g)
    }
}

/// True if `−iG` is Hermitian within a relative tolerance, i.e. `G = iH`.
fn is_i_times_hermitian(g: &CMatrix) -> bool {
    let minus_i = Complex64::new(0.0, -1.0);
    let h = g.mapv(|v| v * minus_i);
    hermiticity_deviation(&h) <= HERMITIAN_GENERATOR_RTOL * max_abs(g).max(1.0)
}

/// Piecewise-constant control amplitudes on a uniform time grid.
///
/// Row `k` of `u` holds the amplitudes of all `m` controls during slice
/// `k + 1` of duration `dt`; the total evolution time is `T = M·dt`.
#[derive(Debug, Clone)]
pub struct ControlSequence {
    /// `M×m` amplitude grid; `u[[k, j]]` drives control `j` in slice `k+1`.
    pub u: Array2<f64>,
    /// Slice duration `Δt > 0`.
    pub dt: f64,
    /// Optional box constraint `[u_min, u_max]` applied to every amplitude.
    pub bounds: Option<(f64, f64)>,
}

impl ControlSequence {
    /// Validates `M ≥ 1`, `dt > 0`, well-ordered bounds, and (when bounds are
    /// present) that every amplitude already lies inside them.
    pub fn new(u: Array2<f64>, dt: f64, bounds: Option<(f64, f64)>) -> Result<Self> {
        if u.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "control sequence needs at least one time slice".into(),
            ));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "slice duration must be positive and finite, got {dt}"
            )));
        }
        if let Some((lo, hi)) = bounds {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "bounds must satisfy u_min < u_max, got [{lo}, {hi}]"
                )));
            }
            if u.iter().any(|&v| v < lo || v > hi) {
                return Err(Error::InvalidArgument(
                    "initial amplitudes violate the bound constraint".into(),
                ));
            }
        }
        Ok(Self { u, dt, bounds })
    }

    /// Number of time slices `M`.
    pub fn n_slices(&self) -> usize {
        self.u.nrows()
    }

    /// Number of control channels `m`.
    pub fn n_controls(&self) -> usize {
        self.u.ncols()
    }

    /// Total evolution time `T = M·dt`.
    pub fn total_time(&self) -> f64 {
        self.dt * self.u.nrows() as f64
    }

    /// Clamps every amplitude into the bound interval, if bounds are set.
    pub fn clamp_to_bounds(&mut self) {
        if let Some((lo, hi)) = self.bounds {
            self.u.mapv_inplace(|v| v.clamp(lo, hi));
        }
    }
}

/// The six supported optimization task kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Gate synthesis up to a global phase: `f = |g|`.
    GatePSU,
    /// Phase-sensitive gate synthesis: `f = Re g`.
    GateSU,
    /// Pure-state transfer `|ψ₀⟩ → |ψ_tar⟩`: `f = Re g`, `c = 1`.
    PureState,
    /// Density-matrix transfer in a closed system, evaluated by conjugation:
    /// `f = (1/c)·Re tr{ρ_tar† U ρ₀ U†}` with `c = ‖ρ_tar‖₂²`.
    DensityClosed,
    /// Dynamical-map synthesis in Liouville space: `f = Re g`, `c = N²`.
    MapOpen,
    /// State transfer in an open system: `f = Re g`, `c = N`.
    StateOpen,
}

/// Boundary conditions and normalization for one optimization task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Initial object `X_0`: `1_N`, `1_{N²}`, `|ψ₀⟩` (`N×1`), `ρ₀`, or
    /// `vec(ρ₀)` depending on the kind.
    pub x0: CMatrix,
    /// Target object `X_{M+1}` with the shape matching `x0`'s role.
    pub xtarget: CMatrix,
    /// Positive normalization constant `c` of the fidelity.
    pub norm_c: f64,
}

impl TaskSpec {
    /// Seed of the forward product chain.
    ///
    /// For most tasks this is `X_0` itself.  The conjugation task
    /// ([`TaskKind::DensityClosed`]) propagates plain operator products
    /// seeded with the identity and applies `ρ₀` inside the fidelity
    /// instead.
    pub fn forward_seed(&self) -> CMatrix {
        match self.kind {
            TaskKind::DensityClosed => identity(self.x0.nrows()),
            _ => self.x0.clone(),
        }
    }

    /// Seed of the backward product chain: `X_{M+1}†` for trace-form tasks,
    /// the identity for the conjugation task.
    pub fn backward_seed(&self) -> CMatrix {
        match self.kind {
            TaskKind::DensityClosed => identity(self.x0.nrows()),
            _ => dagger(&self.xtarget),
        }
    }
}

/// Normalized overlap and fidelity at the current controls.
#[derive(Debug, Clone, Copy)]
pub struct OverlapResult {
    /// Normalized complex overlap `g`.
    pub g: Complex64,
    /// Real fidelity derived from `g` per task kind.
    pub f: f64,
    /// `e^{−iφ_g} = g*/|g|`, the unit-modulus factor aligning the overlap
    /// with the real axis; defined as `1` when `|g| = 0` so that callers
    /// always have a deterministic ascent direction.
    pub phase_factor: Complex64,
}

/// Hamiltonian and jump operators of a Markovian master equation.
#[derive(Debug, Clone)]
pub struct LindbladSpec {
    /// Hermitian Hamiltonian `H` acting on the `N`-dimensional Hilbert space.
    pub hamiltonian: CMatrix,
    /// Jump operators with their non-negative rates `(L, γ)`.
    pub jump_ops: Vec<(CMatrix, f64)>,
}

/// Lifts a Hilbert-space Hamiltonian to its Liouville-space commutator
/// superoperator `Ĥ = 1⊗H − Hᵀ⊗1` under the column-stacking convention, so
/// that `Ĥ·vec(ρ) = vec([H, ρ])`.
pub fn lift_hamiltonian(h: &CMatrix) -> CMatrix {
    let n = h.nrows();
    let eye = identity(n);
    let left = kron(&eye, h);
    let right = kron(&h.t().to_owned(), &eye);
    left - right
}

/// Builds the Liouville-space bilinear system of a master equation
/// `ρ̇ = −i[H_u, ρ] + Σ γ (LρL† − ½{L†L, ρ})`, i.e. `vec(ρ̇) = −(iĤ_u + Γ)·vec(ρ)`.
///
/// The drift becomes `A = iĤ + Γ` with the dissipator
/// `Γ = −Σ γ (L̄⊗L − ½(1⊗L†L + (L†L)ᵀ⊗1))`; each control Hamiltonian in
/// `control_hams` is lifted to `B_j = iĤ_j` the same way.  The construction
/// preserves the trace: `vecᵀ(1_N)·(iĤ + Γ) = 0` identically.
pub fn build_liouvillian(spec: &LindbladSpec, control_hams: &[CMatrix]) -> Result<BilinearSystem> {
    let n = spec.hamiltonian.nrows();
    if spec.hamiltonian.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "Hamiltonian must be square, got {}x{}",
            spec.hamiltonian.nrows(),
            spec.hamiltonian.ncols()
        )));
    }
    let hdev = hermiticity_deviation(&spec.hamiltonian);
    if hdev > HERMITIAN_GENERATOR_RTOL * max_abs(&spec.hamiltonian).max(1.0) {
        return Err(Error::NonHermitian { deviation: hdev });
    }
    let i = Complex64::new(0.0, 1.0);
    let eye = identity(n);

    let mut drift = lift_hamiltonian(&spec.hamiltonian).mapv(|v| v * i);
    let mut dissipative = false;
    for (l, gamma) in &spec.jump_ops {
        if l.nrows() != n || l.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "jump operator is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                n,
                n
            )));
        }
        if !gamma.is_finite() || *gamma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "jump rates must be non-negative, got {gamma}"
            )));
        }
        if *gamma == 0.0 {
            continue;
        }
        dissipative = true;
        let l_conj = l.mapv(|v| v.conj());
        let ldl = matmul(&dagger(l), l);
        // Γ contribution: −γ (L̄⊗L − ½(1⊗L†L + (L†L)ᵀ⊗1)).
        let mut term = kron(&l_conj, l);
        let anticomm = kron(&eye, &ldl) + kron(&ldl.t().to_owned(), &eye);
        term.zip_mut_with(&anticomm, |t, &a| *t -= 0.5 * a);
        drift.zip_mut_with(&term, |d, &t| *d -= *gamma * t);
    }

    let controls = control_hams
        .iter()
        .map(|h| {
            if h.nrows() != n || h.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "control Hamiltonian is {}x{}, expected {}x{}",
                    h.nrows(),
                    h.ncols(),
                    n,
                    n
                )));
            }
            Ok(lift_hamiltonian(h).mapv(|v| v * i))
        })
        .collect::<Result<Vec<_>>>()?;

    let representation = if dissipative {
        Representation::LiouvilleOpen
    } else {
        Representation::LiouvilleClosed
    };
    BilinearSystem::new(drift, controls, representation)
}

/// Builds the boundary conditions and normalization for a task.
///
/// `initial` is required for the state-transfer kinds (`PureState`,
/// `DensityClosed`, `StateOpen`) and must be omitted for gate and map
/// synthesis, whose initial object is the identity.  Density matrices for
/// [`TaskKind::StateOpen`] may be passed either as `N×N` operators (they are
/// column-stacked internally) or as already-vectorized `N²×1` columns.
pub fn build_boundary(
    kind: TaskKind,
    system: &BilinearSystem,
    target: &CMatrix,
    initial: Option<&CMatrix>,
) -> Result<TaskSpec> {
    let dim = system.dim;
    let rep = system.representation;
    let expect_rep = |ok: bool| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "task kind {kind:?} is incompatible with system representation {rep:?}"
            )))
        }
    };
    let expect_shape = |m: &CMatrix, rows: usize, cols: usize, what: &str| -> Result<()> {
        if m.nrows() == rows && m.ncols() == cols {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what} is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )))
        }
    };
    let no_initial = |initial: Option<&CMatrix>| -> Result<()> {
        if initial.is_some() {
            Err(Error::InvalidArgument(format!(
                "task kind {kind:?} fixes X_0 to the identity; do not pass an initial object"
            )))
        } else {
            Ok(())
        }
    };
    fn want_initial(kind: TaskKind, initial: Option<&CMatrix>) -> Result<&CMatrix> {
        initial.ok_or_else(|| {
            Error::InvalidArgument(format!("task kind {kind:?} requires an initial object"))
        })
    }

    match kind {
        TaskKind::GatePSU | TaskKind::GateSU => {
            expect_rep(rep == Representation::HilbertUnitary)?;
            expect_shape(target, dim, dim, "target gate")?;
            no_initial(initial)?;
            Ok(TaskSpec {
                kind,
                x0: identity(dim),
                xtarget: target.clone(),
                norm_c: dim as f64,
            })
        }
        TaskKind::PureState => {
            expect_rep(matches!(
                rep,
                Representation::HilbertUnitary | Representation::HilbertState
            ))?;
            expect_shape(target, dim, 1, "target state")?;
            let psi0 = want_initial(kind, initial)?;
            expect_shape(psi0, dim, 1, "initial state")?;
            Ok(TaskSpec {
                kind,
                x0: psi0.clone(),
                xtarget: target.clone(),
                norm_c: 1.0,
            })
        }
        TaskKind::DensityClosed => {
            expect_rep(rep == Representation::HilbertUnitary)?;
            expect_shape(target, dim, dim, "target density matrix")?;
            let rho0 = want_initial(kind, initial)?;
            expect_shape(rho0, dim, dim, "initial density matrix")?;
            let nrm = frobenius(target);
            if nrm == 0.0 {
                return Err(Error::InvalidArgument(
                    "target density matrix must be nonzero".into(),
                ));
            }
            Ok(TaskSpec {
                kind,
                x0: rho0.clone(),
                xtarget: target.clone(),
                norm_c: nrm * nrm,
            })
        }
        TaskKind::MapOpen => {
            expect_rep(rep.is_liouville())?;
            expect_shape(target, dim, dim, "target map")?;
            no_initial(initial)?;
            Ok(TaskSpec {
                kind,
                x0: identity(dim),
                xtarget: target.clone(),
                norm_c: dim as f64,
            })
        }
        TaskKind::StateOpen => {
            expect_rep(rep.is_liouville())?;
            let n = (dim as f64).sqrt().round() as usize;
            if n * n != dim {
                return Err(Error::ShapeMismatch(format!(
                    "Liouville dimension {dim} is not a perfect square"
                )));
            }
            let as_column = |m: &CMatrix, what: &str| -> Result<CMatrix> {
                if m.nrows() == n && m.ncols() == n {
                    Ok(vectorize(m))
                } else if m.nrows() == dim && m.ncols() == 1 {
                    Ok(m.clone())
                } else {
                    Err(Error::ShapeMismatch(format!(
                        "{what} is {}x{}, expected {n}x{n} or {dim}x1",
                        m.nrows(),
                        m.ncols()
                    )))
                }
            };
            let rho_tar = as_column(target, "target density matrix")?;
            let rho0 = as_column(want_initial(kind, initial)?, "initial density matrix")?;
            Ok(TaskSpec {
                kind,
                x0: rho0,
                xtarget: rho_tar,
                norm_c: n as f64,
            })
        }
    }
}

/// Evaluates the normalized overlap and fidelity from a backward product
/// `back = Λ†_{M+1:κ+1}` and a forward product `fwd = X_{κ:0}` split at any
/// index `κ`.
///
/// For the trace-form tasks `g = (1/c)·tr{back·fwd}` (the trace degenerates
/// to a scalar product for vector tasks).  [`TaskKind::DensityClosed`]
/// instead receives plain propagator products (identity-seeded chains) and
/// evaluates the conjugation fidelity `f = (1/c)·Re tr{ρ_tar† U ρ₀ U†}` with
/// `U = back·fwd`; this costs three dense multiplications.
pub fn overlap(task: &TaskSpec, back: &CMatrix, fwd: &CMatrix) -> Result<OverlapResult> {
    if back.ncols() != fwd.nrows() || back.nrows() != fwd.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "backward ({}x{}) and forward ({}x{}) products do not close to a square",
            back.nrows(),
            back.ncols(),
            fwd.nrows(),
            fwd.ncols()
        )));
    }
    let g = match task.kind {
        TaskKind::DensityClosed => {
            let u = matmul(back, fwd);
            let u_rho0 = matmul(&u, &task.x0);
            let q = matmul(&dagger(&task.xtarget), &u_rho0);
            // tr{ρ_tar† U ρ₀ U†} contracted without forming U† explicitly.
            let mut acc = Complex64::new(0.0, 0.0);
            for (qv, uv) in q.iter().zip(u.iter()) {
                acc += qv * uv.conj();
            }
            acc / task.norm_c
        }
        _ => trace_product(back, fwd) / task.norm_c,
    };
    let f = match task.kind {
        TaskKind::GatePSU => g.norm(),
        _ => g.re,
    };
    let phase_factor = if g.norm() == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        g.conj() / g.norm()
    };
    Ok(OverlapResult { g, f, phase_factor })
}

/// Slice-local factors of the conjugation-task gradient, shared by all
/// controls of one slice.
///
/// With `ρ_f = F_{k−1} ρ₀ F_{k−1}†` (forward-propagated initial state),
/// `ρ_b = B_k† ρ_tar† B_k` (backward-propagated target), and the slice
/// propagator `X_k` itself, the two gradient terms become
/// `tr{dX_k·w_direct}` and `tr{w_dagger·dX_k†}`.
#[derive(Debug, Clone)]
pub struct ConjugationFactors {
    /// `ρ_f·X_k†·ρ_b`, contracted with `dX_k` by a trace product.
    pub w_direct: CMatrix,
    /// `ρ_b·X_k·ρ_f`, contracted entrywise against `conj(dX_k)`.
    pub w_dagger: CMatrix,
}

impl ConjugationFactors {
    /// Builds the factors from the plain products around slice `k`:
    /// `back = B_k = X_M⋯X_{k+1}`, the slice propagator `x_k`, and
    /// `fwd_prev = F_{k−1} = X_{k−1}⋯X_1`.  Costs eight dense
    /// multiplications.
    pub fn build(
        task: &TaskSpec,
        back: &CMatrix,
        x_k: &CMatrix,
        fwd_prev: &CMatrix,
    ) -> Result<Self> {
        if task.kind != TaskKind::DensityClosed {
            return Err(Error::InvalidArgument(
                "conjugation factors only apply to the density-transfer task".into(),
            ));
        }
        let rho_f = matmul(&matmul(fwd_prev, &task.x0), &dagger(fwd_prev));
        let back_dag = dagger(back);
        let rho_b = matmul(&matmul(&back_dag, &dagger(&task.xtarget)), back);
        let w_direct = matmul(&matmul(&rho_f, &dagger(x_k)), &rho_b);
        let w_dagger = matmul(&matmul(&rho_b, x_k), &rho_f);
        Ok(Self { w_direct, w_dagger })
    }
}

/// Assembles one component `∂f/∂u_j(t_k)` of the fidelity gradient from the
/// slice-propagator derivative `dxk = ∂X_k/∂u_j(t_k)` and the surrounding
/// products `back = Λ†_{M+1:k+1}`, `fwd_prev = X_{k−1:0}`.
///
/// Trace-form tasks evaluate `(1/c)·Re tr{phase·back·dxk·fwd_prev}`, where
/// `phase` must be the current `e^{−iφ_g}` for [`TaskKind::GatePSU`] and is
/// ignored for the phase-sensitive kinds.  [`TaskKind::DensityClosed`]
/// ignores `back`/`fwd_prev` and instead contracts the two conjugation terms
/// `(1/c)·Re[tr{dxk·w_direct} + tr{w_dagger·dxk†}]` from the precomputed
/// [`ConjugationFactors`].
pub fn slice_fidelity_gradient(
    task: &TaskSpec,
    back: &CMatrix,
    dxk: &CMatrix,
    fwd_prev: &CMatrix,
    phase_factor: Complex64,
    conjugation: Option<&ConjugationFactors>,
) -> Result<f64> {
    let c = task.norm_c;
    match task.kind {
        TaskKind::DensityClosed => {
            let factors = conjugation.ok_or_else(|| {
                Error::InvalidArgument(
                    "the density-transfer gradient requires conjugation factors".into(),
                )
            })?;
            let term1 = trace_product(dxk, &factors.w_direct);
            // tr{w_dagger·dxk†} = Σ_{il} (w_dagger)_{il}·conj(dxk_{il}).
            let mut term2 = Complex64::new(0.0, 0.0);
            for (wv, dv) in factors.w_dagger.iter().zip(dxk.iter()) {
                term2 += wv * dv.conj();
            }
            Ok((term1 + term2).re / c)
        }
        TaskKind::GatePSU => {
            let prod = matmul(back, dxk);
            Ok((phase_factor * trace_product(&prod, fwd_prev)).re / c)
        }
        _ => {
            let prod = matmul(back, dxk);
            Ok(trace_product(&prod, fwd_prev).re / c)
        }
    }
}
