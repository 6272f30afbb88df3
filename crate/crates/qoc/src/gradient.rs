// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Per-slice propagator derivatives `∂X_k/∂u_j(t_k)` by four methods —
//! exact spectral, standard small-`Δt` approximation, commutator series,
//! and central finite differences — together with the assembly of full
//! fidelity gradients from a [`PropagationCache`].
//!
//! For a Hermitian generator `H_u` with eigendecomposition `H_u = VΛV†`,
//! the derivative of `X = e^{−iΔt·H_u}` along a control Hamiltonian `H_j`
//! is, elementwise in the eigenbasis,
//!
//! ```text
//!     (V† ∂X V)_{lm} = (V† H_j V)_{lm} · −iΔt · e^{−iΔt(λ_l+λ_m)/2}
//!                       · sinc(Δt(λ_l−λ_m)/2),
//! ```
//!
//! which is the numerically stable form of the divided difference
//! `(e^{−iΔtλ_l} − e^{−iΔtλ_m})/(λ_l − λ_m)` and tends continuously to the
//! degenerate limit `−iΔt·e^{−iΔtλ}` as the gap closes.  This form is exact
//! in `Δt`; the other methods trade accuracy for not needing spectral data.

use ndarray::Array2;
use num_complex::Complex64;

use crate::linalg::{
    dagger, expm_general, expm_hermitian, frobenius, hermitian_eig, matmul, CMatrix, EigDecomp,
};
use crate::model::{slice_fidelity_gradient, BilinearSystem, ConjugationFactors, TaskKind};
use crate::propagation::PropagationCache;
use crate::{Error, Result};

/// Below `|λ_l−λ_m|·Δt` of this size the divided difference is evaluated by
/// its Taylor limit; the stable sinc form makes the crossover continuous to
/// machine precision rather than a hard branch.
const DEGENERACY_TOL: f64 = 1e-9;

/// Default truncation order cap of the commutator series.
const SERIES_ORDER_CAP: usize = 20;
/// Default term tolerance of the commutator series.
const SERIES_TERM_TOL: f64 = 1e-12;
/// Default step of the finite-difference derivative.
const FD_STEP: f64 = 1e-6;
/// Validity bound for the first-order open-system derivative: the
/// approximation `∂X/∂u_j ≈ −Δt·B_j·X_k` is trusted while
/// `Δt·‖A_u‖_F < 0.1` (the Frobenius norm bounds the spectral norm from
/// above, so the test is conservative).
const APPROX_VALIDITY_BOUND: f64 = 0.1;

/// How to compute per-slice propagator derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    /// Spectral formula in the generator eigenbasis; exact in `Δt`.
    /// Requires Hermitian generators.
    ExactSpectral,
    /// First-order approximation `−Δt·B_j·X_k`, valid for
    /// `Δt ≪ 1/‖A_u‖₂`.
    StandardApprox,
    /// Nested-commutator series
    /// `(Σ_n (−iΔt)^{n+1}/(n+1)!·ad_{H_u}ⁿ(H_j))·X_k`, truncated when the
    /// next term's Frobenius norm falls below `term_tol`.  Requires
    /// Hermitian generators.
    CommutatorSeries { order_cap: usize, term_tol: f64 },
    /// Central difference `(X_k(u+h) − X_k(u−h))/(2h)`.  Accuracy is
    /// h²-limited above and cancellation-limited below; the default
    /// `h = 1e-6` balances the two for `O(1)` generators.
    FiniteDifference { h: f64 },
}

impl GradientMethod {
    /// Series method with the default cap (20) and tolerance (1e-12).
    pub fn commutator_series_default() -> Self {
        GradientMethod::CommutatorSeries {
            order_cap: SERIES_ORDER_CAP,
            term_tol: SERIES_TERM_TOL,
        }
    }

    /// Finite differences with the default step 1e-6.
    pub fn finite_difference_default() -> Self {
        GradientMethod::FiniteDifference { h: FD_STEP }
    }

    /// The preferred method for a system at its current amplitudes:
    /// spectral for Hermitian generators; otherwise the first-order
    /// approximation while `Δt·‖A_u(t_k)‖_F < 0.1` holds on every slice,
    /// falling back to finite differences when it does not.  Callers should
    /// re-resolve if amplitudes grow substantially during optimization.
    pub fn default_for(cache: &mut PropagationCache) -> Result<Self> {
        if cache.system().hermitian_generators {
            return Ok(GradientMethod::ExactSpectral);
        }
        let dt = cache.dt();
        let mut worst: f64 = 0.0;
        for s in 0..cache.n_slices() {
            worst = worst.max(frobenius(cache.slice_generator(s)?));
        }
        if dt * worst < APPROX_VALIDITY_BOUND {
            Ok(GradientMethod::StandardApprox)
        } else {
            Ok(GradientMethod::finite_difference_default())
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            GradientMethod::CommutatorSeries {
                order_cap,
                term_tol,
            } => {
                if order_cap < 1 {
                    return Err(Error::InvalidArgument(
                        "commutator series order cap must be at least 1".into(),
                    ));
                }
                if !(term_tol > 0.0) {
                    return Err(Error::InvalidArgument(
                        "commutator series term tolerance must be positive".into(),
                    ));
                }
                Ok(())
            }
            GradientMethod::FiniteDifference { h } => {
                if !(h > 0.0) {
                    return Err(Error::InvalidArgument(
                        "finite-difference step must be positive".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Small-argument-safe `sin(x)/x`.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // Taylor: 1 − x²/6 + x⁴/120, next term < 1e-28 for |x| < 1e-4.
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// The spectral divided-difference factor
/// `(e^{−iΔtλ_l} − e^{−iΔtλ_m})/(λ_l − λ_m)` in its stable product form,
/// continuous through the degenerate limit `−iΔt·e^{−iΔtλ}`.
///
/// Gaps with `|λ_l−λ_m|·Δt` below [`DEGENERACY_TOL`] take the exact
/// degenerate branch; above it the sinc product form stays stable however
/// small the gap, so the crossover is continuous to ~1e-20 relative.
pub(crate) fn phase_divided_difference(lambda_l: f64, lambda_m: f64, dt: f64) -> Complex64 {
    let mean = 0.5 * (lambda_l + lambda_m);
    let head = Complex64::new(0.0, -dt) * Complex64::new(0.0, -dt * mean).exp();
    if (lambda_l - lambda_m).abs() * dt < DEGENERACY_TOL {
        head
    } else {
        head * sinc(0.5 * dt * (lambda_l - lambda_m))
    }
}

/// Exact derivative of `X = e^{−iΔt·H_u}` along a Hermitian direction
/// `H_j`, from the retained eigendecomposition of `H_u`.
///
/// `H_j` must be Hermitian and of matching dimension; degeneracies need no
/// special handling by the caller.
pub fn exact_slice_derivative(eig: &EigDecomp, hj: &CMatrix, dt: f64) -> CMatrix {
    let n = eig.dim();
    assert_eq!(
        (hj.nrows(), hj.ncols()),
        (n, n),
        "control Hamiltonian dimension mismatch"
    );
    let v = &eig.vectors;
    let h_tilde = matmul(&dagger(v), &matmul(hj, v));
    let mut k = CMatrix::zeros((n, n));
    for l in 0..n {
        for m in 0..n {
            k[[l, m]] =
                h_tilde[[l, m]] * phase_divided_difference(eig.values[l], eig.values[m], dt);
        }
    }
    matmul(v, &matmul(&k, &dagger(v)))
}

/// First-order approximation `−iΔt·H_j·X_k`, accurate to
/// `O(Δt²·‖[H_u, H_j]‖)`.
pub fn approx_slice_derivative(hj: &CMatrix, xk: &CMatrix, dt: f64) -> CMatrix {
    matmul(hj, xk).mapv(|v| v * Complex64::new(0.0, -dt))
}

/// Sum `Σ_{n=0..} (−iΔt)^{n+1}/(n+1)!·ad_{H_u}ⁿ(H_j)` of the commutator
/// series, without the trailing propagator factor.  The second return is
/// the number of nested commutators evaluated, for cost accounting (each
/// costs two dense products).
fn series_sum(
    hu: &CMatrix,
    hj: &CMatrix,
    dt: f64,
    order_cap: usize,
    term_tol: f64,
) -> Result<(CMatrix, usize)> {
    let midt = Complex64::new(0.0, -dt);
    let mut commutator = hj.clone();
    let mut coeff = midt; // (−iΔt)^{n+1}/(n+1)! at n = 0.
    let mut sum = commutator.mapv(|v| v * coeff);
    let mut converged = false;
    let mut evaluated = 0;
    for n in 1..=order_cap {
        commutator = matmul(hu, &commutator) - matmul(&commutator, hu);
        evaluated = n;
        coeff *= midt / Complex64::new((n + 1) as f64, 0.0);
        let term = commutator.mapv(|v| v * coeff);
        if frobenius(&term) < term_tol {
            converged = true;
            break;
        }
        sum += &term;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: order_cap,
            context: "commutator series for the slice derivative",
        });
    }
    Ok((sum, evaluated))
}

/// Commutator-series derivative
/// `(Σ_n (−iΔt)^{n+1}/(n+1)!·ad_{H_u}ⁿ(H_j))·e^{−iΔt·H_u}` for Hermitian
/// `H_u`, `H_j`, truncated when the next term's Frobenius norm drops below
/// `term_tol`.  Fails with a convergence error if the cap is reached first.
pub fn series_slice_derivative(
    hu: &CMatrix,
    hj: &CMatrix,
    dt: f64,
    order_cap: usize,
    term_tol: f64,
) -> Result<CMatrix> {
    GradientMethod::CommutatorSeries {
        order_cap,
        term_tol,
    }
    .validate()?;
    let (sum, _) = series_sum(hu, hj, dt, order_cap, term_tol)?;
    let eig = hermitian_eig(hu)?;
    let xk = expm_hermitian(&eig, Complex64::new(0.0, -dt))?;
    Ok(matmul(&sum, &xk))
}

/// Exponentiates one slice at a single shifted amplitude, on the system's
/// natural path.
fn propagator_at(
    system: &BilinearSystem,
    mut row: ndarray::Array1<f64>,
    dt: f64,
    j: usize,
    shift: f64,
) -> Result<CMatrix> {
    row[j] += shift;
    let gen = system.generator(row.view())?;
    if system.hermitian_generators {
        let h = gen.mapv(|v| v * Complex64::new(0.0, -1.0));
        let eig = hermitian_eig(&h)?;
        expm_hermitian(&eig, Complex64::new(0.0, -dt))
    } else {
        expm_general(&gen.mapv(|v| v * Complex64::new(-dt, 0.0)))
    }
}

/// Central-difference derivative `(X_k(u+h·e_{jk}) − X_k(u−h·e_{jk}))/(2h)`
/// of slice `k`'s propagator.
///
/// `h` trades truncation against cancellation: the error is
/// `O(h²) + O(ε/h)`, so steps far below the default 1e-6 lose accuracy
/// rather than gain it.
pub fn finite_difference_derivative(
    system: &BilinearSystem,
    controls: &crate::model::ControlSequence,
    j: usize,
    k: usize,
    h: f64,
) -> Result<CMatrix> {
    GradientMethod::FiniteDifference { h }.validate()?;
    if j >= system.n_controls() || k >= controls.n_slices() {
        return Err(Error::InvalidArgument(format!(
            "control {j} / slice {k} out of range"
        )));
    }
    let row = controls.u.row(k).to_owned();
    let xp = propagator_at(system, row.clone(), controls.dt, j, h)?;
    let xn = propagator_at(system, row, controls.dt, j, -h)?;
    Ok((xp - xn).mapv(|v| v / Complex64::new(2.0 * h, 0.0)))
}

/// Eigenbasis contraction `Re(phase·tr{G·K_j})` with
/// `K_j = Φ ⊙ (V†H_jV)`; shared by the spectral assembly paths.
fn spectral_trace(
    g_mat: &CMatrix,
    h_tilde: &CMatrix,
    values: &[f64],
    dt: f64,
    phase: Complex64,
) -> f64 {
    let n = values.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for l in 0..n {
        for m in 0..n {
            acc += g_mat[[l, m]]
                * h_tilde[[m, l]]
                * phase_divided_difference(values[m], values[l], dt);
        }
    }
    (phase * acc).re
}

/// Gradient of the fidelity with respect to all `m` amplitudes of slice
/// `s`, at the cache's current controls.
///
/// The cache must have no pending amplitude changes (refresh first).  All
/// dense square multiplications and exponential/eigendecomposition work are
/// charged to the cache's counters.
pub fn slice_gradient(
    cache: &mut PropagationCache,
    s: usize,
    method: GradientMethod,
) -> Result<Vec<f64>> {
    let phase = phase_for(cache)?;
    slice_gradient_with_phase(cache, s, method, phase)
}

/// The PSU alignment phase at the current controls (`1` for every other
/// task kind, which differentiates a plain real part).
fn phase_for(cache: &mut PropagationCache) -> Result<Complex64> {
    Ok(match cache.task().kind {
        TaskKind::GatePSU => cache.fidelity_now()?.phase_factor,
        _ => Complex64::new(1.0, 0.0),
    })
}

fn slice_gradient_with_phase(
    cache: &mut PropagationCache,
    s: usize,
    method: GradientMethod,
    phase: Complex64,
) -> Result<Vec<f64>> {
    method.validate()?;
    let system = cache.system_handle();
    let task = cache.task_handle();
    let dim = cache.dim();
    let dt = cache.dt();
    let m_ctrls = system.n_controls();
    let mut grad = vec![0.0; m_ctrls];

    let conjugation = if task.kind == TaskKind::DensityClosed {
        let (fwd, bwd) = {
            let (f, b) = cache.products_around(s)?;
            (f.clone(), b.clone())
        };
        let xk = cache.slice_propagator(s)?.clone();
        let factors = ConjugationFactors::build(&task, &bwd, &xk, &fwd)?;
        cache.charge_matmuls(8);
        Some(factors)
    } else {
        None
    };

    match method {
        GradientMethod::ExactSpectral => {
            if !system.hermitian_generators {
                return Err(Error::InvalidArgument(
                    "the spectral gradient requires Hermitian generators".into(),
                ));
            }
            let minus_i = Complex64::new(0.0, -1.0);
            if let Some(factors) = &conjugation {
                // Rotate both contraction matrices into the eigenbasis once,
                // then contract each control's K_j against them.
                let (w1, w2, values) = {
                    let eig = cache.slice_eig(s)?;
                    let v = &eig.vectors;
                    let w1 = matmul(&dagger(v), &matmul(&factors.w_direct, v));
                    let w2 = matmul(&dagger(v), &matmul(&factors.w_dagger, v));
                    (w1, w2, eig.values.clone())
                };
                let vt_hj: Vec<CMatrix> = {
                    let eig = cache.slice_eig(s)?;
                    let v = &eig.vectors;
                    system
                        .controls
                        .iter()
                        .map(|b| matmul(&dagger(v), &matmul(&b.mapv(|x| x * minus_i), v)))
                        .collect()
                };
                cache.charge_matmuls(4 + 2 * m_ctrls as u64);
                let n = values.len();
                for (j, h_tilde) in vt_hj.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for l in 0..n {
                        for mm in 0..n {
                            let k_lm = h_tilde[[l, mm]]
                                * phase_divided_difference(values[l], values[mm], dt);
                            // tr{K_j·W̃₁} + tr{W̃₂·K_j†}.
                            acc += k_lm * w1[[mm, l]] + w2[[l, mm]] * k_lm.conj();
                        }
                    }
                    grad[j] = acc.re / task.norm_c;
                }
            } else {
                let (p, p_counted) = {
                    let (fwd, bwd) = cache.products_around(s)?;
                    let counted = fwd.nrows() == dim && fwd.ncols() == dim;
                    (matmul(fwd, bwd), counted)
                };
                let (g_mat, values) = {
                    let eig = cache.slice_eig(s)?;
                    let v = &eig.vectors;
                    (matmul(&dagger(v), &matmul(&p, v)), eig.values.clone())
                };
                let vt_hj: Vec<CMatrix> = {
                    let eig = cache.slice_eig(s)?;
                    let v = &eig.vectors;
                    system
                        .controls
                        .iter()
                        .map(|b| matmul(&dagger(v), &matmul(&b.mapv(|x| x * minus_i), v)))
                        .collect()
                };
                cache.charge_matmuls(u64::from(p_counted) + 2 + 2 * m_ctrls as u64);
                for (j, h_tilde) in vt_hj.iter().enumerate() {
                    grad[j] = spectral_trace(&g_mat, h_tilde, &values, dt, phase) / task.norm_c;
                }
            }
        }
        GradientMethod::StandardApprox => {
            let xk = cache.slice_propagator(s)?.clone();
            for (j, g) in grad.iter_mut().enumerate() {
                // Generator-level form −Δt·B_j·X_k (equals −iΔt·H_j·X_k on
                // the Hermitian path, and stays valid for open systems).
                let dxk = matmul(&system.controls[j], &xk).mapv(|v| v * (-dt));
                cache.charge_matmuls(1);
                *g = assemble_one(cache, s, &dxk, phase, conjugation.as_ref())?;
            }
        }
        GradientMethod::CommutatorSeries {
            order_cap,
            term_tol,
        } => {
            if !system.hermitian_generators {
                return Err(Error::InvalidArgument(
                    "the commutator series requires Hermitian generators".into(),
                ));
            }
            let minus_i = Complex64::new(0.0, -1.0);
            let hu = cache.slice_generator(s)?.mapv(|v| v * minus_i);
            let xk = cache.slice_propagator(s)?.clone();
            for (j, g) in grad.iter_mut().enumerate() {
                let hj = system.controls[j].mapv(|v| v * minus_i);
                let (sum, commutators) = series_sum(&hu, &hj, dt, order_cap, term_tol)?;
                let dxk = matmul(&sum, &xk);
                // Two products per nested commutator, plus the trailing
                // propagator product.
                cache.charge_matmuls(2 * commutators as u64 + 1);
                *g = assemble_one(cache, s, &dxk, phase, conjugation.as_ref())?;
            }
        }
        GradientMethod::FiniteDifference { h } => {
            for (j, g) in grad.iter_mut().enumerate() {
                let dxk = {
                    let controls = cache.controls();
                    finite_difference_derivative(&system, controls, j, s, h)?
                };
                if system.hermitian_generators {
                    cache.charge_eigs(2);
                    cache.charge_matmuls(2);
                } else {
                    cache.charge_expm_general(2);
                }
                *g = assemble_one(cache, s, &dxk, phase, conjugation.as_ref())?;
            }
        }
    }
    Ok(grad)
}

/// Assembles one gradient component via the direct trace route, charging
/// the square product it performs.
fn assemble_one(
    cache: &mut PropagationCache,
    s: usize,
    dxk: &CMatrix,
    phase: Complex64,
    conjugation: Option<&ConjugationFactors>,
) -> Result<f64> {
    let task = cache.task_handle();
    let dim = cache.dim();
    let (fwd, bwd) = cache.products_around(s)?;
    let counted = conjugation.is_none() && bwd.nrows() == dim && bwd.ncols() == dim;
    let value = slice_fidelity_gradient(&task, bwd, dxk, fwd, phase, conjugation)?;
    if counted {
        cache.charge_matmuls(1);
    }
    Ok(value)
}

/// Gradient rows for an arbitrary set of slices: row `i` of the result
/// holds `∂f/∂u_j(t_{slices[i]})` for all `j`, evaluating the PSU
/// alignment phase only once.
pub fn subspace_gradient(
    cache: &mut PropagationCache,
    slices: &[usize],
    method: GradientMethod,
) -> Result<Array2<f64>> {
    let m_ctrls = cache.system().n_controls();
    let phase = phase_for(cache)?;
    let mut grid = Array2::<f64>::zeros((slices.len(), m_ctrls));
    for (i, &s) in slices.iter().enumerate() {
        let row = slice_gradient_with_phase(cache, s, method, phase)?;
        for (j, v) in row.into_iter().enumerate() {
            grid[[i, j]] = v;
        }
    }
    Ok(grid)
}

/// Full `M×m` fidelity gradient at the current amplitudes, row `s` holding
/// slice `s`'s components.  Equivalent to stacking [`slice_gradient`] over
/// all slices, but evaluates the PSU phase only once.
pub fn fidelity_gradient(
    cache: &mut PropagationCache,
    method: GradientMethod,
) -> Result<Array2<f64>> {
    let all: Vec<usize> = (0..cache.n_slices()).collect();
    subspace_gradient(cache, &all, method)
}
