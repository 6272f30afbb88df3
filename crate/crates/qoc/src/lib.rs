// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Quantum optimal control for bilinear systems.
//!
//! This crate synthesizes piecewise-constant control pulses for systems of
//! the form
//!
//! ```text
//!     Ẋ(t) = −(A + Σ_j u_j(t) B_j) X(t)
//! ```
//!
//! covering closed systems (A = iH_d, B_j = iH_j with Hermitian H) and open
//! Markovian systems in Liouville space (A = iĤ + Γ). Controls are constant
//! over M slices of duration Δt, so the evolution is a product of slice
//! propagators X_k = exp(−Δt A_u(t_k)).
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] — dense complex matrix kernels: Hermitian eigendecomposition,
//!   matrix exponentials, Kronecker products, Haar-random unitaries, spin
//!   operators, vectorization.
//! * [`model`] — problem statement layer: bilinear systems, control grids,
//!   task boundary conditions, fidelity functions and their per-slice
//!   gradient assembly.
//! * [`propagation`] — slice exponentials with lazy caching, forward/backward
//!   product maintenance, block collapsing, and operation counting.
//! * [`gradient`] — per-slice propagator derivatives ∂X_k/∂u_j by four
//!   methods (exact spectral, first-order approximation, commutator series,
//!   finite differences).
//! * [`optimize`] — sequential (Krotov-type), concurrent (GRAPE-type with
//!   BFGS/L-BFGS), hybrid-block, and handover update schemes with adaptive
//!   step sizes and stopping criteria.
//! * [`problems`] — the built-in benchmark problem catalogue (spin chains,
//!   an NV-centre spin system, driven spin-j systems) with standard targets.

// Validation guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`
// they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gradient;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod problems;
pub mod propagation;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix required to be Hermitian was not, beyond tolerance.
    #[error("matrix not Hermitian: max |H - H†| element = {deviation:.3e}")]
    NonHermitian { deviation: f64 },
    /// An iterative kernel exceeded its iteration cap.
    #[error("no convergence after {iterations} iterations in {context}")]
    NoConvergence {
        iterations: usize,
        context: &'static str,
    },
    /// Operand shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A numeric result was non-finite or a linear solve broke down.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Unknown built-in problem id.
    #[error("unknown problem id {0} (valid ids are 1..=23)")]
    UnknownProblem(usize),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
