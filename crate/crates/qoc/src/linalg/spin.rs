// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Angular momentum operators in the spin-j representation.

use ndarray::Array2;

use super::{c64, CMatrix};
use crate::{Error, Result};

/// The three spin-j angular momentum matrices (dimension 2j+1).
#[derive(Debug, Clone)]
pub struct SpinOps {
    /// The half-integer spin quantum number.
    pub j: f64,
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
}

/// Standard ladder-operator construction of (Jx, Jy, Jz) for spin j.
///
/// Basis ordering |j,m⟩ with m = j, j−1, …, −j (row 0 is the highest-weight
/// state), so Jz = diag(j, j−1, …, −j).
pub fn angular_momentum(j: f64) -> Result<SpinOps> {
    let two_j = 2.0 * j;
    if j < 0.0 || (two_j - two_j.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "spin j must be a nonnegative half-integer, got {j}"
        )));
    }
    let dim = two_j.round() as usize + 1;
    let mut jz = Array2::zeros((dim, dim));
    let mut jp = Array2::zeros((dim, dim)); // raising operator J₊
    for i in 0..dim {
        let m = j - i as f64;
        jz[(i, i)] = c64(m, 0.0);
        // J₊|j,m⟩ = √(j(j+1) − m(m+1)) |j,m+1⟩; |j,m+1⟩ sits at row i−1.
        if i > 0 {
            let amp = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            jp[(i - 1, i)] = c64(amp, 0.0);
        }
    }
    let jm = super::dagger(&jp);
    let jx: CMatrix = (&jp + &jm).mapv(|z| 0.5 * z);
    let jy: CMatrix = (&jp - &jm).mapv(|z| z * c64(0.0, -0.5));
    Ok(SpinOps { j, jx, jy, jz })
}
