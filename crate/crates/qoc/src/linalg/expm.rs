// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! General (non-Hermitian) matrix exponential.
//!
//! Scaling-and-squaring with diagonal Padé approximants of orders
//! {3, 5, 7, 9, 13}, selected from the 1-norm against the standard backward
//! error thresholds θ_m. This is the route used for non-normal semigroup
//! generators (open-system Liouvillians), where the Hermitian eigenbasis
//! fast path does not apply.


use super::{c64, identity, matmul, CMatrix};
use crate::{Error, Result};

// Backward-error thresholds θ_m for the 1-norm (double precision).
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068e0;
const THETA_13: f64 = 5.371_920_351_148_152e0;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [
    17_297_280., 8_648_640., 1_995_840., 277_200., 25_200., 1_512., 56., 1.,
];
const B9: [f64; 10] = [
    17_643_225_600.,
    8_821_612_800.,
    2_075_673_600.,
    302_702_400.,
    30_270_240.,
    2_162_160.,
    110_880.,
    3_960.,
    90.,
    1.,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.,
    32_382_376_266_240_000.,
    7_771_770_303_897_600.,
    1_187_353_796_428_800.,
    129_060_195_264_000.,
    10_559_470_521_600.,
    670_442_572_800.,
    33_522_128_640.,
    1_323_241_920.,
    40_840_800.,
    960_960.,
    16_380.,
    182.,
    1.,
];

/// Maximum column absolute sum (induced 1-norm).
fn one_norm(a: &CMatrix) -> f64 {
    let (r, c) = a.dim();
    let mut best = 0.0f64;
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..r {
            s += a[(i, j)].norm();
        }
        best = best.max(s);
    }
    best
}

/// `e^M` for a general square complex matrix.
pub fn expm_general(m: &CMatrix) -> Result<CMatrix> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::ShapeMismatch(format!(
            "expm_general expects square input, got {r}×{c}"
        )));
    }
    if m.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("non-finite entry in expm_general input".into()));
    }
    let norm = one_norm(m);
    if norm <= THETA_9 {
        let order = if norm <= THETA_3 {
            3
        } else if norm <= THETA_5 {
            5
        } else if norm <= THETA_7 {
            7
        } else {
            9
        };
        return pade_solve(m, order);
    }

    // Scale down to ‖A/2^s‖₁ ≤ θ₁₃, apply the order-13 approximant, square back.
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
    if s > 64 {
        return Err(Error::Numeric(format!(
            "expm_general input norm {norm:.3e} too large (would need 2^{s} squarings)"
        )));
    }
    let scaled = m.mapv(|z| z / 2f64.powi(s as i32));
    let mut result = pade_solve(&scaled, 13)?;
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    if result.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("overflow while squaring in expm_general".into()));
    }
    Ok(result)
}

/// Evaluate the order-`order` diagonal Padé approximant and solve
/// (V − U)·X = (V + U).
fn pade_solve(a: &CMatrix, order: usize) -> Result<CMatrix> {
    let n = a.nrows();
    let eye = identity(n);
    let a2 = matmul(a, a);
    let (u_inner, v) = match order {
        3 => (poly(&[&eye, &a2], &B3, 1), poly(&[&eye, &a2], &B3, 0)),
        5 => {
            let a4 = matmul(&a2, &a2);
            (
                poly(&[&eye, &a2, &a4], &B5, 1),
                poly(&[&eye, &a2, &a4], &B5, 0),
            )
        }
        7 => {
            let a4 = matmul(&a2, &a2);
            let a6 = matmul(&a4, &a2);
            (
                poly(&[&eye, &a2, &a4, &a6], &B7, 1),
                poly(&[&eye, &a2, &a4, &a6], &B7, 0),
            )
        }
        9 => {
            let a4 = matmul(&a2, &a2);
            let a6 = matmul(&a4, &a2);
            let a8 = matmul(&a6, &a2);
            (
                poly(&[&eye, &a2, &a4, &a6, &a8], &B9, 1),
                poly(&[&eye, &a2, &a4, &a6, &a8], &B9, 0),
            )
        }
        13 => {
            let a4 = matmul(&a2, &a2);
            let a6 = matmul(&a4, &a2);
            // Split into low-order and A⁶-carried high-order parts to keep
            // the multiplication count at Higham's minimum.
            let u_hi = lincomb(&[&a2, &a4, &a6], &[B13[9], B13[11], B13[13]]);
            let mut u_in = matmul(&a6, &u_hi);
            u_in += &lincomb(&[&eye, &a2, &a4, &a6], &[B13[1], B13[3], B13[5], B13[7]]);
            let v_hi = lincomb(&[&a2, &a4, &a6], &[B13[8], B13[10], B13[12]]);
            let mut v = matmul(&a6, &v_hi);
            v += &lincomb(&[&eye, &a2, &a4, &a6], &[B13[0], B13[2], B13[4], B13[6]]);
            (u_in, v)
        }
        _ => unreachable!("unsupported Padé order {order}"),
    };
    let u = matmul(a, &u_inner);
    let lhs: CMatrix = &v - &u;
    let rhs: CMatrix = &v + &u;
    lu_solve(lhs, rhs)
}

/// Σ coeffs[i] · mats[i] over even/odd coefficient positions.
///
/// `parity` selects the coefficient stream: with matrices (I, A², A⁴, …),
/// parity 0 builds b₀I + b₂A² + …, parity 1 builds b₁I + b₃A² + … (the
/// caller multiplies the odd stream by A afterwards).
fn poly(mats: &[&CMatrix], b: &[f64], parity: usize) -> CMatrix {
    let coeffs: Vec<f64> = (0..mats.len()).map(|i| b[2 * i + parity]).collect();
    let refs: Vec<&CMatrix> = mats.to_vec();
    lincomb(&refs, &coeffs)
}

fn lincomb(mats: &[&CMatrix], coeffs: &[f64]) -> CMatrix {
    let mut out: CMatrix = mats[0].mapv(|z| z * coeffs[0]);
    for (m, &w) in mats.iter().zip(coeffs).skip(1) {
        out.zip_mut_with(*m, |o, &z| *o += z * w);
    }
    out
}

/// Solve A·X = B by LU with partial pivoting; consumes both operands.
fn lu_solve(mut a: CMatrix, mut b: CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let k = b.ncols();
    for col in 0..n {
        // Partial pivot.
        let mut piv = col;
        let mut piv_mag = a[(col, col)].norm();
        for r in col + 1..n {
            let mag = a[(r, col)].norm();
            if mag > piv_mag {
                piv = r;
                piv_mag = mag;
            }
        }
        if piv_mag == 0.0 {
            return Err(Error::Numeric("singular system in Padé solve".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap((col, j), (piv, j));
            }
            for j in 0..k {
                b.swap((col, j), (piv, j));
            }
        }
        let d = a[(col, col)];
        for r in col + 1..n {
            let f = a[(r, col)] / d;
            if f == c64(0., 0.) {
                continue;
            }
            for j in col..n {
                let v = a[(col, j)];
                a[(r, j)] -= f * v;
            }
            for j in 0..k {
                let v = b[(col, j)];
                b[(r, j)] -= f * v;
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        let d = a[(col, col)];
        for j in 0..k {
            let mut s = b[(col, j)];
            for jj in col + 1..n {
                s -= a[(col, jj)] * b[(jj, j)];
            }
            b[(col, j)] = s / d;
        }
    }
    Ok(b)
}
