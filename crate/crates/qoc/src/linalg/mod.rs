// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex matrix primitives.
//!
//! All matrices in this crate are [`CMatrix`] = `ndarray::Array2<Complex64>`
//! in row-major (standard) layout; every routine here produces standard
//! layout so downstream kernels can run over contiguous slices.
//!
//! Vectorization uses the **column-stacking** convention: `vec(M)` lists the
//! columns of `M` top to bottom, so that
//!
//! ```text
//!     vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)        and        vec(U ρ U†) = (Ū ⊗ U) vec(ρ).
//! ```
//!
//! This convention is fixed repo-wide; the Liouville-space builders in
//! [`crate::model`] depend on it.

mod eig;
mod expm;
mod haar;
mod spin;

pub use eig::{expm_hermitian, hermitian_eig, EigDecomp};
pub use expm::expm_general;
pub use haar::haar_unitary;
pub use spin::{angular_momentum, SpinOps};

use ndarray::Array2;
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex matrix, row-major.
pub type CMatrix = Array2<Complex64>;

/// Shorthand complex constructor.
#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// N×N identity.
pub fn identity(n: usize) -> CMatrix {
    Array2::eye(n)
}

/// Conjugate transpose.
pub fn dagger(a: &CMatrix) -> CMatrix {
    let (r, c) = a.dim();
    Array2::from_shape_fn((c, r), |(i, j)| a[(j, i)].conj())
}

/// Dense matrix product over contiguous storage.
///
/// This is the single multiplication kernel used throughout the crate, so
/// that operation counting in [`crate::propagation`] has one choke point.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(
        k, k2,
        "matmul shape mismatch: ({n}×{k}) · ({k2}×{m})"
    );
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let a_sl = a_std.as_slice().expect("standard layout");
    let b_sl = b_std.as_slice().expect("standard layout");
    let mut out = vec![Complex64::new(0.0, 0.0); n * m];
    for i in 0..n {
        let o_row = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a_sl[i * k + kk];
            let b_row = &b_sl[kk * m..(kk + 1) * m];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

/// Trace of a square matrix.
pub fn trace(a: &CMatrix) -> Complex64 {
    a.diag().sum()
}

/// `tr(A·B)` without forming the product (O(n²) instead of O(n³)).
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "trace_product inner dims: {k} vs {k2}");
    assert_eq!(n, m, "trace_product result not square: {n}×{m}");
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..k {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Frobenius norm.
pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry magnitude.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest element of |A − A†|; zero for exactly Hermitian input.
pub fn hermiticity_deviation(a: &CMatrix) -> f64 {
    let (r, c) = a.dim();
    if r != c {
        return f64::INFINITY;
    }
    let mut dev: f64 = 0.0;
    for i in 0..r {
        for j in i..c {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Kronecker product, dimension (rA·rB)×(cA·cB).
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for ia in 0..ra {
        for ja in 0..ca {
            let aij = a[(ia, ja)];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for ib in 0..rb {
                for jb in 0..cb {
                    out[(ia * rb + ib, ja * cb + jb)] = aij * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Column-stacking vectorization: an r×c matrix becomes an (r·c)×1 column.
pub fn vectorize(m: &CMatrix) -> CMatrix {
    let (r, c) = m.dim();
    let mut out = Array2::zeros((r * c, 1));
    for j in 0..c {
        for i in 0..r {
            out[(j * r + i, 0)] = m[(i, j)];
        }
    }
    out
}

/// Inverse of [`vectorize`]: reshape an (r·c)×1 column back to r×c.
pub fn devectorize(v: &CMatrix, rows: usize, cols: usize) -> Result<CMatrix> {
    let (len, w) = v.dim();
    if w != 1 || len != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "devectorize expects ({}×1), got ({len}×{w})",
            rows * cols
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = v[(j * rows + i, 0)];
        }
    }
    Ok(out)
}

/// The three Pauli matrices plus the 2×2 identity, in one place.
pub mod pauli {
    use super::{c64, CMatrix};
    use ndarray::array;

    pub fn id() -> CMatrix {
        array![[c64(1., 0.), c64(0., 0.)], [c64(0., 0.), c64(1., 0.)]]
    }
    pub fn x() -> CMatrix {
        array![[c64(0., 0.), c64(1., 0.)], [c64(1., 0.), c64(0., 0.)]]
    }
    pub fn y() -> CMatrix {
        array![[c64(0., 0.), c64(0., -1.)], [c64(0., 1.), c64(0., 0.)]]
    }
    pub fn z() -> CMatrix {
        array![[c64(1., 0.), c64(0., 0.)], [c64(0., 0.), c64(-1., 0.)]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_complex(rng: &mut impl Rng, r: usize, c: usize) -> CMatrix {
        Array2::from_shape_fn((r, c), |_| c64(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    #[test]
    fn matmul_matches_ndarray_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, k, m) in &[(1usize, 1usize, 1usize), (2, 3, 4), (5, 5, 5), (7, 2, 9)] {
            let a = random_complex(&mut rng, n, k);
            let b = random_complex(&mut rng, k, m);
            let ours = matmul(&a, &b);
            let mut reference = Array2::zeros((n, m));
            for i in 0..n {
                for j in 0..m {
                    let mut s = c64(0., 0.);
                    for kk in 0..k {
                        s += a[(i, kk)] * b[(kk, j)];
                    }
                    reference[(i, j)] = s;
                }
            }
            let diff: CMatrix = &ours - &reference;
            assert!(frobenius(&diff) < 1e-13);
        }
    }

    #[test]
    fn dagger_involution_and_product_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_complex(&mut rng, 4, 4);
        let b = random_complex(&mut rng, 4, 4);
        let dd: CMatrix = &dagger(&dagger(&a)) - &a;
        assert!(frobenius(&dd) == 0.0);
        // (AB)† = B†A†
        let lhs = dagger(&matmul(&a, &b));
        let rhs = matmul(&dagger(&b), &dagger(&a));
        let diff: CMatrix = &lhs - &rhs;
        assert!(frobenius(&diff) < 1e-13);
    }

    #[test]
    fn trace_product_agrees_with_full_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_complex(&mut rng, 6, 6);
        let b = random_complex(&mut rng, 6, 6);
        let direct = trace(&matmul(&a, &b));
        let lazy = trace_product(&a, &b);
        assert!((direct - lazy).norm() < 1e-12);
    }

    #[test]
    fn kron_pauli_zz_is_diagonal_signs() {
        let zz = kron(&pauli::z(), &pauli::z());
        let expect = array![
            [c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(0., 0.)],
            [c64(0., 0.), c64(-1., 0.), c64(0., 0.), c64(0., 0.)],
            [c64(0., 0.), c64(0., 0.), c64(-1., 0.), c64(0., 0.)],
            [c64(0., 0.), c64(0., 0.), c64(0., 0.), c64(1., 0.)]
        ];
        let diff: CMatrix = &zz - &expect;
        assert!(frobenius(&diff) == 0.0);
    }

    #[test]
    fn kron_identity_left_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_complex(&mut rng, 3, 3);
        let ia = kron(&identity(2), &a);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(ia[(i, j)], a[(i, j)]);
                assert_eq!(ia[(3 + i, 3 + j)], a[(i, j)]);
                assert_eq!(ia[(i, 3 + j)], c64(0., 0.));
                assert_eq!(ia[(3 + i, j)], c64(0., 0.));
            }
        }
    }

    #[test]
    fn kron_trace_identity_for_conjugate_pair() {
        // tr(Ā ⊗ A) = |tr A|², the identity behind the phase-insensitive gate fidelity.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_complex(&mut rng, 4, 4);
        let abar = a.mapv(|z| z.conj());
        let lhs = trace(&kron(&abar, &a));
        let t = trace(&a);
        assert!((lhs - c64(t.norm_sqr(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn vectorize_column_stacking_order() {
        let m = array![[c64(1., 0.), c64(3., 0.)], [c64(2., 0.), c64(4., 0.)]];
        let v = vectorize(&m);
        for (i, want) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            assert_eq!(v[(i, 0)], c64(*want, 0.));
        }
        let back = devectorize(&v, 2, 2).unwrap();
        let diff: CMatrix = &back - &m;
        assert!(frobenius(&diff) == 0.0);
    }

    #[test]
    fn vec_of_sandwich_matches_kron_identity() {
        // vec(AρB) = (Bᵀ ⊗ A) vec(ρ), the defining property of the convention.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_complex(&mut rng, 3, 3);
        let b = random_complex(&mut rng, 3, 3);
        let rho = random_complex(&mut rng, 3, 3);
        let lhs = vectorize(&matmul(&matmul(&a, &rho), &b));
        let rhs = matmul(&kron(&b.t().to_owned(), &a), &vectorize(&rho));
        let diff: CMatrix = &lhs - &rhs;
        assert!(frobenius(&diff) < 1e-12);
    }

    #[test]
    fn vec_of_unitary_conjugation_uses_conjugate_kron() {
        // vec(UρU†) = (Ū ⊗ U) vec(ρ).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = haar_unitary(3, &mut rng);
        let rho = random_complex(&mut rng, 3, 3);
        let lhs = vectorize(&matmul(&matmul(&u, &rho), &dagger(&u)));
        let ubar = u.mapv(|z| z.conj());
        let rhs = matmul(&kron(&ubar, &u), &vectorize(&rho));
        let diff: CMatrix = &lhs - &rhs;
        assert!(frobenius(&diff) < 1e-12);
    }

    #[test]
    fn devectorize_rejects_bad_shape() {
        let v = Array2::zeros((5, 1));
        assert!(devectorize(&v, 2, 2).is_err());
    }
}
