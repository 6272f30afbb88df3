// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Haar-distributed random unitaries.
//!
//! Construction: fill a matrix with independent standard complex Gaussians,
//! take its QR decomposition, and multiply Q by the phases of R's diagonal.
//! The phase correction makes the factorization unique (R with positive real
//! diagonal), which is what turns "QR of a Ginibre matrix" into an exactly
//! Haar-distributed Q; without it the distribution is biased by the QR
//! routine's sign conventions.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{c64, CMatrix};

/// Draw an N×N unitary from the Haar measure using `rng`.
///
/// Deterministic for a fixed generator state; unitary within 1e-12.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    assert!(n >= 1, "haar_unitary needs n >= 1");
    // Ginibre ensemble: entries (x + iy)/√2 with x, y ~ N(0,1). The 1/√2 is
    // immaterial for the resulting Q but keeps entries unit-variance.
    let mut a = vec![c64(0., 0.); n * n];
    for z in a.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z = c64(re, im) / 2f64.sqrt();
    }

    // Householder QR, accumulating Q explicitly; `a` becomes R.
    let mut q = vec![c64(0., 0.); n * n];
    for i in 0..n {
        q[i * n + i] = c64(1., 0.);
    }
    let mut v = vec![c64(0., 0.); n];
    for k in 0..n {
        let x0 = a[k * n + k];
        let mut xnorm2 = 0.0;
        for i in k..n {
            xnorm2 += a[i * n + k].norm_sqr();
        }
        if xnorm2 == 0.0 {
            continue;
        }
        let xnorm = xnorm2.sqrt();
        let ph = if x0.norm() > 0.0 { x0 / x0.norm() } else { c64(1., 0.) };
        let alpha = -ph * xnorm;
        v[k] = x0 - alpha;
        for i in k + 1..n {
            v[i] = a[i * n + k];
        }
        let vnorm2 = xnorm2 - x0.norm_sqr() + v[k].norm_sqr();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // A ← (1 − βvv†)·A on the trailing columns.
        for j in k..n {
            let mut s = c64(0., 0.);
            for i in k..n {
                s += v[i].conj() * a[i * n + j];
            }
            let s = beta * s;
            for i in k..n {
                a[i * n + j] -= s * v[i];
            }
        }
        // Q ← Q·(1 − βvv†).
        for row in 0..n {
            let qrow = &mut q[row * n..(row + 1) * n];
            let mut s = c64(0., 0.);
            for i in k..n {
                s += qrow[i] * v[i];
            }
            let s = beta * s;
            for i in k..n {
                qrow[i] -= s * v[i].conj();
            }
        }
    }

    // Phase correction: U = Q · diag(r_kk / |r_kk|).
    let mut u = Array2::zeros((n, n));
    for col in 0..n {
        let rkk = a[col * n + col];
        let lam = if rkk.norm() > 0.0 { rkk / rkk.norm() } else { c64(1., 0.) };
        for row in 0..n {
            u[(row, col)] = q[row * n + col] * lam;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, frobenius, hermitian_eig, identity, matmul};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unitary_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &n in &[1usize, 2, 4, 8, 16, 32] {
            let u = haar_unitary(n, &mut rng);
            let uu = matmul(&dagger(&u), &u);
            let diff: crate::linalg::CMatrix = &uu - &identity(n);
            assert!(frobenius(&diff) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = haar_unitary(6, &mut ChaCha8Rng::seed_from_u64(99));
        let b = haar_unitary(6, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    /// Eigenphases of a unitary, recovered without a general eigensolver.
    ///
    /// A unitary is normal, so its Hermitian and anti-Hermitian parts
    /// commute and share an eigenbasis. A generic real combination
    /// A + t·B (A = (U+U†)/2, B = (U−U†)/2i) has a nondegenerate spectrum
    /// almost surely, and its eigenvectors diagonalize U itself; the phases
    /// are then read off the diagonal of V†UV.
    fn eigenphases(u: &CMatrix) -> Vec<f64> {
        let ud = dagger(u);
        let a: CMatrix = (u + &ud).mapv(|z| 0.5 * z);
        let b: CMatrix = (u - &ud).mapv(|z| z * crate::linalg::c64(0., -0.5));
        let combo: CMatrix = &a + &b.mapv(|z| z * 0.618_033_988_749); // irrational mix
        let eig = hermitian_eig(&combo).unwrap();
        let d = matmul(&matmul(&dagger(&eig.vectors), u), &eig.vectors);
        let n = u.nrows();
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off.max(d[(i, j)].norm());
                }
            }
        }
        assert!(off < 1e-8, "eigenbasis failed to diagonalize U (off={off:.2e})");
        (0..n).map(|i| d[(i, i)].arg()).collect()
    }

    #[test]
    fn eigenphase_histogram_uniform_chi_squared() {
        // 1000 draws at N=4 → 4000 phases. Under Haar the phases are
        // uniform on [−π,π); with 16 bins the χ² statistic (15 dof) must
        // stay below the 0.99 quantile 30.578 for the fixed seed.
        const BINS: usize = 16;
        const CHI2_CRIT_15DOF_P99: f64 = 30.578;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0usize; BINS];
        let mut total = 0usize;
        for _ in 0..1000 {
            let u = haar_unitary(4, &mut rng);
            for phi in eigenphases(&u) {
                let frac = (phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
                let bin = ((frac * BINS as f64) as usize).min(BINS - 1);
                counts[bin] += 1;
                total += 1;
            }
        }
        let expect = total as f64 / BINS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        assert!(
            chi2 < CHI2_CRIT_15DOF_P99,
            "eigenphase χ² = {chi2:.2} exceeds the p=0.01 critical value"
        );
    }

    #[test]
    fn left_invariance_statistic() {
        // Haar measure is invariant under left multiplication by a fixed
        // unitary: compare the mean |tr U| statistic between raw draws and
        // fixed·draws; they must agree within Monte-Carlo noise.
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let fixed = haar_unitary(4, &mut rng);
        let mut mean_raw = 0.0;
        let mut mean_rot = 0.0;
        let draws = 800;
        for _ in 0..draws {
            let u = haar_unitary(4, &mut rng);
            mean_raw += crate::linalg::trace(&u).norm();
            mean_rot += crate::linalg::trace(&matmul(&fixed, &u)).norm();
        }
        mean_raw /= draws as f64;
        mean_rot /= draws as f64;
        // |tr U| for Haar on U(4) has mean ≈ 0.89, σ ≈ 0.47; the two sample
        // means differ by O(σ·√2/√draws) ≈ 0.024. Allow 4σ.
        assert!(
            (mean_raw - mean_rot).abs() < 0.095,
            "left-invariance violated: {mean_raw:.3} vs {mean_rot:.3}"
        );
    }
}
