// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! The built-in benchmark catalog: 23 closed-system gate-synthesis
//! problems spanning Ising-ZZ spin chains with individual, crosstalk-mixed
//! or collective controls, a completely coupled four-qubit network with a
//! cluster-generating diagonal target, a four-level NV-centre model, end
//! controlled Heisenberg-XXX quantum wires, and driven spin-3/spin-6
//! systems.
//!
//! Every problem fixes the coupling constant `J = 1`, so times are in
//! units of `1/J`.  All tasks ask for a gate up to global phase.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{
    angular_momentum, c64, haar_unitary, identity, kron, matmul, pauli, CMatrix,
};
use crate::model::{build_boundary, BilinearSystem, Representation, TaskKind, TaskSpec};
use crate::{Error, Result};

/// Pauli axis selector for [`local_operator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn matrix(self) -> CMatrix {
        match self {
            Axis::X => pauli::x(),
            Axis::Y => pauli::y(),
            Axis::Z => pauli::z(),
        }
    }
}

/// The single-site Pauli operator `1⊗…⊗σ_axis⊗…⊗1` acting on `site`
/// (1-based) of an `n_qubits` register; site 1 is the leftmost tensor
/// factor.  No `½` prefactor is applied.
pub fn local_operator(n_qubits: usize, site: usize, axis: Axis) -> Result<CMatrix> {
    if n_qubits == 0 || site == 0 || site > n_qubits {
        return Err(Error::InvalidArgument(format!(
            "site {site} outside 1..={n_qubits}"
        )));
    }
    let mut op = identity(1);
    for s in 1..=n_qubits {
        let factor = if s == site { axis.matrix() } else { pauli::id() };
        op = kron(&op, &factor);
    }
    Ok(op)
}

/// Target gates used by the benchmark catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetGate {
    /// Two-qubit controlled-NOT, first qubit controlling.
    Cnot,
    /// Discrete Fourier transform `(1/√N)·e^{+2πi jk/N}` of dimension `N`.
    Qft(usize),
    /// Haar-random unitary of dimension `dim`, drawn deterministically
    /// from `seed`.
    HaarRandom { dim: usize, seed: u64 },
    /// Diagonal four-qubit gate `exp(−i(π/2)·H_ring)` with
    /// `H_ring = ½(Z₁Z₂ + Z₂Z₃ + Z₃Z₄ + Z₄Z₁)`; applied to `|+⟩⊗⁴` it
    /// produces a ring cluster state.
    ClusterGate,
}

/// Builds the requested target as a unitary matrix.
pub fn target_gate(kind: TargetGate) -> CMatrix {
    match kind {
        TargetGate::Cnot => {
            let mut u = CMatrix::zeros((4, 4));
            u[[0, 0]] = c64(1.0, 0.0);
            u[[1, 1]] = c64(1.0, 0.0);
            u[[2, 3]] = c64(1.0, 0.0);
            u[[3, 2]] = c64(1.0, 0.0);
            u
        }
        TargetGate::Qft(n) => {
            let scale = 1.0 / (n as f64).sqrt();
            CMatrix::from_shape_fn((n, n), |(j, k)| {
                let angle = 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                Complex64::from_polar(scale, angle)
            })
        }
        TargetGate::HaarRandom { dim, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            haar_unitary(dim, &mut rng)
        }
        TargetGate::ClusterGate => {
            let h = ring_zz_hamiltonian();
            // H is diagonal, so the exponential acts entrywise on the
            // diagonal.
            let mut u = CMatrix::zeros((16, 16));
            for i in 0..16 {
                let phase = -std::f64::consts::FRAC_PI_2 * h[[i, i]].re;
                u[[i, i]] = Complex64::from_polar(1.0, phase);
            }
            u
        }
    }
}

/// `½(Z₁Z₂ + Z₂Z₃ + Z₃Z₄ + Z₄Z₁)` on four qubits: the ring that defines
/// the cluster target.
fn ring_zz_hamiltonian() -> CMatrix {
    let mut h = CMatrix::zeros((16, 16));
    for &(a, b) in &[(1, 2), (2, 3), (3, 4), (4, 1)] {
        let za = local_operator(4, a, Axis::Z).unwrap();
        let zb = local_operator(4, b, Axis::Z).unwrap();
        h = h + matmul(&za, &zb);
    }
    h.mapv(|v| v * 0.5)
}

/// One catalog entry: the system, the task, and the time grid it is
/// benchmarked on.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    /// Catalog id, 1..=23.
    pub id: usize,
    pub system: Arc<BilinearSystem>,
    pub task: Arc<TaskSpec>,
    /// Number of time slices `M`.
    pub m_slices: usize,
    /// Total evolution time `T` (units of `1/J`), so `Δt = T/M`.
    pub total_time: f64,
    pub description: String,
}

impl ProblemInstance {
    /// Slice duration `Δt = T/M`.
    pub fn dt(&self) -> f64 {
        self.total_time / self.m_slices as f64
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.system.dim
    }

    /// Number of control channels.
    pub fn n_controls(&self) -> usize {
        self.system.n_controls()
    }
}

/// Sum of `ZᵢZᵢ₊₁` nearest-neighbour couplings times `J/2` on a chain.
fn ising_chain_drift(n: usize) -> CMatrix {
    let dim = 1 << n;
    let mut h = CMatrix::zeros((dim, dim));
    for k in 1..n {
        let zk = local_operator(n, k, Axis::Z).unwrap();
        let zk1 = local_operator(n, k + 1, Axis::Z).unwrap();
        h = h + matmul(&zk, &zk1);
    }
    h.mapv(|v| v * 0.5)
}

/// Isotropic `½·Σᵢ(XᵢXᵢ₊₁ + YᵢYᵢ₊₁ + ZᵢZᵢ₊₁)` chain coupling.
fn heisenberg_chain_drift(n: usize) -> CMatrix {
    let dim = 1 << n;
    let mut h = CMatrix::zeros((dim, dim));
    for k in 1..n {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let a = local_operator(n, k, axis).unwrap();
            let b = local_operator(n, k + 1, axis).unwrap();
            h = h + matmul(&a, &b);
        }
    }
    h.mapv(|v| v * 0.5)
}

/// Individual `½σⱼˣ`, `½σⱼʸ` controls for the listed sites, interleaved
/// per site.
fn local_xy_controls(n: usize, sites: &[usize]) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(2 * sites.len());
    for &s in sites {
        for axis in [Axis::X, Axis::Y] {
            out.push(local_operator(n, s, axis).unwrap().mapv(|v| v * 0.5));
        }
    }
    out
}

/// |α⟩⟨β| + |β⟩⟨α| (x) or −i|α⟩⟨β| + i|β⟩⟨α| (y) on four levels,
/// 1-based level indices.
fn transition_operator(dim: usize, alpha: usize, beta: usize, axis: Axis) -> CMatrix {
    let mut op = CMatrix::zeros((dim, dim));
    let (a, b) = (alpha - 1, beta - 1);
    match axis {
        Axis::X => {
            op[[a, b]] = c64(1.0, 0.0);
            op[[b, a]] = c64(1.0, 0.0);
        }
        Axis::Y => {
            op[[a, b]] = c64(0.0, -1.0);
            op[[b, a]] = c64(0.0, 1.0);
        }
        Axis::Z => unreachable!("no z-type transition operators in the catalog"),
    }
    op
}

/// Lifts plain Hamiltonians into a closed-system bilinear generator set.
fn closed_system(h_drift: CMatrix, h_controls: Vec<CMatrix>) -> Result<BilinearSystem> {
    let i = c64(0.0, 1.0);
    BilinearSystem::new(
        h_drift.mapv(|v| v * i),
        h_controls.into_iter().map(|h| h.mapv(|v| v * i)).collect(),
        Representation::HilbertUnitary,
    )
}

/// Static catalog row: `(dim, M, T, target)` plus the description.
struct CatalogRow {
    dim: usize,
    m_slices: usize,
    total_time: f64,
    target: TargetGate,
    description: &'static str,
}

fn catalog_row(id: usize, target_seed: u64) -> Result<CatalogRow> {
    use TargetGate::*;
    let haar = |dim| HaarRandom {
        dim,
        seed: target_seed,
    };
    let row = match id {
        1 => CatalogRow {
            dim: 4,
            m_slices: 30,
            total_time: 2.0,
            target: Cnot,
            description: "2-spin Ising-ZZ chain, crosstalk-mixed x/y controls, CNOT",
        },
        2 => CatalogRow {
            dim: 4,
            m_slices: 40,
            total_time: 2.0,
            target: Cnot,
            description: "2-spin Ising-ZZ chain, individual x/y controls, CNOT",
        },
        3 => CatalogRow {
            dim: 4,
            m_slices: 128,
            total_time: 3.0,
            target: Cnot,
            description: "2-spin Ising-ZZ chain, individual x/y controls, CNOT",
        },
        4 => CatalogRow {
            dim: 4,
            m_slices: 64,
            total_time: 4.0,
            target: Cnot,
            description: "2-spin Ising-ZZ chain, individual x/y controls, CNOT",
        },
        5 => CatalogRow {
            dim: 8,
            m_slices: 120,
            total_time: 6.0,
            target: Qft(8),
            description: "3-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        6 => CatalogRow {
            dim: 8,
            m_slices: 140,
            total_time: 7.0,
            target: Qft(8),
            description: "3-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        7 => CatalogRow {
            dim: 16,
            m_slices: 128,
            total_time: 10.0,
            target: Qft(16),
            description: "4-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        8 => CatalogRow {
            dim: 16,
            m_slices: 128,
            total_time: 12.0,
            target: Qft(16),
            description: "4-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        9 => CatalogRow {
            dim: 16,
            m_slices: 64,
            total_time: 20.0,
            target: Qft(16),
            description: "4-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        10 => CatalogRow {
            dim: 32,
            m_slices: 300,
            total_time: 15.0,
            target: Qft(32),
            description: "5-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        11 => CatalogRow {
            dim: 32,
            m_slices: 300,
            total_time: 20.0,
            target: Qft(32),
            description: "5-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        12 => CatalogRow {
            dim: 32,
            m_slices: 64,
            total_time: 25.0,
            target: Qft(32),
            description: "5-spin Ising-ZZ chain, individual x/y controls, QFT",
        },
        13 => CatalogRow {
            dim: 16,
            m_slices: 128,
            total_time: 7.0,
            target: ClusterGate,
            description: "completely coupled 4-spin ZZ network, cluster-generating gate",
        },
        14 => CatalogRow {
            dim: 16,
            m_slices: 128,
            total_time: 12.0,
            target: ClusterGate,
            description: "completely coupled 4-spin ZZ network, cluster-generating gate",
        },
        15 => CatalogRow {
            dim: 4,
            m_slices: 40,
            total_time: 2.0,
            target: Cnot,
            description: "4-level NV-centre in the rotating frame, CNOT",
        },
        16 => CatalogRow {
            dim: 4,
            m_slices: 64,
            total_time: 5.0,
            target: Cnot,
            description: "4-level NV-centre in the rotating frame, CNOT",
        },
        17 => CatalogRow {
            dim: 32,
            m_slices: 1000,
            total_time: 125.0,
            target: Qft(32),
            description: "5-spin Ising-ZZ chain with Stark gradient, collective x/y controls, QFT",
        },
        18 => CatalogRow {
            dim: 32,
            m_slices: 1000,
            total_time: 150.0,
            target: Qft(32),
            description: "5-spin Ising-ZZ chain with Stark gradient, collective x/y controls, QFT",
        },
        19 => CatalogRow {
            dim: 32,
            m_slices: 300,
            total_time: 30.0,
            target: Qft(32),
            description: "5-spin Heisenberg-XXX chain with permanent x fields, local z controls, QFT",
        },
        20 => CatalogRow {
            dim: 8,
            m_slices: 64,
            total_time: 15.0,
            target: haar(8),
            description: "3-spin Heisenberg-XXX wire, x/y controls on the first spin, random unitary",
        },
        21 => CatalogRow {
            dim: 16,
            m_slices: 128,
            total_time: 40.0,
            target: haar(16),
            description: "4-spin Heisenberg-XXX wire, x/y controls on the first two spins, random unitary",
        },
        22 => CatalogRow {
            dim: 13,
            m_slices: 100,
            total_time: 15.0,
            target: haar(13),
            description: "driven spin-6 system, Jz²-drift with Jz/Jx controls, random unitary",
        },
        23 => CatalogRow {
            dim: 7,
            m_slices: 50,
            total_time: 5.0,
            target: haar(7),
            description: "driven spin-3 system, Jz²-drift with Jz/Jx controls, random unitary",
        },
        _ => return Err(Error::UnknownProblem(id)),
    };
    Ok(row)
}

/// Drift/control Hamiltonians for one catalog id.
fn hamiltonians(id: usize) -> Result<(CMatrix, Vec<CMatrix>)> {
    let pair = match id {
        // Two-spin chain with linear crosstalk between the drive lines:
        // the four control operators mix both spins with weights 1 / 0.1
        // and carry no ½ prefactor.
        1 => {
            let main = 1.0;
            let leak = 0.1;
            let mut controls = Vec::new();
            for axis in [Axis::X, Axis::Y] {
                let s1 = local_operator(2, 1, axis)?;
                let s2 = local_operator(2, 2, axis)?;
                controls.push(&s1.mapv(|v| v * main) + &s2.mapv(|v| v * leak));
                controls.push(&s1.mapv(|v| v * leak) + &s2.mapv(|v| v * main));
            }
            (ising_chain_drift(2), controls)
        }
        2..=4 => (ising_chain_drift(2), local_xy_controls(2, &[1, 2])),
        5 | 6 => (ising_chain_drift(3), local_xy_controls(3, &[1, 2, 3])),
        7..=9 => (ising_chain_drift(4), local_xy_controls(4, &[1, 2, 3, 4])),
        10..=12 => (
            ising_chain_drift(5),
            local_xy_controls(5, &[1, 2, 3, 4, 5]),
        ),
        // Completely coupled four-spin network: all six ZZ pairs.
        13 | 14 => {
            let mut h = CMatrix::zeros((16, 16));
            for k in 1..=3usize {
                for l in (k + 1)..=4 {
                    let zk = local_operator(4, k, Axis::Z)?;
                    let zl = local_operator(4, l, Axis::Z)?;
                    h = h + matmul(&zk, &zl);
                }
            }
            (h.mapv(|v| v * 0.5), local_xy_controls(4, &[1, 2, 3, 4]))
        }
        // Four-level NV-centre model: level energies 2π·{−134.825,
        // −4.725, 4.275, 135.275} shifted by the carrier 2π·135 on the
        // outer levels, driven on four allowed transitions with relative
        // dipole moments {1, 1/3.5, 1/1.4, 1/1.8}.
        15 | 16 => {
            let two_pi = 2.0 * std::f64::consts::PI;
            let energies = [-134.825, -4.725, 4.275, 135.275];
            let carrier_sign = [1.0, 0.0, 0.0, -1.0];
            let carrier = 135.0;
            let mut h_d = CMatrix::zeros((4, 4));
            for (i, (&e, &cs)) in energies.iter().zip(carrier_sign.iter()).enumerate() {
                h_d[[i, i]] = c64(two_pi * (e + carrier * cs), 0.0);
            }
            let transitions = [(1usize, 2usize), (1, 3), (2, 4), (3, 4)];
            let moments = [1.0, 1.0 / 3.5, 1.0 / 1.4, 1.0 / 1.8];
            let mut controls = Vec::new();
            for axis in [Axis::X, Axis::Y] {
                let mut h = CMatrix::zeros((4, 4));
                for (&(a, b), &mu) in transitions.iter().zip(moments.iter()) {
                    h = h + transition_operator(4, a, b, axis).mapv(|v| v * mu);
                }
                controls.push(h.mapv(|v| v * 0.5));
            }
            (h_d, controls)
        }
        // Stark-gradient chain: the site-dependent −(i+2)·Zᵢ terms sit
        // inside the i = 1..4 sum (spin 5 carries no permanent field) and
        // share the J/2 prefactor; two collective controls.
        17 | 18 => {
            let n = 5;
            let mut h = CMatrix::zeros((32, 32));
            for i in 1..=4usize {
                let zi = local_operator(n, i, Axis::Z)?;
                let zi1 = local_operator(n, i + 1, Axis::Z)?;
                h = h + matmul(&zi, &zi1) - zi.mapv(|v| v * (i as f64 + 2.0));
            }
            let h_d = h.mapv(|v| v * 0.5);
            let mut controls = Vec::new();
            for axis in [Axis::X, Axis::Y] {
                let mut c = CMatrix::zeros((32, 32));
                for i in 1..=n {
                    c = c + local_operator(n, i, axis)?;
                }
                controls.push(c.mapv(|v| v * 0.5));
            }
            (h_d, controls)
        }
        // XXX chain with permanent −10·Xᵢ fields inside the i = 1..4
        // coupling sum, controlled by unscaled local Z shifts.
        19 => {
            let n = 5;
            let mut h = CMatrix::zeros((32, 32));
            for i in 1..=4usize {
                for axis in [Axis::X, Axis::Y, Axis::Z] {
                    let a = local_operator(n, i, axis)?;
                    let b = local_operator(n, i + 1, axis)?;
                    h = h + matmul(&a, &b);
                }
                h = h - local_operator(n, i, Axis::X)?.mapv(|v| v * 10.0);
            }
            let h_d = h.mapv(|v| v * 0.5);
            let controls = (1..=n)
                .map(|i| local_operator(n, i, Axis::Z))
                .collect::<Result<Vec<_>>>()?;
            (h_d, controls)
        }
        20 => (heisenberg_chain_drift(3), local_xy_controls(3, &[1])),
        21 => (heisenberg_chain_drift(4), local_xy_controls(4, &[1, 2])),
        22 | 23 => {
            let j = if id == 22 { 6.0 } else { 3.0 };
            let ops = angular_momentum(j)?;
            let drift = matmul(&ops.jz, &ops.jz);
            (drift, vec![ops.jz.clone(), ops.jx.clone()])
        }
        _ => return Err(Error::UnknownProblem(id)),
    };
    Ok(pair)
}

/// Builds catalog problem `id` (1..=23).  `target_seed` only affects the
/// problems whose target is a Haar-random unitary; fixed benchmark targets
/// ignore it.
pub fn build_problem(id: usize, target_seed: u64) -> Result<ProblemInstance> {
    let row = catalog_row(id, target_seed)?;
    let (h_d, h_controls) = hamiltonians(id)?;
    let system = Arc::new(closed_system(h_d, h_controls)?);
    if system.dim != row.dim {
        return Err(Error::ShapeMismatch(format!(
            "problem {id}: built dimension {} does not match the catalog ({})",
            system.dim, row.dim
        )));
    }
    let target = target_gate(row.target);
    let task = Arc::new(build_boundary(TaskKind::GatePSU, &system, &target, None)?);
    Ok(ProblemInstance {
        id,
        system,
        task,
        m_slices: row.m_slices,
        total_time: row.total_time,
        description: row.description.to_string(),
    })
}

/// Builds catalog problem `id` with the default target seed (the id
/// itself), making random-target problems reproducible across harness
/// configurations.
pub fn build_problem_default(id: usize) -> Result<ProblemInstance> {
    build_problem(id, id as u64)
}

/// All valid catalog ids.
pub fn catalog_ids() -> std::ops::RangeInclusive<usize> {
    1..=23
}
