// Copyright 2026 qoc Contributors
// SPDX-License-Identifier: Apache-2.0

//! Slice exponentials with caching, forward/backward product maintenance,
//! block collapsing for subspace updates, and operation counting.
//!
//! [`PropagationCache`] holds, for every time slice, the generator
//! `A_u(t_k)`, its propagator `X_k = e^{−Δt·A_u(t_k)}`, and (on the
//! Hermitian path) the eigendecomposition the exponential was built from, so
//! gradient evaluation can reuse it at no extra cost.  Forward products
//! `X_{k:0}` and backward products `Λ†_{M+1:k+1}` are maintained lazily
//! behind two watermarks: amplitude updates only mark slices dirty and lower
//! the watermarks; recomputation happens on demand, so a single-slice update
//! followed by a fidelity evaluation costs one eigendecomposition and a
//! small constant number of dense multiplications, independent of `M`.
//!
//! All dense matrix multiplications at the system dimension are tallied in
//! [`Counters`]; products involving state vectors (`N×1`) are deliberately
//! excluded, so state-transfer tasks report only the work that scales with
//! the system size.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use std::sync::Arc;

use crate::linalg::{expm_general, expm_hermitian, hermitian_eig, matmul, CMatrix, EigDecomp};
use crate::model::{overlap, BilinearSystem, ControlSequence, OverlapResult, TaskKind, TaskSpec};
use crate::{Error, Result};

/// Operation tally of one cache (one optimization run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Hermitian eigendecompositions at the system dimension.
    pub n_eig: u64,
    /// Dense square matrix multiplications at the system dimension.
    pub n_matmul: u64,
    /// General (non-Hermitian) matrix exponentials.
    pub n_expm_general: u64,
}

/// Per-slice state: generator, optional spectral data, propagator, dirtiness.
#[derive(Debug, Clone)]
struct SliceState {
    /// `A_u(t_k)` at the amplitudes the propagator was last built from.
    generator: CMatrix,
    /// Eigendecomposition of `H_u = −i·A_u` (Hermitian path only).
    eig: Option<EigDecomp>,
    /// `X_k = e^{−Δt·A_u(t_k)}`.
    propagator: CMatrix,
    /// True when the amplitudes changed since the propagator was built.
    dirty: bool,
}

/// One maximal run of non-updated slices collapsed into a single product.
#[derive(Debug, Clone)]
pub struct CollapsedBlock {
    /// First slice of the run (0-based, inclusive).
    pub first: usize,
    /// Last slice of the run (0-based, inclusive).
    pub last: usize,
    /// `Y = X_last ⋯ X_first`.
    pub product: CMatrix,
}

/// Collapsed-product plan for a subspace update: the slices being updated
/// stay individual factors, every maximal run of untouched slices becomes
/// one effective `Y` block.  Interleaving the blocks and the updated slice
/// propagators in time order reproduces `X_M ⋯ X_1` exactly.
#[derive(Debug, Clone)]
pub struct BlockPlan {
    /// Sorted, deduplicated 0-based indices of the slices being updated.
    pub update_set: Vec<usize>,
    /// Collapsed products of the untouched runs, in time order.
    pub collapsed: Vec<CollapsedBlock>,
}

/// Cached propagation state for one optimization run.
///
/// Slice indices are 0-based throughout: slice `s` covers
/// `t ∈ [s·Δt, (s+1)·Δt)` and its propagator is the mathematical
/// `X_{s+1}`.  Forward products `fwd[k] = X_k ⋯ X_1 · seed` and backward
/// products `bwd[k] = seed† · X_M ⋯ X_{k+1}` are indexed by split position
/// `k ∈ 0..=M`, so the gradient of slice `s` reads `fwd[s]` and `bwd[s+1]`.
#[derive(Debug, Clone)]
pub struct PropagationCache {
    system: Arc<BilinearSystem>,
    task: Arc<TaskSpec>,
    controls: ControlSequence,
    slices: Vec<SliceState>,
    /// `fwd[k]` valid for all `k ≤ fwd_valid`.
    fwd: Vec<CMatrix>,
    fwd_valid: usize,
    /// `bwd[k]` valid for all `k ≥ bwd_valid`.
    bwd: Vec<CMatrix>,
    bwd_valid: usize,
    dirty_count: usize,
    counters: Counters,
}

impl PropagationCache {
    /// Builds a cache with every slice initially dirty; the first refresh
    /// performs the `M` initial exponentiations.
    pub fn new(
        system: Arc<BilinearSystem>,
        task: Arc<TaskSpec>,
        controls: ControlSequence,
    ) -> Result<Self> {
        if controls.n_controls() != system.n_controls() {
            return Err(Error::ShapeMismatch(format!(
                "control grid has {} channels for a system with {}",
                controls.n_controls(),
                system.n_controls()
            )));
        }
        let dim = system.dim;
        let fseed = task.forward_seed();
        let bseed = task.backward_seed();
        if fseed.nrows() != dim || bseed.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "task boundaries ({}x{} forward, {}x{} backward) do not match system dimension {}",
                fseed.nrows(),
                fseed.ncols(),
                bseed.nrows(),
                bseed.ncols(),
                dim
            )));
        }
        let m = controls.n_slices();
        let empty = CMatrix::zeros((0, 0));
        let slices = vec![
            SliceState {
                generator: empty.clone(),
                eig: None,
                propagator: empty.clone(),
                dirty: true,
            };
            m
        ];
        let mut fwd = vec![empty.clone(); m + 1];
        fwd[0] = fseed;
        let mut bwd = vec![empty; m + 1];
        bwd[m] = bseed;
        Ok(Self {
            system,
            task,
            controls,
            slices,
            fwd,
            fwd_valid: 0,
            bwd,
            bwd_valid: m,
            dirty_count: m,
            counters: Counters::default(),
        })
    }

    pub fn n_slices(&self) -> usize {
        self.controls.n_slices()
    }

    pub fn dim(&self) -> usize {
        self.system.dim
    }

    pub fn dt(&self) -> f64 {
        self.controls.dt
    }

    pub fn system(&self) -> &BilinearSystem {
        &self.system
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    /// Shared handle to the system, for callers that need it while holding
    /// mutable borrows of the cache.
    pub fn system_handle(&self) -> Arc<BilinearSystem> {
        Arc::clone(&self.system)
    }

    /// Shared handle to the task.
    pub fn task_handle(&self) -> Arc<TaskSpec> {
        Arc::clone(&self.task)
    }

    /// Current amplitude grid and bounds.
    pub fn controls(&self) -> &ControlSequence {
        &self.controls
    }

    /// Snapshot of the operation tally.
    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Attributes `n` dense square multiplications performed on this run's
    /// behalf by a caller (gradient assembly, line searches, …).
    pub fn charge_matmuls(&mut self, n: u64) {
        self.counters.n_matmul += n;
    }

    /// Attributes `n` externally performed eigendecompositions.
    pub fn charge_eigs(&mut self, n: u64) {
        self.counters.n_eig += n;
    }

    /// Attributes `n` externally performed general matrix exponentials.
    pub fn charge_expm_general(&mut self, n: u64) {
        self.counters.n_expm_general += n;
    }

    /// Overwrites the amplitudes of the given slices (row `i` of `amps`
    /// applies to `indices[i]`) and marks them dirty.  Nothing is
    /// recomputed; identical values still mark the slice dirty.  Fails
    /// without mutating anything on an out-of-range index, a shape mismatch,
    /// or (when bounds are active) an amplitude outside the bounds.
    pub fn set_controls(&mut self, indices: &[usize], amps: ArrayView2<f64>) -> Result<()> {
        let m = self.n_slices();
        if amps.nrows() != indices.len() || amps.ncols() != self.controls.n_controls() {
            return Err(Error::ShapeMismatch(format!(
                "amplitude block is {}x{}, expected {}x{}",
                amps.nrows(),
                amps.ncols(),
                indices.len(),
                self.controls.n_controls()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&s| s >= m) {
            return Err(Error::InvalidArgument(format!(
                "slice index {bad} out of range for {m} slices"
            )));
        }
        if let Some((lo, hi)) = self.controls.bounds {
            if amps.iter().any(|&v| v < lo || v > hi) {
                return Err(Error::InvalidArgument(format!(
                    "amplitude outside the active bounds [{lo}, {hi}]"
                )));
            }
        }
        for (row, &s) in indices.iter().enumerate() {
            self.controls.u.row_mut(s).assign(&amps.row(row));
            if !self.slices[s].dirty {
                self.slices[s].dirty = true;
                self.dirty_count += 1;
            }
            self.fwd_valid = self.fwd_valid.min(s);
            self.bwd_valid = self.bwd_valid.max(s + 1);
        }
        Ok(())
    }

    /// Overwrites the full amplitude grid, marking every slice dirty.
    pub fn set_all_controls(&mut self, u: &Array2<f64>) -> Result<()> {
        let indices: Vec<usize> = (0..self.n_slices()).collect();
        self.set_controls(&indices, u.view())
    }

    /// Re-exponentiates every dirty slice (Hermitian spectral path when the
    /// system permits, general matrix exponential otherwise).  Forward and
    /// backward products are *not* rebuilt; they extend on demand.
    pub fn refresh_propagators(&mut self) -> Result<()> {
        if self.dirty_count == 0 {
            return Ok(());
        }
        let dt = self.controls.dt;
        for s in 0..self.n_slices() {
            if !self.slices[s].dirty {
                continue;
            }
            let gen = self.system.generator(self.controls.u.row(s))?;
            if self.system.hermitian_generators {
                let h = gen.mapv(|v| v * Complex64::new(0.0, -1.0));
                let eig = hermitian_eig(&h)?;
                let x = expm_hermitian(&eig, Complex64::new(0.0, -dt))?;
                // One eigendecomposition plus the single V·(e^Λ V†) product.
                self.counters.n_eig += 1;
                self.counters.n_matmul += 1;
                self.slices[s].eig = Some(eig);
                self.slices[s].propagator = x;
            } else {
                let x = expm_general(&gen.mapv(|v| v * Complex64::new(-dt, 0.0)))?;
                self.counters.n_expm_general += 1;
                self.slices[s].eig = None;
                self.slices[s].propagator = x;
            }
            self.slices[s].generator = gen;
            self.slices[s].dirty = false;
        }
        self.dirty_count = 0;
        Ok(())
    }

    /// Re-exponentiates dirty slices and rebuilds both product chains in
    /// full.  This is the natural refresh for concurrent updates; sequential
    /// single-slice updates should rely on the demand-driven accessors
    /// instead, which touch only the products the update invalidated.
    pub fn refresh(&mut self) -> Result<()> {
        self.refresh_propagators()?;
        let m = self.n_slices();
        self.ensure_fwd(m)?;
        self.ensure_bwd(0)
    }

    /// True if `a·b` is a square product at the system dimension (the only
    /// kind of multiplication the counters track).
    fn counted(&self, a: &CMatrix, b: &CMatrix) -> bool {
        let d = self.system.dim;
        a.nrows() == d && a.ncols() == d && b.nrows() == d && b.ncols() == d
    }

    /// Extends the forward chain so that `fwd[k]` is valid.
    fn ensure_fwd(&mut self, k: usize) -> Result<()> {
        debug_assert!(k <= self.n_slices());
        self.refresh_propagators()?;
        while self.fwd_valid < k {
            let s = self.fwd_valid;
            let next = matmul(&self.slices[s].propagator, &self.fwd[s]);
            if self.counted(&self.slices[s].propagator, &self.fwd[s]) {
                self.counters.n_matmul += 1;
            }
            self.fwd[s + 1] = next;
            self.fwd_valid = s + 1;
        }
        Ok(())
    }

    /// Extends the backward chain so that `bwd[k]` is valid.
    fn ensure_bwd(&mut self, k: usize) -> Result<()> {
        self.refresh_propagators()?;
        while self.bwd_valid > k {
            let s = self.bwd_valid - 1;
            let prev = matmul(&self.bwd[s + 1], &self.slices[s].propagator);
            if self.counted(&self.bwd[s + 1], &self.slices[s].propagator) {
                self.counters.n_matmul += 1;
            }
            self.bwd[s] = prev;
            self.bwd_valid = s;
        }
        Ok(())
    }

    /// Forward product `fwd[k] = X_k ⋯ X_1 · seed`, extending lazily.
    pub fn fwd_product(&mut self, k: usize) -> Result<&CMatrix> {
        if k > self.n_slices() {
            return Err(Error::InvalidArgument(format!(
                "forward product index {k} out of range"
            )));
        }
        self.ensure_fwd(k)?;
        Ok(&self.fwd[k])
    }

    /// Backward product `bwd[k] = seed† · X_M ⋯ X_{k+1}`, extending lazily.
    pub fn bwd_product(&mut self, k: usize) -> Result<&CMatrix> {
        if k > self.n_slices() {
            return Err(Error::InvalidArgument(format!(
                "backward product index {k} out of range"
            )));
        }
        self.ensure_bwd(k)?;
        Ok(&self.bwd[k])
    }

    /// The pair `(fwd[s], bwd[s+1])` surrounding slice `s`, as needed by the
    /// gradient of that slice.
    pub fn products_around(&mut self, s: usize) -> Result<(&CMatrix, &CMatrix)> {
        if s >= self.n_slices() {
            return Err(Error::InvalidArgument(format!(
                "slice index {s} out of range for {} slices",
                self.n_slices()
            )));
        }
        self.ensure_fwd(s)?;
        self.ensure_bwd(s + 1)?;
        Ok((&self.fwd[s], &self.bwd[s + 1]))
    }

    /// Propagator `X_{s+1} = e^{−Δt·A_u(t_s)}` of slice `s`.
    pub fn slice_propagator(&mut self, s: usize) -> Result<&CMatrix> {
        self.check_slice(s)?;
        self.refresh_propagators()?;
        Ok(&self.slices[s].propagator)
    }

    /// Generator `A_u(t_s)` of slice `s` at the current amplitudes.
    pub fn slice_generator(&mut self, s: usize) -> Result<&CMatrix> {
        self.check_slice(s)?;
        self.refresh_propagators()?;
        Ok(&self.slices[s].generator)
    }

    /// Eigendecomposition of `H_u(t_s) = −i·A_u(t_s)`, retained from the
    /// slice exponentiation.  Only available on the Hermitian path.
    pub fn slice_eig(&mut self, s: usize) -> Result<&EigDecomp> {
        self.check_slice(s)?;
        self.refresh_propagators()?;
        self.slices[s].eig.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "slice eigendecompositions exist only for Hermitian-generator systems".into(),
            )
        })
    }

    fn check_slice(&self, s: usize) -> Result<()> {
        if s >= self.n_slices() {
            return Err(Error::InvalidArgument(format!(
                "slice index {s} out of range for {} slices",
                self.n_slices()
            )));
        }
        Ok(())
    }

    /// Current fidelity, evaluated at whatever split position is cheapest
    /// for the cached chains; the result is split-independent.  Errors if
    /// any slice is still dirty (amplitudes changed without a refresh).
    pub fn fidelity_now(&mut self) -> Result<OverlapResult> {
        if self.dirty_count > 0 {
            return Err(Error::InvalidArgument(
                "cache has dirty slices; refresh before evaluating the fidelity".into(),
            ));
        }
        let kappa = if self.bwd_valid <= self.fwd_valid {
            self.bwd_valid
        } else {
            let k = self.bwd_valid;
            self.ensure_fwd(k)?;
            k
        };
        let res = overlap(&self.task, &self.bwd[kappa], &self.fwd[kappa])?;
        if self.task.kind == TaskKind::DensityClosed {
            // The conjugation fidelity forms U, U·ρ₀, and ρ_tar†·(U·ρ₀).
            self.counters.n_matmul += 3;
        }
        Ok(res)
    }

    /// Collapses every maximal run of slices *not* in `update_set` into a
    /// single product block.  The cache must not have pending amplitude
    /// changes beyond the usual lazy state (dirty slices are exponentiated
    /// here).  Each collapsed run of length `L` costs `L − 1` dense
    /// multiplications.
    pub fn plan_blocks(&mut self, update_set: &[usize]) -> Result<BlockPlan> {
        if update_set.is_empty() {
            return Err(Error::InvalidArgument(
                "block planning requires a nonempty update set".into(),
            ));
        }
        let m = self.n_slices();
        let mut sorted: Vec<usize> = update_set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if *sorted.last().unwrap() >= m {
            return Err(Error::InvalidArgument(format!(
                "update set contains slice {} but there are only {m} slices",
                sorted.last().unwrap()
            )));
        }
        self.refresh_propagators()?;
        let mut updated = vec![false; m];
        for &s in &sorted {
            updated[s] = true;
        }
        let mut collapsed = Vec::new();
        let mut s = 0;
        while s < m {
            if updated[s] {
                s += 1;
                continue;
            }
            let first = s;
            while s < m && !updated[s] {
                s += 1;
            }
            let last = s - 1;
            let mut product = self.slices[first].propagator.clone();
            for t in first + 1..=last {
                product = matmul(&self.slices[t].propagator, &product);
                self.counters.n_matmul += 1;
            }
            collapsed.push(CollapsedBlock {
                first,
                last,
                product,
            });
        }
        Ok(BlockPlan {
            update_set: sorted,
            collapsed,
        })
    }
}
