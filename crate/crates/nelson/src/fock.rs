//! Truncated symmetric Fock space over the grid modes.
//!
//! States are occupation multi-indices (n_1, …, n_M) with Σn_i ≤ n_max,
//! enumerated by total occupation and, within a grade, with earlier modes
//! filled first: for M = 2, n_max = 2 the order is 00, 10, 01, 20, 11, 02.
//!
//! A state with total occupation n has at most n occupied modes, so the
//! annihilation table carries ≤ n_max entries per state and every
//! creation/annihilation application is table-driven and matrix-free.

use crate::modegrid::ModeFunction;
use crate::{Error, Result, C64};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::Arc;

pub const DEFAULT_DIM_CAP: usize = 4_000_000;

#[derive(Debug, Clone, Copy)]
struct AnnEntry {
    /// index of the state with one quantum removed
    target: u32,
    mode: u32,
    sqrt_n: f64,
}

/// Occupation-number basis with a total-occupation cap.
#[derive(Debug)]
pub struct FockBasis {
    pub mode_count: usize,
    pub n_max: usize,
    dim: usize,
    occ: Vec<u8>,
    totals: Vec<u8>,
    index: HashMap<Box<[u8]>, u32>,
    ann_offsets: Vec<u32>,
    ann_entries: Vec<AnnEntry>,
}

fn binom_sum_dim(mode_count: usize, n_max: usize) -> Option<usize> {
    let mut dim: u128 = 0;
    for j in 0..=n_max {
        // C(M + j - 1, j)
        let mut c: u128 = 1;
        for i in 0..j {
            c = c.checked_mul((mode_count + i) as u128)? / (i as u128 + 1);
        }
        dim = dim.checked_add(c)?;
    }
    usize::try_from(dim).ok()
}

/// Build the truncated basis with the default dimension cap.
pub fn build_basis(mode_count: usize, n_max: usize) -> Result<Arc<FockBasis>> {
    build_basis_capped(mode_count, n_max, DEFAULT_DIM_CAP)
}

pub fn build_basis_capped(mode_count: usize, n_max: usize, cap: usize) -> Result<Arc<FockBasis>> {
    assert!(mode_count >= 1, "need at least one mode");
    let dim = binom_sum_dim(mode_count, n_max)
        .ok_or(Error::DimensionCap { dim: usize::MAX, cap })?;
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let mut occ = Vec::with_capacity(dim * mode_count);
    let mut totals = Vec::with_capacity(dim);
    let mut state = vec![0u8; mode_count];
    for grade in 0..=n_max {
        enumerate_grade(&mut occ, &mut state, 0, grade, mode_count);
        let new_len = occ.len() / mode_count;
        totals.resize(new_len, grade as u8);
    }
    debug_assert_eq!(occ.len(), dim * mode_count);

    let mut index = HashMap::with_capacity(dim);
    for i in 0..dim {
        let key: Box<[u8]> = occ[i * mode_count..(i + 1) * mode_count].into();
        index.insert(key, i as u32);
    }

    let mut ann_offsets = Vec::with_capacity(dim + 1);
    let mut ann_entries = Vec::new();
    let mut scratch = vec![0u8; mode_count];
    ann_offsets.push(0);
    for i in 0..dim {
        let s = &occ[i * mode_count..(i + 1) * mode_count];
        for (m, &n) in s.iter().enumerate() {
            if n > 0 {
                scratch.copy_from_slice(s);
                scratch[m] = n - 1;
                let target = index[&scratch[..]];
                ann_entries.push(AnnEntry {
                    target,
                    mode: m as u32,
                    sqrt_n: (n as f64).sqrt(),
                });
            }
        }
        ann_offsets.push(ann_entries.len() as u32);
    }

    Ok(Arc::new(FockBasis { mode_count, n_max, dim, occ, totals, index, ann_offsets, ann_entries }))
}

fn enumerate_grade(occ: &mut Vec<u8>, state: &mut [u8], mode: usize, left: usize, m: usize) {
    if mode == m - 1 {
        state[mode] = left as u8;
        occ.extend_from_slice(state);
        state[mode] = 0;
        return;
    }
    for n in (0..=left).rev() {
        state[mode] = n as u8;
        enumerate_grade(occ, state, mode + 1, left - n, m);
    }
    state[mode] = 0;
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn occupation(&self, i: usize) -> &[u8] {
        &self.occ[i * self.mode_count..(i + 1) * self.mode_count]
    }

    pub fn total_occupation(&self, i: usize) -> usize {
        self.totals[i] as usize
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).map(|&i| i as usize)
    }

    pub fn vacuum_index(&self) -> usize {
        0
    }

    /// y += a(g) x with weighted mode amplitudes g (antilinear in g).
    pub fn accumulate_annihilation(&self, g: &[C64], x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(g.len(), self.mode_count);
        for i in 0..self.dim {
            let xi = x[i];
            if xi == C64::new(0.0, 0.0) {
                continue;
            }
            let lo = self.ann_offsets[i] as usize;
            let hi = self.ann_offsets[i + 1] as usize;
            for e in &self.ann_entries[lo..hi] {
                y[e.target as usize] += g[e.mode as usize].conj() * e.sqrt_n * xi;
            }
        }
    }

    /// y += a*(g) x with weighted mode amplitudes g (linear in g).
    pub fn accumulate_creation(&self, g: &[C64], x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(g.len(), self.mode_count);
        for i in 0..self.dim {
            let lo = self.ann_offsets[i] as usize;
            let hi = self.ann_offsets[i + 1] as usize;
            let mut acc = C64::new(0.0, 0.0);
            for e in &self.ann_entries[lo..hi] {
                acc += g[e.mode as usize] * e.sqrt_n * x[e.target as usize];
            }
            y[i] += acc;
        }
    }

    /// y += (a*(g) − a(g)) x, the displacement generator.
    pub fn accumulate_displacement_generator(&self, g: &[C64], x: &[C64], y: &mut [C64]) {
        for i in 0..self.dim {
            let lo = self.ann_offsets[i] as usize;
            let hi = self.ann_offsets[i + 1] as usize;
            let xi = x[i];
            let mut acc = C64::new(0.0, 0.0);
            for e in &self.ann_entries[lo..hi] {
                let t = e.target as usize;
                acc += g[e.mode as usize] * e.sqrt_n * x[t];
                if xi != C64::new(0.0, 0.0) {
                    y[t] -= g[e.mode as usize].conj() * e.sqrt_n * xi;
                }
            }
            y[i] += acc;
        }
    }

    /// Diagonal of dΓ(h): Σ_i h(k_i) n_i per state.
    pub fn dgamma_diagonal(&self, h: &[f64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.mode_count);
        let mut diag = vec![0.0; self.dim];
        for (i, d) in diag.iter_mut().enumerate() {
            let lo = self.ann_offsets[i] as usize;
            let hi = self.ann_offsets[i + 1] as usize;
            for e in &self.ann_entries[lo..hi] {
                *d += h[e.mode as usize] * e.sqrt_n * e.sqrt_n;
            }
        }
        diag
    }
}

/// Complex amplitude vector on a [`FockBasis`].
#[derive(Debug, Clone)]
pub struct FockVector {
    pub basis: Arc<FockBasis>,
    pub amps: Vec<C64>,
}

impl FockVector {
    pub fn zero(basis: &Arc<FockBasis>) -> Self {
        FockVector { basis: Arc::clone(basis), amps: vec![C64::new(0.0, 0.0); basis.dim()] }
    }

    pub fn vacuum(basis: &Arc<FockBasis>) -> Self {
        let mut v = Self::zero(basis);
        v.amps[0] = C64::new(1.0, 0.0);
        v
    }

    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&mut self, c: C64) {
        for a in &mut self.amps {
            *a *= c;
        }
    }

    pub fn axpy(&mut self, c: C64, other: &FockVector) {
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &FockVector) -> FockVector {
        let amps = self.amps.iter().zip(&other.amps).map(|(a, b)| a - b).collect();
        FockVector { basis: Arc::clone(&self.basis), amps }
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.scale(C64::new(1.0 / n, 0.0));
        }
    }

    /// Norm after removing the best global phase against `other`:
    /// min_θ ‖self − e^{iθ} other‖.
    pub fn phase_aligned_distance(&self, other: &FockVector) -> f64 {
        let ov = other.inner(self);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { C64::new(1.0, 0.0) };
        let mut diff = self.clone();
        diff.axpy(-phase, other);
        diff.norm()
    }
}

/// Explicit compressed-sparse-row matrix with a hermitian flag.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub dim: usize,
    pub row_offsets: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn from_triplets(dim: usize, mut trip: Vec<(u32, u32, C64)>) -> Self {
        trip.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; dim + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(trip.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trip.len());
        let mut row_counts = vec![0usize; dim];
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_counts[r as usize] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_offsets[i + 1] = row_offsets[i] + row_counts[i];
        }
        SparseMatrix { dim, row_offsets, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for j in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.vals[j] * x[self.cols[j] as usize];
            }
            *yi += acc;
        }
    }

    /// max |A − A†| entry, by explicit transpose comparison.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut map = HashMap::new();
        for i in 0..self.dim {
            for j in self.row_offsets[i]..self.row_offsets[i + 1] {
                map.insert((i as u32, self.cols[j]), self.vals[j]);
            }
        }
        let mut defect = 0.0f64;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(C64::new(0.0, 0.0));
            defect = defect.max((v - vt.conj()).norm());
        }
        defect
    }
}

/// Normal-form dressed Hamiltonian ½ΣΓ_i² + dΓ(α|k|) + c, applied as a
/// composition so the two-photon fill-in is never materialized.
#[derive(Debug, Clone)]
pub struct DressedForm {
    pub gamma_diag: [Vec<f64>; 3],
    pub gamma_shift: [f64; 3],
    /// weighted amplitudes of k_i f (one vector per spatial component)
    pub gamma_g: [Vec<C64>; 3],
    pub number_diag: Vec<f64>,
    pub c_scalar: f64,
}

/// Sparse self-adjoint (or flagged non-self-adjoint) operator on a FockBasis.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub basis: Arc<FockBasis>,
    pub hermitian: bool,
    kind: OpKind,
}

#[derive(Debug, Clone)]
enum OpKind {
    Sparse(SparseMatrix),
    Dressed(Box<DressedForm>),
}

impl FiberOperator {
    pub fn from_sparse(basis: &Arc<FockBasis>, m: SparseMatrix, hermitian: bool) -> Self {
        assert_eq!(m.dim, basis.dim());
        FiberOperator { basis: Arc::clone(basis), hermitian, kind: OpKind::Sparse(m) }
    }

    pub fn from_dressed(basis: &Arc<FockBasis>, d: DressedForm) -> Self {
        assert_eq!(d.number_diag.len(), basis.dim());
        FiberOperator {
            basis: Arc::clone(basis),
            hermitian: true,
            kind: OpKind::Dressed(Box::new(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// y = A x
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.fill(C64::new(0.0, 0.0));
        match &self.kind {
            OpKind::Sparse(m) => m.apply(x, y),
            OpKind::Dressed(d) => {
                let dim = self.dim();
                let mut z = vec![C64::new(0.0, 0.0); dim];
                let mut w = vec![C64::new(0.0, 0.0); dim];
                for comp in 0..3 {
                    z.fill(C64::new(0.0, 0.0));
                    apply_gamma_component(&self.basis, d, comp, x, &mut z);
                    w.fill(C64::new(0.0, 0.0));
                    apply_gamma_component(&self.basis, d, comp, &z, &mut w);
                    for (yi, wi) in y.iter_mut().zip(&w) {
                        *yi += 0.5 * wi;
                    }
                }
                for i in 0..dim {
                    y[i] += (d.number_diag[i] + d.c_scalar) * x[i];
                }
            }
        }
    }

    pub fn apply_vec(&self, v: &FockVector) -> FockVector {
        let mut out = FockVector::zero(&self.basis);
        self.apply(&v.amps, &mut out.amps);
        out
    }

    pub fn expectation(&self, v: &FockVector) -> C64 {
        v.inner(&self.apply_vec(v))
    }

    /// Hermiticity defect: exact transpose scan for sparse operators, adjoint
    /// residual over a deterministic probe set for composed ones.
    pub fn hermiticity_defect(&self) -> f64 {
        match &self.kind {
            OpKind::Sparse(m) => m.hermiticity_defect(),
            OpKind::Dressed(_) => {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
                let dim = self.dim();
                let mut worst = 0.0f64;
                for _ in 0..4 {
                    let mut u = FockVector::zero(&self.basis);
                    let mut v = FockVector::zero(&self.basis);
                    for i in 0..dim {
                        u.amps[i] = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                        v.amps[i] = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    }
                    u.normalize();
                    v.normalize();
                    let av = self.apply_vec(&v);
                    let au = self.apply_vec(&u);
                    let d = (u.inner(&av) - av.inner(&u).conj()).norm();
                    let d2 = (v.inner(&au) - au.inner(&v).conj()).norm();
                    worst = worst.max(d).max(d2);
                }
                worst
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let mut m = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        let mut x = vec![C64::new(0.0, 0.0); dim];
        let mut y = vec![C64::new(0.0, 0.0); dim];
        for j in 0..dim {
            x[j] = C64::new(1.0, 0.0);
            self.apply(&x, &mut y);
            for i in 0..dim {
                m[(i, j)] = y[i];
            }
            x[j] = C64::new(0.0, 0.0);
        }
        m
    }
}

fn apply_gamma_component(
    basis: &FockBasis,
    d: &DressedForm,
    comp: usize,
    x: &[C64],
    y: &mut [C64],
) {
    let diag = &d.gamma_diag[comp];
    let shift = d.gamma_shift[comp];
    for i in 0..basis.dim() {
        y[i] += (diag[i] + shift) * x[i];
    }
    let g = &d.gamma_g[comp];
    let mut tmp = vec![C64::new(0.0, 0.0); basis.dim()];
    basis.accumulate_creation(g, x, &mut tmp);
    basis.accumulate_annihilation(g, x, &mut tmp);
    for (yi, ti) in y.iter_mut().zip(&tmp) {
        *yi -= ti;
    }
}

/// Annihilation operator a_i as an explicit sparse matrix.
pub fn annihilate(mode_index: usize, basis: &Arc<FockBasis>) -> FiberOperator {
    let mut trip = Vec::new();
    for i in 0..basis.dim() {
        let lo = basis.ann_offsets[i] as usize;
        let hi = basis.ann_offsets[i + 1] as usize;
        for e in &basis.ann_entries[lo..hi] {
            if e.mode as usize == mode_index {
                trip.push((e.target, i as u32, C64::new(e.sqrt_n, 0.0)));
            }
        }
    }
    FiberOperator::from_sparse(basis, SparseMatrix::from_triplets(basis.dim(), trip), false)
}

/// Creation operator a*_i (exact adjoint of [`annihilate`]).
pub fn create(mode_index: usize, basis: &Arc<FockBasis>) -> FiberOperator {
    let mut trip = Vec::new();
    for i in 0..basis.dim() {
        let lo = basis.ann_offsets[i] as usize;
        let hi = basis.ann_offsets[i + 1] as usize;
        for e in &basis.ann_entries[lo..hi] {
            if e.mode as usize == mode_index {
                trip.push((i as u32, e.target, C64::new(e.sqrt_n, 0.0)));
            }
        }
    }
    FiberOperator::from_sparse(basis, SparseMatrix::from_triplets(basis.dim(), trip), false)
}

/// Second quantization of a real per-mode multiplier: dΓ(h) = Σ h(k_i) n_i.
pub fn dgamma(h: &[f64], basis: &Arc<FockBasis>) -> FiberOperator {
    let diag = basis.dgamma_diagonal(h);
    let trip = diag
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u32, i as u32, C64::new(v, 0.0)))
        .collect();
    FiberOperator::from_sparse(basis, SparseMatrix::from_triplets(basis.dim(), trip), true)
}

/// Poisson tail mass beyond the occupation cap for displacement parameter
/// ‖g‖²: 1 − e^{−λ} Σ_{j≤n_max} λ^j/j!.
pub fn poisson_tail(n_max: usize, lambda_sq: f64) -> f64 {
    if lambda_sq <= 0.0 {
        return 0.0;
    }
    let mut cum = 0.0;
    let mut term = 1.0f64;
    for j in 0..=n_max {
        if j > 0 {
            term *= lambda_sq / j as f64;
        }
        cum += term;
    }
    (1.0 - (-lambda_sq).exp() * cum).clamp(0.0, 1.0)
}

/// Result of a truncated coherent-state expansion or a Weyl application.
#[derive(Debug, Clone)]
pub struct DisplacedVector {
    pub vector: FockVector,
    /// Poisson estimate of the occupation mass beyond the cap.
    pub tail: f64,
}

/// Truncated coherent state e^{−‖g‖²/2} Π g_i^{n_i}/√(n_i!) for the weighted
/// amplitudes of g. Errors with `TruncationTail` when the tail exceeds `tol`.
pub fn coherent_vector(
    g: &ModeFunction,
    basis: &Arc<FockBasis>,
    tol: f64,
) -> Result<DisplacedVector> {
    assert_eq!(g.len(), basis.mode_count);
    let amps = g.weighted_amplitudes();
    let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let tail = poisson_tail(basis.n_max, norm_sq);
    if tail > tol {
        return Err(Error::TruncationTail { tail, tol });
    }
    let prefactor = (-norm_sq / 2.0).exp();
    let mut v = FockVector::zero(basis);
    for i in 0..basis.dim() {
        let occ = basis.occupation(i);
        let mut amp = C64::new(prefactor, 0.0);
        for (m, &n) in occ.iter().enumerate() {
            for q in 0..n {
                amp *= amps[m] / ((q as f64 + 1.0).sqrt());
            }
        }
        v.amps[i] = amp;
    }
    Ok(DisplacedVector { vector: v, tail })
}

/// Apply the Weyl operator W(g) = exp(a*(g) − a(g)) by Lanczos approximation
/// of the matrix exponential, with step halving until the unitarity defect is
/// below 1e−9. The generator is skew-Hermitian on the truncated space, so the
/// result is unitary up to the Krylov convergence tolerance; `tail` reports
/// the Poisson estimate of the occupation mass the cap cannot represent.
pub fn weyl_apply(g: &ModeFunction, psi: &FockVector, tol: f64) -> Result<DisplacedVector> {
    let basis = &psi.basis;
    assert_eq!(g.len(), basis.mode_count);
    let amps = g.weighted_amplitudes();
    let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let tail = poisson_tail(basis.n_max, norm_sq);
    if tail > tol {
        return Err(Error::TruncationTail { tail, tol });
    }
    let vector = expm_displacement(basis, &amps, psi, 1e-11, 0)?;
    Ok(DisplacedVector { vector, tail })
}

/// Weighted-amplitude variant of [`weyl_apply`] used on hot paths.
pub fn weyl_apply_weighted(
    basis: &Arc<FockBasis>,
    amps: &[C64],
    psi: &FockVector,
    krylov_tol: f64,
) -> Result<FockVector> {
    expm_displacement(basis, amps, psi, krylov_tol, 0)
}

fn expm_displacement(
    basis: &Arc<FockBasis>,
    amps: &[C64],
    psi: &FockVector,
    krylov_tol: f64,
    depth: usize,
) -> Result<FockVector> {
    let dim = basis.dim();
    let beta0 = psi.norm();
    if beta0 == 0.0 || amps.iter().all(|a| a.norm_sqr() == 0.0) {
        return Ok(psi.clone());
    }
    // Lanczos on the Hermitian operator K = i(a*(g) − a(g)); exp(S) = exp(−iK)
    let m_max = 40usize.min(dim);
    let mut vs: Vec<Vec<C64>> = Vec::with_capacity(m_max + 1);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let v0: Vec<C64> = psi.amps.iter().map(|a| a / beta0).collect();
    vs.push(v0);
    let mut happy = false;
    for j in 0..m_max {
        let mut w = vec![C64::new(0.0, 0.0); dim];
        basis.accumulate_displacement_generator(amps, &vs[j], &mut w);
        for wi in w.iter_mut() {
            *wi *= C64::new(0.0, 1.0);
        }
        if j > 0 {
            let b = betas[j - 1];
            for (wi, vi) in w.iter_mut().zip(&vs[j - 1]) {
                *wi -= b * vi;
            }
        }
        let alpha: f64 = vs[j].iter().zip(&w).map(|(v, wi)| (v.conj() * wi).re).sum();
        for (wi, vi) in w.iter_mut().zip(&vs[j]) {
            *wi -= alpha * vi;
        }
        // one full reorthogonalization pass keeps the small space clean
        for vprev in &vs {
            let c: C64 = vprev.iter().zip(&w).map(|(v, wi)| v.conj() * wi).sum();
            for (wi, vi) in w.iter_mut().zip(vprev) {
                *wi -= c * vi;
            }
        }
        alphas.push(alpha);
        let beta = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if beta < 1e-14 {
            happy = true;
            break;
        }
        betas.push(beta);
        for wi in w.iter_mut() {
            *wi /= beta;
        }
        vs.push(w);
        if j >= 3 && j % 2 == 1 {
            let c = expm_tridiag_coeffs(&alphas, &betas[..alphas.len() - 1]);
            let est = beta * c[c.len() - 1].norm();
            if est < krylov_tol {
                break;
            }
        }
    }
    let m = alphas.len();
    let coeff = expm_tridiag_coeffs(&alphas, &betas[..m - 1]);
    let mut out = FockVector::zero(basis);
    for (j, cj) in coeff.iter().enumerate() {
        let c = cj * beta0;
        for (o, v) in out.amps.iter_mut().zip(&vs[j]) {
            *o += c * v;
        }
    }
    let defect = (out.norm() - beta0).abs();
    if !happy && defect > 1e-9 * beta0.max(1.0) {
        if depth >= 6 {
            return Err(Error::NoConvergence {
                what: "weyl_apply Krylov exponential",
                detail: format!("unitarity defect {defect:.3e} after {depth} halvings"),
            });
        }
        // W(g) = W(g/2)² exactly (Im⟨g/2, g/2⟩ = 0)
        let half: Vec<C64> = amps.iter().map(|a| a * 0.5).collect();
        let mid = expm_displacement(basis, &half, psi, krylov_tol, depth + 1)?;
        return expm_displacement(basis, &half, &mid, krylov_tol, depth + 1);
    }
    Ok(out)
}

/// First column of exp(−i T) for the real symmetric tridiagonal T.
fn expm_tridiag_coeffs(alphas: &[f64], betas: &[f64]) -> Vec<C64> {
    let m = alphas.len();
    let mut t = DMatrix::from_element(m, m, 0.0f64);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let mut out = vec![C64::new(0.0, 0.0); m];
    for k in 0..m {
        let phase = C64::new(0.0, -eig.eigenvalues[k]).exp();
        let u_k0 = eig.eigenvectors[(0, k)];
        for (j, o) in out.iter_mut().enumerate() {
            *o += eig.eigenvectors[(j, k)] * u_k0 * phase;
        }
    }
    out
}

/// Compare the finite-difference derivative of s ↦ W(F_s)ψ against the
/// analytic formula W(F_s)(a*(∂F) − a(∂F) + i Im⟨F_s, ∂F⟩)ψ; returns the norm
/// of the difference.
pub fn weyl_derivative_check(
    path: impl Fn(f64) -> ModeFunction,
    dpath: impl Fn(f64) -> ModeFunction,
    s: f64,
    h: f64,
    psi: &FockVector,
) -> Result<f64> {
    let basis = &psi.basis;
    let fp = weyl_apply(&path(s + h), psi, 1.0)?.vector;
    let fm = weyl_apply(&path(s - h), psi, 1.0)?.vector;
    let mut fd = fp;
    fd.axpy(C64::new(-1.0, 0.0), &fm);
    fd.scale(C64::new(1.0 / (2.0 * h), 0.0));

    let f_s = path(s);
    let df = dpath(s);
    let g_amp = df.weighted_amplitudes();
    let mut gen = FockVector::zero(basis);
    basis.accumulate_creation(&g_amp, &psi.amps, &mut gen.amps);
    let mut ann = FockVector::zero(basis);
    basis.accumulate_annihilation(&g_amp, &psi.amps, &mut ann.amps);
    gen.axpy(C64::new(-1.0, 0.0), &ann);
    let im = f_s.inner(&df).im;
    gen.axpy(C64::new(0.0, im), psi);
    let analytic = weyl_apply(&f_s, &gen, 1.0)?.vector;

    fd.axpy(C64::new(-1.0, 0.0), &analytic);
    Ok(fd.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modegrid::{build_grid, AngularSpec, ModeFunction, RadialSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn small_grid(nr: usize) -> Arc<crate::modegrid::ModeGrid> {
        Arc::new(build_grid(RadialSpec::log(nr, 1e-2), AngularSpec::axes(), 0.0, 0.1).unwrap())
    }

    fn random_mode_fn(
        grid: &Arc<crate::modegrid::ModeGrid>,
        scale: f64,
        seed: u64,
    ) -> ModeFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.mode_count())
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * scale)
            .collect();
        ModeFunction { grid: Arc::clone(grid), values }
    }

    #[test]
    fn basis_dimensions_and_order() {
        let b = build_basis(3, 0).unwrap();
        assert_eq!(b.dim(), 1);

        let b = build_basis(2, 2).unwrap();
        assert_eq!(b.dim(), 6);
        let states: Vec<&[u8]> = (0..6).map(|i| b.occupation(i)).collect();
        assert_eq!(states, vec![&[0, 0][..], &[1, 0], &[0, 1], &[2, 0], &[1, 1], &[0, 2]]);

        // binomial-sum oracle Σ_j C(6+j−1, j)
        let b = build_basis(6, 3).unwrap();
        let mut oracle = 0usize;
        for j in 0..=3usize {
            let mut c = 1usize;
            for i in 0..j {
                c = c * (6 + i) / (i + 1);
            }
            oracle += c;
        }
        assert_eq!(oracle, 84);
        assert_eq!(b.dim(), 84);
    }

    #[test]
    fn dimension_cap_enforced() {
        assert!(matches!(build_basis_capped(48, 3, 10_000), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn ladder_operator_examples() {
        let b = build_basis(4, 3).unwrap();
        let a0 = annihilate(0, &b);
        let omega = FockVector::vacuum(&b);
        assert_eq!(a0.apply_vec(&omega).norm(), 0.0);

        // a_i a*_i Ω = Ω
        let c0 = create(0, &b);
        let up = c0.apply_vec(&omega);
        let back = a0.apply_vec(&up);
        assert_relative_eq!(back.sub(&omega).norm(), 0.0, epsilon = 1e-14);

        // adjointness on random vectors
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut u = FockVector::zero(&b);
        let mut v = FockVector::zero(&b);
        for i in 0..b.dim() {
            u.amps[i] = C64::new(rng.gen(), rng.gen());
            v.amps[i] = C64::new(rng.gen(), rng.gen());
        }
        let lhs = c0.apply_vec(&u).inner(&v);
        let rhs = u.inner(&a0.apply_vec(&v));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn ccr_on_truncation_interior() {
        let b = build_basis(3, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let ai = annihilate(i, &b);
                let cj = create(j, &b);
                for s in 0..b.dim() {
                    if b.total_occupation(s) > b.n_max - 1 {
                        continue;
                    }
                    let mut e = FockVector::zero(&b);
                    e.amps[s] = C64::new(1.0, 0.0);
                    let comm =
                        ai.apply_vec(&cj.apply_vec(&e)).sub(&cj.apply_vec(&ai.apply_vec(&e)));
                    let expected = if i == j { 1.0 } else { 0.0 };
                    let mut want = e.clone();
                    want.scale(C64::new(expected, 0.0));
                    assert!(comm.sub(&want).norm() < 1e-13, "i={i} j={j} s={s}");
                }
            }
        }
    }

    #[test]
    fn dgamma_examples() {
        let b = build_basis(3, 2).unwrap();
        let n_op = dgamma(&[1.0, 1.0, 1.0], &b);
        for s in 0..b.dim() {
            let mut e = FockVector::zero(&b);
            e.amps[s] = C64::new(1.0, 0.0);
            let total: f64 = b.occupation(s).iter().map(|&n| n as f64).sum();
            assert_relative_eq!(n_op.expectation(&e).re, total, epsilon = 1e-14);
        }
        let hf = dgamma(&[0.3, 0.9, 0.1], &b);
        assert_eq!(hf.apply_vec(&FockVector::vacuum(&b)).norm(), 0.0);

        // ‖dΓ(h)φ‖ ≤ sup|h|·‖Nφ‖ on random φ
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut phi = FockVector::zero(&b);
        for i in 0..b.dim() {
            phi.amps[i] = C64::new(rng.gen(), rng.gen());
        }
        let h = [0.4, -0.7, 0.2];
        let lhs = dgamma(&h, &b).apply_vec(&phi).norm();
        let rhs = 0.7 * n_op.apply_vec(&phi).norm();
        assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn coherent_examples() {
        let grid = small_grid(2); // 12 modes
        let b = build_basis(grid.mode_count(), 4).unwrap();
        let zero = ModeFunction::zero(&grid);
        let coh0 = coherent_vector(&zero, &b, 1e-12).unwrap();
        assert_relative_eq!(coh0.vector.sub(&FockVector::vacuum(&b)).norm(), 0.0);

        let g = random_mode_fn(&grid, 0.35, 3);
        let amps = g.weighted_amplitudes();
        let nsq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let coh = coherent_vector(&g, &b, 1e-2).unwrap();
        let vac_overlap = FockVector::vacuum(&b).inner(&coh.vector);
        assert_relative_eq!(vac_overlap.re, (-nsq / 2.0).exp(), epsilon = 1e-12);
        assert_relative_eq!(vac_overlap.im, 0.0, epsilon = 1e-15);

        // sector norms are the truncated Poisson masses
        let mut sector = vec![0.0f64; b.n_max + 1];
        for i in 0..b.dim() {
            sector[b.total_occupation(i)] += coh.vector.amps[i].norm_sqr();
        }
        let mut fact = 1.0;
        for (n, &mass) in sector.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            let want = (-nsq).exp() * nsq.powi(n as i32) / fact;
            assert_relative_eq!(mass, want, max_relative = 1e-10);
        }
        let total: f64 = sector.iter().sum();
        assert_relative_eq!(total, 1.0 - coh.tail, max_relative = 1e-10);
    }

    #[test]
    fn weyl_examples() {
        let grid = small_grid(2);
        let b = build_basis(grid.mode_count(), 5).unwrap();
        let psi = {
            let g = random_mode_fn(&grid, 0.2, 5);
            coherent_vector(&g, &b, 1e-3).unwrap().vector
        };

        // W(0) = 1
        let zero = ModeFunction::zero(&grid);
        let same = weyl_apply(&zero, &psi, 1e-12).unwrap();
        assert_relative_eq!(same.vector.sub(&psi).norm(), 0.0);

        // W(g)Ω matches the analytic coherent state once the Poisson tail is
        // below the cap (the leakage scales like √tail)
        let g = random_mode_fn(&grid, 0.1, 6);
        let from_weyl = weyl_apply(&g, &FockVector::vacuum(&b), 1e-2).unwrap();
        let analytic = coherent_vector(&g, &b, 1e-2).unwrap();
        let dist = from_weyl.vector.sub(&analytic.vector).norm();
        assert!(dist < 1e-9, "dist={dist} tail={}", analytic.tail);

        // Weyl relation W(F)W(G) = e^{−i Im⟨F,G⟩} W(F+G)
        let f = random_mode_fn(&grid, 0.18, 7);
        let gg = random_mode_fn(&grid, 0.15, 8);
        let lhs = weyl_apply(&f, &weyl_apply(&gg, &psi, 1e-2).unwrap().vector, 1e-2).unwrap();
        let mut rhs = weyl_apply(&f.add(&gg), &psi, 1e-2).unwrap();
        let phase = C64::new(0.0, -f.inner(&gg).im).exp();
        rhs.vector.scale(phase);
        let resid = lhs.vector.sub(&rhs.vector).norm();
        assert!(resid < 1e-6, "weyl relation residual {resid}");

        // unitarity defect within tail + 1e-10
        let big = random_mode_fn(&grid, 0.5, 9);
        let moved = weyl_apply(&big, &psi, 0.5).unwrap();
        assert!((moved.vector.norm() - psi.norm()).abs() <= moved.tail + 1e-10);
    }

    #[test]
    fn weyl_derivative_examples() {
        let grid = small_grid(2);
        let b = build_basis(grid.mode_count(), 4).unwrap();
        let psi = coherent_vector(&random_mode_fn(&grid, 0.15, 21), &b, 1e-3).unwrap().vector;
        let g = random_mode_fn(&grid, 0.3, 22);

        // constant path: derivative zero, FD zero
        let gc = g.clone();
        let gz = ModeFunction::zero(&grid);
        let r = weyl_derivative_check(|_| gc.clone(), |_| gz.clone(), 0.3, 1e-3, &psi).unwrap();
        assert!(r < 1e-10, "constant path residual {r}");

        // linear path F_s = s g at s = 0: FD residual O(h²)
        let g1 = g.clone();
        let g2 = g.clone();
        let res_h = weyl_derivative_check(
            move |s| g1.scale(C64::new(s, 0.0)),
            move |_| g2.clone(),
            0.0,
            1e-2,
            &psi,
        )
        .unwrap();
        let g3 = g.clone();
        let g4 = g.clone();
        let res_h2 = weyl_derivative_check(
            move |s| g3.scale(C64::new(s, 0.0)),
            move |_| g4.clone(),
            0.0,
            5e-3,
            &psi,
        )
        .unwrap();
        let ratio = res_h / res_h2;
        assert!(ratio > 3.0 && ratio < 5.0, "FD order ratio {ratio} (res {res_h} {res_h2})");
    }

    #[test]
    fn number_and_energy_bounds_via_power_iteration() {
        // ‖a(f)(1+N)^{-1/2}‖ ≤ 2‖f‖₂ and ‖a(f)(1+H_f)^{-1/2}‖ ≤ 2‖f‖_ω
        let grid = small_grid(4);
        let b = build_basis(grid.mode_count(), 3).unwrap();
        let f = random_mode_fn(&grid, 0.8, 31);
        let amps = f.weighted_amplitudes();
        let f_l2 = f.l2_norm();
        let f_om = crate::modegrid::omega_norm(&f);

        let n_diag = b.dgamma_diagonal(&vec![1.0; b.mode_count]);
        let hf_diag =
            b.dgamma_diagonal(&(0..grid.mode_count()).map(|i| grid.abs_k(i)).collect::<Vec<_>>());

        for (diag, bound) in [(&n_diag, 2.0 * f_l2), (&hf_diag, 2.0 * f_om)] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
            let mut x: Vec<C64> = (0..b.dim())
                .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut norm_est = 0.0;
            for _ in 0..60 {
                let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                for xi in &mut x {
                    *xi /= nrm;
                }
                let xs: Vec<C64> =
                    x.iter().enumerate().map(|(i, z)| z / (1.0 + diag[i]).sqrt()).collect();
                let mut y = vec![C64::new(0.0, 0.0); b.dim()];
                b.accumulate_annihilation(&amps, &xs, &mut y);
                norm_est = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let mut z = vec![C64::new(0.0, 0.0); b.dim()];
                b.accumulate_creation(&amps, &y, &mut z);
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi /= (1.0 + diag[i]).sqrt();
                }
                x = z;
            }
            assert!(norm_est <= bound, "norm {norm_est} exceeds bound {bound}");
            assert!(norm_est > 0.1 * bound, "power iteration degenerate");
        }
    }

    #[test]
    fn sparse_hermiticity_defect() {
        let b = build_basis(3, 2).unwrap();
        let hf = dgamma(&[0.1, 0.2, 0.3], &b);
        assert_eq!(hf.hermiticity_defect(), 0.0);
        let a = annihilate(0, &b);
        assert!(a.hermiticity_defect() > 0.5);
    }
}
