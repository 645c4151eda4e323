//! Fiber Hamiltonians H_{p,σ} and their dressed normal form H^w_{p,σ}.
//!
//! The undressed fiber operator is
//!     H_{p,σ} = ½(p − P_f)² + H_f + a*(v^σ) + a(v^σ),
//! diagonal except for the one-photon interaction band. The dressed operator
//! is assembled directly in the normal form
//!     H^w_{p,σ} = ½ Σ_i Γ_i² + dΓ(α(e_k)|k|) + c_p^σ,
//!     Γ_i = ∇E_i − p_i + P_{f,i} − a*(k_i f) − a(k_i f) + ⟨f, k_i f⟩,
//! which is unitarily equivalent to H_{p,σ} for *any* gradient parameter fed
//! into f = v^σ/(|k|(1 − e_k·∇E)); conjugating with the truncated Weyl unitary
//! ([`conjugation_oracle`]) reproduces it up to occupation-cap effects only.

use crate::fock::{DressedForm, FiberOperator, FockBasis, SparseMatrix};
use crate::modegrid::{dot3, form_factor, norm3, ModeFunction, ModeGrid};
use crate::{Error, Result, C64};
use std::sync::Arc;

/// Everything the dressed assembly needs besides the basis: the gradient
/// parameter, f_{p,σ} samples, per-mode α values and the scalar c_p^σ.
#[derive(Debug, Clone)]
pub struct DressingData {
    pub p: [f64; 3],
    pub lambda: f64,
    pub grad_e: [f64; 3],
    /// f_{p,σ} sampled on the grid (real-valued).
    pub f_ps: ModeFunction,
    /// α(e) = 1 − e·∇E per mode.
    pub alpha: Vec<f64>,
    /// c_p^σ = ½p² − ½(p−∇E)² − λ²∫χ²_{[σ,κ)}/(2|k|²α) on the grid quadrature.
    pub c_scalar: f64,
    /// ⟨f, k_i f⟩ on the grid quadrature.
    pub f_k_inner: [f64; 3],
}

/// H_{p,σ} as an explicit sparse operator.
pub fn assemble_fiber(
    p: [f64; 3],
    grid: &Arc<ModeGrid>,
    lambda: f64,
    basis: &Arc<FockBasis>,
) -> Result<FiberOperator> {
    check_momentum(p)?;
    assert_eq!(grid.mode_count(), basis.mode_count);
    let dim = basis.dim();
    let diag = free_diagonal(p, grid, basis);
    let v = form_factor(grid, lambda);
    let v_amp = v.weighted_amplitudes();

    let mut trip: Vec<(u32, u32, C64)> = Vec::with_capacity(dim * (1 + 2 * basis.n_max));
    for (i, &d) in diag.iter().enumerate() {
        trip.push((i as u32, i as u32, C64::new(d, 0.0)));
    }
    // interaction band from the occupation structure: a*(v) + a(v), v real
    for i in 0..dim {
        let occ = basis.occupation(i);
        for (m, &n) in occ.iter().enumerate() {
            if n > 0 {
                let mut lower = occ.to_vec();
                lower[m] = n - 1;
                let t = basis.index_of(&lower).expect("basis closed under annihilation") as u32;
                let val = v_amp[m].re * (n as f64).sqrt();
                if val != 0.0 {
                    trip.push((t, i as u32, C64::new(val, 0.0)));
                    trip.push((i as u32, t, C64::new(val, 0.0)));
                }
            }
        }
    }
    Ok(FiberOperator::from_sparse(basis, SparseMatrix::from_triplets(dim, trip), true))
}

/// Diagonal of ½(p − P_f)² + H_f per basis state.
pub fn free_diagonal(p: [f64; 3], grid: &Arc<ModeGrid>, basis: &Arc<FockBasis>) -> Vec<f64> {
    let pf = pf_diagonals(grid, basis);
    let hf = hf_diagonal(grid, basis);
    (0..basis.dim())
        .map(|s| {
            let dx = p[0] - pf[0][s];
            let dy = p[1] - pf[1][s];
            let dz = p[2] - pf[2][s];
            0.5 * (dx * dx + dy * dy + dz * dz) + hf[s]
        })
        .collect()
}

/// Per-state photon momentum components dΓ(k_j).
pub fn pf_diagonals(grid: &Arc<ModeGrid>, basis: &Arc<FockBasis>) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|j| {
        let h: Vec<f64> = (0..grid.mode_count()).map(|i| grid.k(i)[j]).collect();
        basis.dgamma_diagonal(&h)
    })
}

/// Per-state photon energy dΓ(|k|).
pub fn hf_diagonal(grid: &Arc<ModeGrid>, basis: &Arc<FockBasis>) -> Vec<f64> {
    let h: Vec<f64> = (0..grid.mode_count()).map(|i| grid.abs_k(i)).collect();
    basis.dgamma_diagonal(&h)
}

fn check_momentum(p: [f64; 3]) -> Result<()> {
    let n = norm3(p);
    if n >= 1.0 / 3.0 {
        return Err(Error::Config(format!("|p| = {n:.4} outside S (needs < 1/3)")));
    }
    Ok(())
}

/// Build the dressing fields for a given gradient parameter.
pub fn dressing_data(
    p: [f64; 3],
    grid: &Arc<ModeGrid>,
    lambda: f64,
    grad_e: [f64; 3],
) -> Result<DressingData> {
    let gn = norm3(grad_e);
    if gn > 0.5 {
        return Err(Error::GradientBound { grad_norm: gn });
    }
    let alpha: Vec<f64> = (0..grid.mode_count())
        .map(|i| {
            let k = grid.k(i);
            let r = grid.abs_k(i);
            1.0 - dot3(k, grad_e) / r
        })
        .collect();
    let f_ps = grid.sample(|k, r| {
        let a = 1.0 - dot3(k, grad_e) / r;
        C64::new(lambda * grid.chi_sigma(r) / ((2.0 * r).sqrt() * r * a), 0.0)
    });
    // c_p^σ and ⟨f, k_i f⟩ on the same quadrature as the operators
    let mut interaction_integral = 0.0;
    let mut f_k_inner = [0.0; 3];
    for i in 0..grid.mode_count() {
        let r = grid.abs_k(i);
        let w = grid.weight(i);
        let chi = grid.chi_sigma(r);
        interaction_integral += w * chi * chi / (2.0 * r * r * alpha[i]);
        let f2 = f_ps.values[i].re * f_ps.values[i].re;
        for (j, acc) in f_k_inner.iter_mut().enumerate() {
            *acc += w * f2 * grid.k(i)[j];
        }
    }
    let dp = [p[0] - grad_e[0], p[1] - grad_e[1], p[2] - grad_e[2]];
    let c_scalar = 0.5 * dot3(p, p) - 0.5 * dot3(dp, dp) - lambda * lambda * interaction_integral;
    Ok(DressingData { p, lambda, grad_e, f_ps, alpha, c_scalar, f_k_inner })
}

/// H^w_{p,σ} in the normal form, with the Γ components applied matrix-free.
pub fn assemble_dressed(
    p: [f64; 3],
    dressing: &DressingData,
    grid: &Arc<ModeGrid>,
    basis: &Arc<FockBasis>,
) -> Result<FiberOperator> {
    check_momentum(p)?;
    assert_eq!(grid.mode_count(), basis.mode_count);
    let pf = pf_diagonals(grid, basis);
    let f_amp = dressing.f_ps.weighted_amplitudes();
    let gamma_g: [Vec<C64>; 3] =
        [0, 1, 2].map(|j| (0..grid.mode_count()).map(|i| f_amp[i] * grid.k(i)[j]).collect());
    let gamma_shift = [0, 1, 2].map(|j| dressing.grad_e[j] - p[j] + dressing.f_k_inner[j]);
    let alpha_omega: Vec<f64> =
        (0..grid.mode_count()).map(|i| dressing.alpha[i] * grid.abs_k(i)).collect();
    let number_diag = basis.dgamma_diagonal(&alpha_omega);
    Ok(FiberOperator::from_dressed(
        basis,
        DressedForm {
            gamma_diag: pf,
            gamma_shift,
            gamma_g,
            number_diag,
            c_scalar: dressing.c_scalar,
        },
    ))
}

/// Small-instance oracle: W(f_{p,σ}) H_{p,σ} W(f_{p,σ})* by explicit dense
/// conjugation with the truncated Weyl unitary, column by column.
pub fn conjugation_oracle(
    p: [f64; 3],
    grid: &Arc<ModeGrid>,
    lambda: f64,
    grad_e: [f64; 3],
    basis: &Arc<FockBasis>,
) -> Result<FiberOperator> {
    let dim = basis.dim();
    if dim > 500 {
        return Err(Error::DimensionCap { dim, cap: 500 });
    }
    let dressing = dressing_data(p, grid, lambda, grad_e)?;
    let h = assemble_fiber(p, grid, lambda, basis)?.to_dense();
    let f_amp = dressing.f_ps.weighted_amplitudes();

    let mut w = nalgebra::DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
    for j in 0..dim {
        let mut e = crate::fock::FockVector::zero(basis);
        e.amps[j] = C64::new(1.0, 0.0);
        let col = crate::fock::weyl_apply_weighted(basis, &f_amp, &e, 1e-12)?;
        for i in 0..dim {
            w[(i, j)] = col.amps[i];
        }
    }
    let conj = &w * &h * w.adjoint();
    let mut trip = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let v = conj[(i, j)];
            if v.norm() > 0.0 {
                trip.push((i as u32, j as u32, v));
            }
        }
    }
    Ok(FiberOperator::from_sparse(basis, SparseMatrix::from_triplets(dim, trip), true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, FockVector};
    use crate::modegrid::{build_grid, cutoff_chi, AngularSpec, RadialSpec, KAPPA};
    use crate::quadrature::integrate_adaptive;
    use approx::assert_relative_eq;

    fn tiny() -> (Arc<ModeGrid>, Arc<FockBasis>) {
        let grid =
            Arc::new(build_grid(RadialSpec::log(2, 1e-2), AngularSpec::axes(), 0.05, 0.1).unwrap());
        let basis = build_basis(grid.mode_count(), 2).unwrap();
        (grid, basis)
    }

    #[test]
    fn fiber_free_case_and_vacuum_expectation() {
        let (grid, basis) = tiny();
        let p = [0.1, 0.0, 0.0];
        let h0 = assemble_fiber(p, &grid, 0.0, &basis).unwrap();
        let omega = FockVector::vacuum(&basis);
        assert_relative_eq!(h0.expectation(&omega).re, 0.005, epsilon = 1e-15);
        // interaction is off-diagonal on Ω: vacuum expectation is λ-independent
        let h = assemble_fiber(p, &grid, 0.3, &basis).unwrap();
        assert_relative_eq!(h.expectation(&omega).re, 0.005, epsilon = 1e-15);
        assert_relative_eq!(h.expectation(&omega).im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn fiber_hermiticity() {
        let (grid, basis) = tiny();
        let h = assemble_fiber([0.05, 0.1, -0.02], &grid, 0.2, &basis).unwrap();
        assert!(h.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn fiber_rejects_momentum_outside_s() {
        let (grid, basis) = tiny();
        assert!(assemble_fiber([0.4, 0.0, 0.0], &grid, 0.1, &basis).is_err());
    }

    #[test]
    fn dressing_examples() {
        let (grid, _) = tiny();
        let p = [0.1, 0.05, 0.0];
        // λ = 0: f ≡ 0, c = ½p² − ½(p−∇E)²
        let ge = [0.07, 0.0, 0.0];
        let d0 = dressing_data(p, &grid, 0.0, ge).unwrap();
        assert!(d0.f_ps.values.iter().all(|v| v.norm() == 0.0));
        let want = 0.5 * dot3(p, p) - 0.5 * ((p[0] - ge[0]).powi(2) + p[1] * p[1] + p[2] * p[2]);
        assert_relative_eq!(d0.c_scalar, want, epsilon = 1e-15);

        // ∇E = 0: α ≡ 1 and f = v/|k| on the nodes
        let d = dressing_data(p, &grid, 0.3, [0.0; 3]).unwrap();
        assert!(d.alpha.iter().all(|&a| (a - 1.0).abs() < 1e-15));
        let v = form_factor(&grid, 0.3);
        for i in 0..grid.mode_count() {
            assert_relative_eq!(
                d.f_ps.values[i].re,
                v.values[i].re / grid.abs_k(i),
                epsilon = 1e-15
            );
        }

        // gradient bound enforced
        assert!(matches!(
            dressing_data(p, &grid, 0.1, [0.6, 0.0, 0.0]),
            Err(Error::GradientBound { .. })
        ));

        // α range forced by |∇E| ≤ 1/2
        let d = dressing_data(p, &grid, 0.1, [0.3, -0.2, 0.1]).unwrap();
        assert!(d.alpha.iter().all(|&a| (0.5..=1.5).contains(&a)));
    }

    #[test]
    fn c_scalar_integral_matches_radial_oracle() {
        // at ∇E = 0 the χ²/(2|k|²) integral is radial: λ² 4π ∫ χ²/2 dr
        let sigma = 0.04;
        let grid = Arc::new(
            build_grid(RadialSpec::log(72, 1e-3), AngularSpec::product(4), sigma, 0.1).unwrap(),
        );
        let lambda = 0.3;
        let p = [0.1, 0.0, 0.0];
        let d = dressing_data(p, &grid, lambda, [0.0; 3]).unwrap();
        let oracle = 4.0
            * std::f64::consts::PI
            * integrate_adaptive(
                &|r: f64| cutoff_chi(r, KAPPA, 0.1).powi(2) / 2.0,
                sigma,
                KAPPA,
                1e-13,
            );
        let c_oracle = -lambda * lambda * oracle;
        assert_relative_eq!(d.c_scalar, c_oracle, max_relative = 1e-8);
    }

    #[test]
    fn dressed_free_case_at_p_zero() {
        let (grid, basis) = tiny();
        let p = [0.0; 3];
        let d = dressing_data(p, &grid, 0.0, p).unwrap();
        let hw = assemble_dressed(p, &d, &grid, &basis).unwrap();
        let omega = FockVector::vacuum(&basis);
        // ground energy 0 + c_scalar = 0 at p = 0, λ = 0
        assert_relative_eq!(hw.expectation(&omega).re, 0.0, epsilon = 1e-15);
        assert!(hw.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn dressed_equals_fiber_at_lambda_zero_grad_p() {
        // λ = 0, ∇E = p: Γ = P_f and H^w = ½P_f² + H_f − p·P_f + ½p² = H_p
        let (grid, basis) = tiny();
        let p = [0.12, -0.04, 0.08];
        let d = dressing_data(p, &grid, 0.0, p).unwrap();
        let hw = assemble_dressed(p, &d, &grid, &basis).unwrap();
        let h = assemble_fiber(p, &grid, 0.0, &basis).unwrap();
        let dense_w = hw.to_dense();
        let dense_f = h.to_dense();
        let mut worst = 0.0f64;
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                worst = worst.max((dense_w[(i, j)] - dense_f[(i, j)]).norm());
            }
        }
        assert!(worst < 1e-13, "normal form mismatch {worst}");
    }
}
