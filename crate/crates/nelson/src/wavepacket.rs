//! Infraparticle wave-packet integrands and the Cook-method studies.
//!
//! The object of interest is the x-indexed Fock field
//!
//!   Ψ_t(x) = ∫d³p e^{i(p·x − E_p t)} e^{iγ(p,x,t)} [iγ_int] h(p) W(f_p m(t,x)) φ_p,
//!
//! and everything downstream only needs ‖Ψ_t‖_{L²(dx)}: the full-space
//! unitaries e^{iHt} and e^{−iP_f·x} drop out of every norm, so no time
//! evolution is ever computed. Two reductions keep the desk-scale cost flat:
//!
//! * the p-integral is a tensor-Gauss rule in the smooth factor only; the
//!   oscillatory phase e^{i(p·x − p²t/2)} is integrated exactly against the
//!   per-axis Lagrange interpolation basis (vector-valued Filon), so a 12³
//!   rule stays accurate at t = 10³ where classic quadrature would need ~10⁹
//!   nodes. The residual non-quadratic phase (E_p minus its quadratic fit) is
//!   smooth and small and rides along in the smooth factor;
//! * for norm studies the x-integral runs along a single ray with 4πr²
//!   weights: h is radial and E_p rotation invariant, so ‖Ψ_t(x)‖ depends on
//!   |x| only, up to the p-quadrature anisotropy which the refinement check
//!   budgets.

use crate::fock::{poisson_tail, weyl_apply_weighted, FockBasis, FockVector};
use crate::modegrid::{dot3, norm3, ModeGrid};
use crate::phases::{PhaseEvaluator, VelocityField};
use crate::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::spectral::{solve_dressed, SolveOptions};
use crate::{Error, Result, C64};
use rayon::prelude::*;
use std::sync::Arc;

/// Smooth radial bump h(p) of radius `r_h` centered at `center`.
pub fn bump_h(p: [f64; 3], center: [f64; 3], r_h: f64) -> f64 {
    let d = norm3([p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
    let s = d / r_h;
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// ‖h‖₂ of the radial bump (4π ∫ p²h² dp, adaptive).
pub fn bump_l2_norm(r_h: f64) -> f64 {
    let v = crate::quadrature::integrate_adaptive(
        &|q: f64| {
            let b = bump_h([q, 0.0, 0.0], [0.0; 3], r_h);
            q * q * b * b
        },
        0.0,
        r_h,
        1e-13,
    );
    (4.0 * std::f64::consts::PI * v).sqrt()
}

/// (F⁻¹h)(x) for the centered radial bump: (2π)^{−3/2} 4π ∫ p² h sinc(p|x|) dp.
pub fn bump_inverse_fourier(r: f64, r_h: f64) -> f64 {
    let v = crate::quadrature::integrate_adaptive(
        &|q: f64| {
            let b = bump_h([q, 0.0, 0.0], [0.0; 3], r_h);
            let z = q * r;
            let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
            q * q * b * sinc
        },
        0.0,
        r_h,
        1e-12,
    );
    (2.0 * std::f64::consts::PI).powf(-1.5) * 4.0 * std::f64::consts::PI * v
}

/// Packet configuration: bump support, p-rule order, working cutoff.
#[derive(Debug, Clone)]
pub struct PacketConfig {
    pub r_h: f64,
    pub center: [f64; 3],
    pub p_nodes_per_axis: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub c0: f64,
    pub c1: f64,
    /// Krylov tolerance for the Weyl applications
    pub krylov_tol: f64,
    /// eigensolver tolerance for the per-node ground states
    pub solver_tol: f64,
}

impl PacketConfig {
    pub fn new(lambda: f64, sigma: f64) -> Self {
        PacketConfig {
            r_h: 0.25,
            center: [0.0; 3],
            p_nodes_per_axis: 12,
            lambda,
            sigma,
            c0: 0.6,
            c1: 1.4,
            krylov_tol: 1e-9,
            solver_tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if norm3(self.center) + self.r_h >= 1.0 / 3.0 {
            return Err(Error::Config(format!(
                "|p₀| + r_h = {} must stay below 1/3",
                norm3(self.center) + self.r_h
            )));
        }
        if self.p_nodes_per_axis < 4 {
            return Err(Error::Config("need at least 4 p-nodes per axis".into()));
        }
        Ok(())
    }
}

/// One active (h > 0) tensor-product momentum node.
#[derive(Debug, Clone)]
struct PNode {
    idx: [usize; 3],
    p: [f64; 3],
    h: f64,
    energy: f64,
    grad_e: [f64; 3],
    /// f_p(k_i)·√w_i per mode
    f_amp: Vec<f64>,
    /// e^{−i(E_p − c₀ − c₂p²/2)t} is applied at assembly time from these
    energy_residual: f64,
}

/// x-sample with 3-D quadrature weight.
#[derive(Debug, Clone, Copy)]
pub struct XPoint {
    pub x: [f64; 3],
    pub weight: f64,
}

/// Position sampling: a weighted radial ray for norm studies, or a cubic grid
/// for finite-difference checks.
#[derive(Debug, Clone)]
pub struct XSet {
    pub points: Vec<XPoint>,
    pub descriptor: String,
}

impl XSet {
    /// Gauss panels along the ẑ ray with 4πr² weights, refined around the
    /// light cone: [0, c₀t], [c₀t, c₁t], [c₁t, 1.5·c₁t].
    pub fn radial_auto(t: f64, c0: f64, c1: f64, nodes: usize) -> XSet {
        let extent = (1.5 * c1 * t).max(40.0);
        let mut panels: Vec<(f64, f64, usize)> = Vec::new();
        let inner = c0 * t;
        let cone = c1 * t;
        if inner > 2.0 && cone < extent {
            let n1 = (nodes * 2) / 5;
            let n2 = (nodes * 2) / 5;
            let n3 = nodes - n1 - n2;
            panels.push((0.0, inner, n1));
            panels.push((inner, cone, n2));
            panels.push((cone, extent, n3));
        } else {
            panels.push((0.0, extent, nodes));
        }
        let mut points = Vec::with_capacity(nodes);
        for (a, b, n) in panels {
            let (rs, ws) = gauss_legendre_on(n.max(2), a, b);
            for (r, w) in rs.iter().zip(&ws) {
                points.push(XPoint {
                    x: [0.0, 0.0, *r],
                    weight: 4.0 * std::f64::consts::PI * r * r * w,
                });
            }
        }
        XSet { points, descriptor: format!("radial:{nodes}@{extent:.1}") }
    }

    /// Radial ray restricted to a ball of radius `r_max` (for L²(Δ) norms).
    pub fn radial_ball(r_max: f64, nodes: usize) -> XSet {
        let (rs, ws) = gauss_legendre_on(nodes, 0.0, r_max);
        let points = rs
            .iter()
            .zip(&ws)
            .map(|(r, w)| XPoint {
                x: [0.0, 0.0, *r],
                weight: 4.0 * std::f64::consts::PI * r * r * w,
            })
            .collect();
        XSet { points, descriptor: format!("ball:{nodes}@{r_max:.1}") }
    }

    /// Cubic grid centered at `center` with (2n+1)³ points.
    pub fn cubic(center: [f64; 3], spacing: f64, n: usize) -> XSet {
        let mut points = Vec::new();
        let w = spacing * spacing * spacing;
        let m = n as isize;
        for i in -m..=m {
            for j in -m..=m {
                for k in -m..=m {
                    points.push(XPoint {
                        x: [
                            center[0] + spacing * i as f64,
                            center[1] + spacing * j as f64,
                            center[2] + spacing * k as f64,
                        ],
                        weight: w,
                    });
                }
            }
        }
        XSet { points, descriptor: format!("cubic:{}^3@{spacing}", 2 * n + 1) }
    }
}

/// Which bracketed integrand to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrandMode {
    /// e^{iγ} h W(f_p m) φ_p
    Psi,
    /// e^{iγ} iγ_int h W(f_p m) φ_p — the Cook integrand
    DPsi,
}

/// Assembled field: per-x norms (and optionally vectors) plus the L²(dx) norm
/// of the bracketed integrand. ‖∂_tψ_t‖ = (2π)^{−3/2}·`l2_norm` in DPsi mode.
#[derive(Debug, Clone)]
pub struct PacketField {
    pub t: f64,
    pub mode: IntegrandMode,
    pub xs: XSet,
    pub norms: Vec<f64>,
    pub l2_norm: f64,
    /// worst per-(p,x) Poisson occupation tail encountered
    pub tail_max: f64,
    pub vectors: Option<Vec<FockVector>>,
}

impl PacketField {
    pub fn psi_norm(&self) -> f64 {
        (2.0 * std::f64::consts::PI).powf(-1.5) * self.l2_norm
    }
}

/// Wave-packet assembler: holds the grid, basis, dispersion field, phase
/// evaluator and one dressed ground state per active momentum node.
pub struct PacketAssembler {
    pub cfg: PacketConfig,
    pub grid: Arc<ModeGrid>,
    pub basis: Arc<FockBasis>,
    pub field: VelocityField,
    pub phase: PhaseEvaluator,
    nodes_1d: [Vec<f64>; 3],
    weights_1d: [Vec<f64>; 3],
    active: Vec<PNode>,
    ground: Vec<FockVector>,
    prepared: bool,
    /// quadratic fit E_p ≈ c₀ + c₂ p²/2 used for the exact phase moments
    c0_fit: f64,
    c2_fit: f64,
}

impl PacketAssembler {
    pub fn new(
        cfg: PacketConfig,
        grid: Arc<ModeGrid>,
        basis: Arc<FockBasis>,
        field: VelocityField,
    ) -> Result<Self> {
        cfg.validate()?;
        assert_eq!(grid.mode_count(), basis.mode_count);
        let phase = PhaseEvaluator::with_params(
            cfg.lambda,
            field.clone(),
            grid.kappa,
            grid.eps0,
            1e-9,
            cfg.c0,
            cfg.c1,
        );
        let n = cfg.p_nodes_per_axis;
        let mut nodes_1d: [Vec<f64>; 3] = Default::default();
        let mut weights_1d: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            let (xs, ws) =
                gauss_legendre_on(n, cfg.center[a] - cfg.r_h, cfg.center[a] + cfg.r_h);
            nodes_1d[a] = xs;
            weights_1d[a] = ws;
        }
        // active nodes: the bump mask
        let mut active = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = [nodes_1d[0][i], nodes_1d[1][j], nodes_1d[2][k]];
                    let h = bump_h(p, cfg.center, cfg.r_h);
                    if h > 0.0 {
                        active.push(PNode {
                            idx: [i, j, k],
                            p,
                            h,
                            energy: 0.0,
                            grad_e: [0.0; 3],
                            f_amp: Vec::new(),
                            energy_residual: 0.0,
                        });
                    }
                }
            }
        }
        // fill dispersion data and dressing samples
        let mut me = PacketAssembler {
            cfg,
            grid,
            basis,
            field,
            phase,
            nodes_1d,
            weights_1d,
            active,
            ground: Vec::new(),
            prepared: false,
            c0_fit: 0.0,
            c2_fit: 1.0,
        };
        me.fill_node_data();
        Ok(me)
    }

    fn fill_node_data(&mut self) {
        let grid = &self.grid;
        let lambda = self.cfg.lambda;
        for node in &mut self.active {
            node.energy = self.field.energy(node.p);
            node.grad_e = self.field.grad_e(node.p);
            node.f_amp = (0..grid.mode_count())
                .map(|i| {
                    let k = grid.k(i);
                    let r = grid.abs_k(i);
                    let alpha = 1.0 - dot3(k, node.grad_e) / r;
                    lambda * grid.chi_sigma(r) / ((2.0 * r).sqrt() * r * alpha)
                        * grid.weight(i).sqrt()
                })
                .collect();
        }
        // least-squares quadratic fit of the dispersion over the active nodes
        let n = self.active.len() as f64;
        let (mut s1, mut s2, mut se, mut sep) = (0.0, 0.0, 0.0, 0.0);
        for node in &self.active {
            let q = dot3(node.p, node.p) / 2.0;
            s1 += q;
            s2 += q * q;
            se += node.energy;
            sep += node.energy * q;
        }
        let det = n * s2 - s1 * s1;
        if det.abs() > 1e-14 {
            self.c2_fit = (n * sep - s1 * se) / det;
            self.c0_fit = (se - self.c2_fit * s1) / n;
        } else {
            self.c2_fit = 1.0;
            self.c0_fit = 0.0;
        }
        for node in &mut self.active {
            node.energy_residual =
                node.energy - self.c0_fit - self.c2_fit * dot3(node.p, node.p) / 2.0;
        }
    }

    pub fn active_node_count(&self) -> usize {
        self.active.len()
    }

    /// Solve one dressed ground state per active node (parallel, in index
    /// order). λ = 0 short-circuits to the vacuum.
    pub fn prepare_ground_states(&mut self) -> Result<()> {
        if self.cfg.lambda == 0.0 {
            self.ground = self.active.iter().map(|_| FockVector::vacuum(&self.basis)).collect();
            self.prepared = true;
            return Ok(());
        }
        let grid = Arc::clone(&self.grid);
        let basis = Arc::clone(&self.basis);
        let lambda = self.cfg.lambda;
        let tol = self.cfg.solver_tol;
        let solved: Result<Vec<FockVector>> = self
            .active
            .par_iter()
            .map(|node| {
                let gs = solve_dressed(node.p, &grid, lambda, node.grad_e, &basis, tol)?;
                let mut phi = gs.vector;
                crate::spectral::fix_phase(&mut phi);
                Ok(phi)
            })
            .collect();
        self.ground = solved?;
        self.prepared = true;
        Ok(())
    }

    /// Inject externally solved ground states (cache path); order must match
    /// the active-node order.
    pub fn set_ground_states(&mut self, states: Vec<FockVector>) -> Result<()> {
        if states.len() != self.active.len() {
            return Err(Error::Config(format!(
                "expected {} ground states, got {}",
                self.active.len(),
                states.len()
            )));
        }
        self.ground = states;
        self.prepared = true;
        Ok(())
    }

    /// Momenta of the active nodes, in assembly order.
    pub fn active_momenta(&self) -> Vec<[f64; 3]> {
        self.active.iter().map(|n| n.p).collect()
    }

    /// Per-axis oscillatory moments ∫ ℓ_j(s) e^{i(s x_a − c₂ t s²/2)} ds,
    /// integrated on panels sized by the local frequency.
    fn axis_moments(&self, axis: usize, x_a: f64, t: f64) -> Vec<C64> {
        let nodes = &self.nodes_1d[axis];
        let n = nodes.len();
        // barycentric weights
        let mut bary = vec![1.0f64; n];
        for j in 0..n {
            for k in 0..n {
                if k != j {
                    bary[j] *= nodes[j] - nodes[k];
                }
            }
            bary[j] = 1.0 / bary[j];
        }
        let lo = self.cfg.center[axis] - self.cfg.r_h;
        let hi = self.cfg.center[axis] + self.cfg.r_h;
        let c2t = self.c2_fit * t;
        let freq = x_a.abs() + c2t.abs() * hi.abs().max(lo.abs());
        let n_panels = ((freq * (hi - lo) / 3.0).ceil() as usize).clamp(1, 4000);
        let (gu, gw) = gauss_legendre(16);
        let mut moments = vec![C64::new(0.0, 0.0); n];
        let dh = (hi - lo) / n_panels as f64;
        for ip in 0..n_panels {
            let a = lo + ip as f64 * dh;
            let mid = a + 0.5 * dh;
            let half = 0.5 * dh;
            for (u, w) in gu.iter().zip(&gw) {
                let s = mid + half * u;
                let phase = C64::new(0.0, s * x_a - 0.5 * c2t * s * s).exp();
                // all Lagrange basis values at s
                let mut l_all = 1.0f64;
                for &nk in nodes.iter() {
                    l_all *= s - nk;
                }
                let wgt = w * half;
                for j in 0..n {
                    let lj = l_all * bary[j] / (s - nodes[j]);
                    moments[j] += phase * (lj * wgt);
                }
            }
        }
        moments
    }

    /// Assemble the bracketed integrand for each x sample; per-x cost is one
    /// Weyl application per active node.
    pub fn assemble_integrand(
        &self,
        t: f64,
        mode: IntegrandMode,
        xs: &XSet,
        keep_vectors: bool,
    ) -> Result<PacketField> {
        self.assemble_with(t, mode, xs, keep_vectors, false)
    }

    /// ψ_{t=0} minus the free packet (F⁻¹h)Ω, with the subtraction performed
    /// inside the same quadrature so it measures the λ-deformation only.
    pub fn assemble_deviation_from_free(&self, xs: &XSet, keep_vectors: bool) -> Result<PacketField> {
        self.assemble_with(0.0, IntegrandMode::Psi, xs, keep_vectors, true)
    }

    fn assemble_with(
        &self,
        t: f64,
        mode: IntegrandMode,
        xs: &XSet,
        keep_vectors: bool,
        subtract_free: bool,
    ) -> Result<PacketField> {
        if !self.prepared {
            let q = self.active.first().map(|n| n.p).unwrap_or_default();
            return Err(Error::MissingGroundState(q[0], q[1], q[2]));
        }
        let results: Result<Vec<(f64, f64, Option<FockVector>)>> = xs
            .points
            .par_iter()
            .map(|xp| {
                let (v, tail) = self.per_x_vector(t, mode, xp.x, subtract_free)?;
                let n = v.norm();
                Ok((n, tail, if keep_vectors { Some(v) } else { None }))
            })
            .collect();
        let results = results?;
        let mut l2 = 0.0;
        let mut tail_max: f64 = 0.0;
        let mut norms = Vec::with_capacity(results.len());
        let mut vectors = if keep_vectors { Some(Vec::with_capacity(results.len())) } else { None };
        for ((n, tail, v), xp) in results.into_iter().zip(&xs.points) {
            l2 += xp.weight * n * n;
            tail_max = tail_max.max(tail);
            norms.push(n);
            if let (Some(acc), Some(vec)) = (vectors.as_mut(), v) {
                acc.push(vec);
            }
        }
        Ok(PacketField {
            t,
            mode,
            xs: xs.clone(),
            norms,
            l2_norm: l2.sqrt(),
            tail_max,
            vectors,
        })
    }

    fn per_x_vector(
        &self,
        t: f64,
        mode: IntegrandMode,
        x: [f64; 3],
        subtract_free: bool,
    ) -> Result<(FockVector, f64)> {
        let basis = &self.basis;
        let grid = &self.grid;
        let mode_count = grid.mode_count();
        // m(t, x) per mode, shared across p-nodes
        let m: Vec<C64> = (0..mode_count)
            .map(|i| {
                let k = grid.k(i);
                let r = grid.abs_k(i);
                C64::new(0.0, -(r * t - dot3(k, x))).exp() - 1.0
            })
            .collect();
        let mx = self.axis_moments(0, x[0], t);
        let my = self.axis_moments(1, x[1], t);
        let mz = self.axis_moments(2, x[2], t);

        let mut out = FockVector::zero(basis);
        let mut free_coeff = C64::new(0.0, 0.0);
        let mut tail_max = 0.0f64;
        let mut amps = vec![C64::new(0.0, 0.0); mode_count];
        for (node, phi) in self.active.iter().zip(&self.ground) {
            let moment = mx[node.idx[0]] * my[node.idx[1]] * mz[node.idx[2]];
            if moment.norm_sqr() < 1e-40 {
                continue;
            }
            let (gamma, _) = self.phase.gamma_value(node.p, x, t);
            let mut scalar = C64::new(0.0, gamma - node.energy_residual * t).exp() * node.h;
            if mode == IntegrandMode::DPsi {
                let (gi, _) = self.phase.gamma_int_value(node.p, x, t);
                scalar *= C64::new(0.0, gi);
            }
            let coeff = scalar * moment;
            if subtract_free {
                free_coeff += node.h * moment;
            }
            let mut nsq = 0.0;
            for (a, (f, mm)) in amps.iter_mut().zip(node.f_amp.iter().zip(&m)) {
                *a = f * mm;
                nsq += a.norm_sqr();
            }
            tail_max = tail_max.max(poisson_tail(basis.n_max, nsq));
            let moved = weyl_apply_weighted(basis, &amps, phi, self.cfg.krylov_tol)?;
            out.axpy(coeff, &moved);
        }
        // the p-independent part of the quadratic dispersion fit is a global
        // phase; apply it so vector-valued consumers see the right field
        out.scale(C64::new(0.0, -self.c0_fit * t).exp());
        if subtract_free {
            let vac = basis.vacuum_index();
            out.amps[vac] -= free_coeff * C64::new(0.0, -self.c0_fit * 0.0).exp();
        }
        Ok((out, tail_max))
    }

    /// Triangle-inequality envelope for the per-x norm of the psi integrand:
    /// ∫dp |h| (W unitary, ‖φ_p‖ = 1).
    pub fn h_l1_bound(&self) -> f64 {
        self.active
            .iter()
            .map(|n| {
                n.h * self.weights_1d[0][n.idx[0]]
                    * self.weights_1d[1][n.idx[1]]
                    * self.weights_1d[2][n.idx[2]]
            })
            .sum()
    }

    /// Right side of the domain identity at component `comp`:
    /// Σ_p (phase) h W(f_p m) (p_i − P^w_{f,i})² φ_p.
    fn per_x_domain_rhs(&self, t: f64, x: [f64; 3], comp: usize) -> Result<FockVector> {
        if !self.prepared {
            return Err(Error::MissingGroundState(0.0, 0.0, 0.0));
        }
        let basis = &self.basis;
        let grid = &self.grid;
        let mode_count = grid.mode_count();
        let m: Vec<C64> = (0..mode_count)
            .map(|i| {
                let k = grid.k(i);
                let r = grid.abs_k(i);
                C64::new(0.0, -(r * t - dot3(k, x))).exp() - 1.0
            })
            .collect();
        let pf = crate::hamiltonian::pf_diagonals(grid, basis);
        let mx = self.axis_moments(0, x[0], t);
        let my = self.axis_moments(1, x[1], t);
        let mz = self.axis_moments(2, x[2], t);
        let mut out = FockVector::zero(basis);
        let mut amps = vec![C64::new(0.0, 0.0); mode_count];
        for (node, phi) in self.active.iter().zip(&self.ground) {
            let moment = mx[node.idx[0]] * my[node.idx[1]] * mz[node.idx[2]];
            if moment.norm_sqr() < 1e-40 {
                continue;
            }
            let (gamma, _) = self.phase.gamma_value(node.p, x, t);
            let scalar = C64::new(0.0, gamma - node.energy_residual * t).exp() * node.h;
            // (p_i − P^w_i) = (p_i − ⟨f, k_i f⟩) − P_{f,i} + a*(k_i f) + a(k_i f)
            let kf: Vec<C64> = (0..mode_count)
                .map(|i| C64::new(node.f_amp[i] * grid.k(i)[comp], 0.0))
                .collect();
            let f_k_inner: f64 = (0..mode_count)
                .map(|i| node.f_amp[i] * node.f_amp[i] * grid.k(i)[comp])
                .sum();
            let shift = node.p[comp] - f_k_inner;
            let apply_op = |v: &FockVector| {
                let mut w = FockVector::zero(basis);
                for s in 0..basis.dim() {
                    w.amps[s] = (shift - pf[comp][s]) * v.amps[s];
                }
                let mut one = vec![C64::new(0.0, 0.0); basis.dim()];
                basis.accumulate_creation(&kf, &v.amps, &mut one);
                basis.accumulate_annihilation(&kf, &v.amps, &mut one);
                for (wi, oi) in w.amps.iter_mut().zip(&one) {
                    *wi += oi;
                }
                w
            };
            let squared = apply_op(&apply_op(phi));
            for (a, (f, mm)) in amps.iter_mut().zip(node.f_amp.iter().zip(&m)) {
                *a = f * mm;
            }
            let moved = weyl_apply_weighted(basis, &amps, &squared, self.cfg.krylov_tol)?;
            out.axpy(scalar * moment, &moved);
        }
        out.scale(C64::new(0.0, -self.c0_fit * t).exp());
        Ok(out)
    }

    /// Check (−i∂_{x_i} − P_{f,i})² Ψ_t(x) against the direct assembly of the
    /// dressed-momentum form, with ∂_x by central differences of step `h`.
    /// Returns the worst relative residual over the three components.
    pub fn domain_identity_check(&self, t: f64, x: [f64; 3], h: f64) -> Result<f64> {
        let basis = &self.basis;
        let pf = crate::hamiltonian::pf_diagonals(&self.grid, basis);
        let center = self.per_x_vector(t, IntegrandMode::Psi, x, false)?.0;
        let mut worst = 0.0f64;
        for comp in 0..3 {
            let mut xp = x;
            xp[comp] += h;
            let plus = self.per_x_vector(t, IntegrandMode::Psi, xp, false)?.0;
            xp[comp] = x[comp] - h;
            let minus = self.per_x_vector(t, IntegrandMode::Psi, xp, false)?.0;
            // (−i∂ − P)² = −∂² + 2i P ∂ + P²
            let mut lhs = FockVector::zero(basis);
            for s in 0..basis.dim() {
                let d2 = (plus.amps[s] - 2.0 * center.amps[s] + minus.amps[s]) / (h * h);
                let d1 = (plus.amps[s] - minus.amps[s]) / (2.0 * h);
                let pfs = pf[comp][s];
                lhs.amps[s] = -d2 + C64::new(0.0, 2.0 * pfs) * d1 + pfs * pfs * center.amps[s];
            }
            let rhs = self.per_x_domain_rhs(t, x, comp)?;
            let resid = lhs.sub(&rhs).norm() / rhs.norm().max(1e-300);
            worst = worst.max(resid);
        }
        Ok(worst)
    }
}

/// One row of a Cook profile.
#[derive(Debug, Clone)]
pub struct CookRow {
    pub t: f64,
    /// ‖∂_tψ_t‖ = (2π)^{−3/2} ‖integrand‖_{L²(dx)}
    pub norm: f64,
    pub slope_so_far: Option<f64>,
    pub tail_estimate: f64,
    pub err_budget: f64,
}

#[derive(Debug, Clone)]
pub struct CookProfile {
    pub rows: Vec<CookRow>,
    pub fit: Option<crate::fit::LineFit>,
    /// trapezoid over the ladder plus the power-law tail beyond
    pub integral_estimate: f64,
    pub tail_integral: f64,
}

/// ‖∂_tψ_t‖ over a geometric t-ladder with slope fit and integral estimate.
pub fn cook_profile(
    assembler: &PacketAssembler,
    t_ladder: &[f64],
    x_nodes: usize,
) -> Result<CookProfile> {
    if t_ladder.len() < 2 {
        return Err(Error::Config("cook ladder needs at least two points".into()));
    }
    let last = *t_ladder.last().unwrap();
    let first = t_ladder[0];
    if last / first < 10.0f64.powf(1.5) {
        return Err(Error::Config("cook ladder must span at least 1.5 decades".into()));
    }
    let mut rows: Vec<CookRow> = Vec::with_capacity(t_ladder.len());
    for &t in t_ladder {
        let xs = XSet::radial_auto(t, assembler.cfg.c0, assembler.cfg.c1, x_nodes);
        let field = assembler.assemble_integrand(t, IntegrandMode::DPsi, &xs, false)?;
        let norm = field.psi_norm();
        // outermost-node envelope, assuming ~r⁻² falloff past the grid
        let outer = field
            .norms
            .last()
            .map(|n| (2.0 * std::f64::consts::PI).powf(-1.5) * n)
            .unwrap_or(0.0);
        let r_outer = field.xs.points.last().map(|p| norm3(p.x)).unwrap_or(0.0);
        let err_budget =
            (4.0 * std::f64::consts::PI * outer * outer * r_outer.powi(3)).sqrt();
        let ts: Vec<f64> = rows.iter().map(|r| r.t).chain([t]).collect();
        let ns: Vec<f64> = rows.iter().map(|r| r.norm).chain([norm]).collect();
        let slope = crate::fit::loglog_fit(&ts, &ns, 1e-300).map(|f| f.slope);
        rows.push(CookRow {
            t,
            norm,
            slope_so_far: slope,
            tail_estimate: field.tail_max,
            err_budget,
        });
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ns: Vec<f64> = rows.iter().map(|r| r.norm).collect();
    let fit = crate::fit::loglog_fit(&ts, &ns, 1e-300);
    let mut integral = 0.0;
    for w in rows.windows(2) {
        integral += 0.5 * (w[0].norm + w[1].norm) * (w[1].t - w[0].t);
    }
    let tail_integral = match fit {
        Some(f) if f.slope < -1.05 => {
            let lastrow = rows.last().unwrap();
            lastrow.norm * lastrow.t / (-f.slope - 1.0)
        }
        _ => f64::INFINITY,
    };
    Ok(CookProfile { rows, fit, integral_estimate: integral + tail_integral, tail_integral })
}

/// Scalar stationary-phase study with a model dispersion: decay of
/// ψ(x,t) = ∫d³p e^{i(p·x − E_p t)} g(|p|) d³p inside and outside the cone.
#[derive(Debug, Clone)]
pub struct StationaryReport {
    pub rows: Vec<(f64, f64, f64, f64)>,
    /// fitted slope of the pointwise sup inside the cone
    pub sup_fit: Option<crate::fit::LineFit>,
    /// fitted slope of the outside-cone L² norm
    pub outside_fit: Option<crate::fit::LineFit>,
    /// max/min of the inside-cone L² norm over the ladder
    pub inside_ratio: f64,
}

pub fn stationary_envelope_check(
    field: &VelocityField,
    g_radius: f64,
    t_ladder: &[f64],
    c0: f64,
) -> Result<StationaryReport> {
    let psi = |r: f64, t: f64| -> C64 {
        // 4π ∫ p² g(p) e^{−iE_p t} sinc(pr) dp
        let re = crate::quadrature::integrate_adaptive(
            &|q: f64| {
                let g = bump_h([q, 0.0, 0.0], [0.0; 3], g_radius);
                let e = field.energy([q, 0.0, 0.0]);
                let z = q * r;
                let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
                q * q * g * sinc * (e * t).cos()
            },
            0.0,
            g_radius,
            1e-12,
        );
        let im = crate::quadrature::integrate_adaptive(
            &|q: f64| {
                let g = bump_h([q, 0.0, 0.0], [0.0; 3], g_radius);
                let e = field.energy([q, 0.0, 0.0]);
                let z = q * r;
                let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
                -q * q * g * sinc * (e * t).sin()
            },
            0.0,
            g_radius,
            1e-12,
        );
        4.0 * std::f64::consts::PI * C64::new(re, im)
    };
    let mut rows = Vec::with_capacity(t_ladder.len());
    for &t in t_ladder {
        let r_cone = c0 * t;
        // pointwise sup inside the cone
        let mut sup = 0.0f64;
        let n_scan = 220;
        for i in 0..=n_scan {
            let r = r_cone * i as f64 / n_scan as f64;
            sup = sup.max(psi(r, t).norm());
        }
        // L² inside / outside by radial Gauss panels
        let l2_on = |a: f64, b: f64, n: usize| -> f64 {
            let (rs, ws) = gauss_legendre_on(n, a, b);
            rs.iter()
                .zip(&ws)
                .map(|(r, w)| 4.0 * std::f64::consts::PI * r * r * w * psi(*r, t).norm_sqr())
                .sum::<f64>()
        };
        let inside = l2_on(0.0, r_cone, 420).sqrt();
        let outside = l2_on(r_cone, 2.5 * t.max(20.0), 420).sqrt();
        rows.push((t, sup, inside, outside));
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let outs: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let ins: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let inside_ratio = ins.iter().cloned().fold(0.0, f64::max)
        / ins.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-300);
    Ok(StationaryReport {
        rows,
        sup_fit: crate::fit::loglog_fit(&ts, &sups, 1e-300),
        outside_fit: crate::fit::loglog_fit(&ts, &outs, 1e-300),
        inside_ratio,
    })
}

/// One λ row of the non-triviality study.
#[derive(Debug, Clone)]
pub struct NontrivialityRow {
    pub lambda: f64,
    /// D(λ) = ‖ψ_{t=0} − (F⁻¹h)Ω‖_{L²(Δ)}
    pub deviation: f64,
    pub deviation_over_quarter_root: f64,
    /// measured Cook-tail budget ∫₀^∞ ‖∂_tψ_t‖ dt
    pub cook_tail: f64,
    /// certified bound ‖ψ⁺‖ ≥ ‖F⁻¹h‖_{L²(Δ)} − D(λ) − tail
    pub lower_bound: f64,
}

/// D(λ) on the ball Δ plus the certified lower bound for ‖ψ⁺‖, given a Cook
/// profile for the tail estimate.
pub fn nontriviality_row(
    assembler: &PacketAssembler,
    delta_radius: f64,
    x_nodes: usize,
    cook_tail: f64,
) -> Result<NontrivialityRow> {
    let xs = XSet::radial_ball(delta_radius, x_nodes);
    let dev = assembler.assemble_deviation_from_free(&xs, false)?;
    let deviation = dev.psi_norm();
    // independent Plancherel-side oracle for ‖F⁻¹h‖_{L²(Δ)}
    let href = {
        let (rs, ws) = gauss_legendre_on(256, 0.0, delta_radius);
        rs.iter()
            .zip(&ws)
            .map(|(r, w)| {
                let v = bump_inverse_fourier(*r, assembler.cfg.r_h);
                4.0 * std::f64::consts::PI * r * r * w * v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    let lambda = assembler.cfg.lambda;
    Ok(NontrivialityRow {
        lambda,
        deviation,
        deviation_over_quarter_root: if lambda > 0.0 {
            deviation / lambda.powf(0.25)
        } else {
            0.0
        },
        cook_tail,
        lower_bound: href - deviation - cook_tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::build_basis;
    use crate::modegrid::{build_grid, AngularSpec, RadialSpec};
    use approx::assert_relative_eq;

    fn small_assembler(lambda: f64, p_nodes: usize) -> PacketAssembler {
        let grid = Arc::new(
            build_grid(RadialSpec::log(4, 1e-2), AngularSpec::axes(), 0.05, 0.1).unwrap(),
        );
        let basis = build_basis(grid.mode_count(), 2).unwrap();
        let mut cfg = PacketConfig::new(lambda, 0.05);
        cfg.p_nodes_per_axis = p_nodes;
        let field = if lambda == 0.0 {
            VelocityField::Model { beta: 1.0 }
        } else {
            VelocityField::Model { beta: 0.9 }
        };
        PacketAssembler::new(cfg, grid, basis, field).unwrap()
    }

    #[test]
    fn missing_ground_states_is_an_error() {
        let a = small_assembler(0.1, 6);
        let xs = XSet::radial_ball(10.0, 4);
        assert!(matches!(
            a.assemble_integrand(1.0, IntegrandMode::Psi, &xs, false),
            Err(Error::MissingGroundState(..))
        ));
    }

    #[test]
    fn free_dpsi_vanishes() {
        let mut a = small_assembler(0.0, 6);
        a.prepare_ground_states().unwrap();
        let xs = XSet::radial_auto(5.0, 0.6, 1.4, 12);
        let f = a.assemble_integrand(5.0, IntegrandMode::DPsi, &xs, false).unwrap();
        assert!(f.l2_norm < 1e-14, "free Cook integrand must vanish, got {}", f.l2_norm);
    }

    #[test]
    fn free_psi_satisfies_plancherel() {
        let mut a = small_assembler(0.0, 10);
        a.prepare_ground_states().unwrap();
        let want = bump_l2_norm(a.cfg.r_h);
        for t in [0.0, 4.0, 10.0] {
            let xs = XSet::radial_auto(t, 0.6, 1.4, 96);
            let f = a.assemble_integrand(t, IntegrandMode::Psi, &xs, false).unwrap();
            let got = f.psi_norm();
            assert!(
                (got - want).abs() / want < 0.02,
                "t={t}: ‖ψ‖ = {got} vs ‖h‖₂ = {want}"
            );
        }
    }

    #[test]
    fn moments_reduce_to_plain_weights_at_zero_frequency() {
        let a = small_assembler(0.0, 8);
        let m = a.axis_moments(2, 0.0, 0.0);
        for (mj, wj) in m.iter().zip(&a.weights_1d[2]) {
            assert_relative_eq!(mj.re, *wj, epsilon = 1e-12);
            assert_relative_eq!(mj.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn moment_sum_matches_direct_oscillatory_quadrature() {
        // Σ_j f(s_j) M_j must equal ∫ f(s) e^{iθ(s)} ds for smooth f
        let a = small_assembler(0.0, 12);
        let x_a = 37.0;
        let t = 25.0;
        let m = a.axis_moments(2, x_a, t);
        let f = |s: f64| (1.0 + 3.0 * s * s).recip();
        let lhs: C64 = a.nodes_1d[2].iter().zip(&m).map(|(s, mj)| mj * f(*s)).sum();
        let c2t = a.c2_fit * t;
        let lo = a.cfg.center[2] - a.cfg.r_h;
        let hi = a.cfg.center[2] + a.cfg.r_h;
        let re = crate::quadrature::integrate_adaptive(
            &|s: f64| f(s) * (s * x_a - 0.5 * c2t * s * s).cos(),
            lo,
            hi,
            1e-13,
        );
        let im = crate::quadrature::integrate_adaptive(
            &|s: f64| f(s) * (s * x_a - 0.5 * c2t * s * s).sin(),
            lo,
            hi,
            1e-13,
        );
        assert!((lhs - C64::new(re, im)).norm() < 2e-5, "moment mismatch {}", (lhs - C64::new(re, im)).norm());
    }

    #[test]
    fn psi_norm_bounded_by_h_l1() {
        let mut a = small_assembler(0.1, 8);
        a.prepare_ground_states().unwrap();
        let bound = a.h_l1_bound();
        let xs = XSet::radial_auto(3.0, 0.6, 1.4, 24);
        let f = a.assemble_integrand(3.0, IntegrandMode::Psi, &xs, false).unwrap();
        for n in &f.norms {
            assert!(*n <= bound * (1.0 + 1e-6) + f.tail_max, "per-x norm {n} above {bound}");
        }
    }

    #[test]
    fn frozen_lambda_scaling_of_dpsi() {
        // with frozen φ_p and γ the dpsi integrand scales exactly as λ² via
        // γ_int; emulate by comparing the λ-ratio with shared ground states
        let mut a1 = small_assembler(0.05, 6);
        a1.prepare_ground_states().unwrap();
        let mut a2 = small_assembler(0.05, 6);
        a2.cfg.lambda = 0.1;
        // freeze: same φ (vacuum-ish λ=0.05 states), same f_amp/γ as a1 except
        // γ_int's λ² prefactor — emulate by scaling the phase evaluator only
        a2.phase = PhaseEvaluator::with_params(
            0.1,
            a1.field.clone(),
            a1.grid.kappa,
            a1.grid.eps0,
            1e-9,
            0.6,
            1.4,
        );
        a2.cfg.lambda = 0.05; // keep Weyl arguments and dressing frozen
        for (na, nb) in a2.active.iter_mut().zip(a1.active.iter()) {
            na.f_amp = nb.f_amp.clone();
            na.energy = nb.energy;
            na.energy_residual = nb.energy_residual;
            na.grad_e = nb.grad_e;
        }
        a2.set_ground_states(a1.ground.clone()).unwrap();
        let xs = XSet::radial_auto(4.0, 0.6, 1.4, 10);
        let f1 = a1.assemble_integrand(4.0, IntegrandMode::DPsi, &xs, false).unwrap();
        let f2 = a2.assemble_integrand(4.0, IntegrandMode::DPsi, &xs, false).unwrap();
        // γ also carries λ²; with γ frozen the ratio would be exactly 4. γ is
        // a pure phase, so norms still scale exactly with the γ_int prefactor.
        assert_relative_eq!(f2.l2_norm / f1.l2_norm, 4.0, epsilon = 1e-6);
    }

    #[test]
    fn deviation_vanishes_at_lambda_zero() {
        let mut a = small_assembler(0.0, 8);
        a.prepare_ground_states().unwrap();
        let xs = XSet::radial_ball(20.0, 32);
        let dev = a.assemble_deviation_from_free(&xs, false).unwrap();
        assert!(dev.l2_norm < 1e-12, "free deviation {}", dev.l2_norm);
        let row = nontriviality_row(&a, 20.0, 32, 0.0).unwrap();
        assert_relative_eq!(row.deviation, 0.0, epsilon = 1e-12);
        assert!(row.lower_bound > 0.0);
    }

    #[test]
    fn stationary_free_dispersion_decays_as_three_halves() {
        let field = VelocityField::Model { beta: 1.0 };
        let ladder: Vec<f64> = (0..5).map(|i| 40.0 * 2.5f64.powi(i)).collect();
        let rep = stationary_envelope_check(&field, 0.25, &ladder, 0.6).unwrap();
        let slope = rep.sup_fit.unwrap().slope;
        assert!((slope + 1.5).abs() < 0.1, "pointwise sup slope {slope}");
        assert!(rep.inside_ratio < 1.1, "inside-cone L² must stay bounded");
        let out_slope = rep.outside_fit.unwrap().slope;
        assert!(out_slope <= -0.4, "outside-cone L² slope {out_slope}");
    }

    #[test]
    fn domain_identity_free_case() {
        let mut a = small_assembler(0.0, 6);
        a.prepare_ground_states().unwrap();
        let x = [0.4, -0.2, 0.7];
        let r1 = a.domain_identity_check(2.0, x, 0.5).unwrap();
        let r2 = a.domain_identity_check(2.0, x, 0.25).unwrap();
        assert!(r1 < 1e-2, "residual {r1}");
        let order = r1 / r2;
        assert!(order > 3.0 && order < 5.0, "FD convergence order ratio {order}");
    }

    #[test]
    fn domain_identity_coupled_case() {
        let mut a = small_assembler(0.1, 6);
        a.prepare_ground_states().unwrap();
        let x = [0.3, 0.1, -0.5];
        let r = a.domain_identity_check(1.5, x, 0.2).unwrap();
        assert!(r < 1e-2, "coupled residual {r}");
    }

    #[test]
    fn cook_profile_shape_and_free_case() {
        let mut a = small_assembler(0.0, 6);
        a.prepare_ground_states().unwrap();
        let ladder: Vec<f64> = (0..4).map(|i| 10.0 * 10.0f64.powf(0.5 * i as f64)).collect();
        let prof = cook_profile(&a, &ladder, 16).unwrap();
        for row in &prof.rows {
            assert!(row.norm < 1e-14, "free profile must vanish");
        }
        // ladder validation
        assert!(cook_profile(&a, &[10.0, 20.0], 8).is_err());
    }
}
