//! Discretized photon momentum space.
//!
//! A grid is a tensor product of a radial rule on (0, κ] and a sphere rule.
//! The 3-D quadrature weight of mode i is w_i = w_rad · r² · w_ang, so that
//! ∫d³k g(k) ≈ Σ_i w_i g(k_i). Mode amplitudes handed to the Fock layer absorb
//! √w_i, which makes the discrete ℓ² norm equal the continuum L² approximation
//! and keeps every norm identity exact on the grid.

use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// UV cutoff; fixed to one but kept in signatures.
pub const KAPPA: f64 = 1.0;

/// Smooth approximate characteristic function of the ball of radius κ:
/// 1 for r ≤ (1−ε₀)κ, a C∞ bump shoulder on ((1−ε₀)κ, κ), 0 beyond.
pub fn cutoff_chi(r: f64, kappa: f64, eps0: f64) -> f64 {
    debug_assert!(r >= 0.0);
    let inner = (1.0 - eps0) * kappa;
    if r <= inner {
        1.0
    } else if r >= kappa {
        0.0
    } else {
        let s = (r - inner) / (eps0 * kappa);
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Infrared-cut cutoff χ_{[σ,κ)}(k) = 1_{|k|≥σ} · χ_κ(k).
pub fn chi_sigma(r: f64, sigma: f64, kappa: f64, eps0: f64) -> f64 {
    if r < sigma {
        0.0
    } else {
        cutoff_chi(r, kappa, eps0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadialScheme {
    /// Gauss nodes in log r; resolves the |k|^{-3/2} singularity of f_p.
    Log,
    /// Gauss nodes in r.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSpec {
    pub count: usize,
    pub scheme: RadialScheme,
    /// Lower edge of the radial interval when sigma = 0.
    pub r_min: f64,
}

impl RadialSpec {
    pub fn log(count: usize, r_min: f64) -> Self {
        RadialSpec { count, scheme: RadialScheme::Log, r_min }
    }
    pub fn linear(count: usize, r_min: f64) -> Self {
        RadialSpec { count, scheme: RadialScheme::Linear, r_min }
    }
}

/// Sphere rules. `Axes` is the 6-point octahedron rule; `order` n ≥ 1 selects
/// a product rule with n Gauss nodes in cos θ and 2n uniform azimuths
/// (2n² nodes, exact to spherical-harmonic degree ~2n−1). Both are closed
/// under inversion k ↦ −k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSpec {
    pub order: usize,
}

impl AngularSpec {
    pub fn axes() -> Self {
        AngularSpec { order: 0 }
    }
    pub fn product(order: usize) -> Self {
        AngularSpec { order }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radial: RadialSpec,
    pub angular: AngularSpec,
    pub sigma: f64,
    pub eps0: f64,
}

impl GridSpec {
    /// Key-value config block, one `key=value` per line.
    pub fn to_kv(&self) -> String {
        let spacing = match self.radial.scheme {
            RadialScheme::Log => "log",
            RadialScheme::Linear => "linear",
        };
        format!(
            "radial.count={}\nradial.spacing={}\nradial.r_min={:e}\nangular.order={}\nsigma={:e}\neps0={:e}\n",
            self.radial.count, spacing, self.radial.r_min, self.angular.order, self.sigma, self.eps0
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut count = None;
        let mut spacing = None;
        let mut r_min = None;
        let mut order = None;
        let mut sigma = None;
        let mut eps0 = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let bad = |e: &str| Error::Config(format!("line {}: {e}", lineno + 1));
            match k.trim() {
                "radial.count" => count = Some(v.trim().parse().map_err(|_| bad("bad count"))?),
                "radial.spacing" => {
                    spacing = Some(match v.trim() {
                        "log" => RadialScheme::Log,
                        "linear" => RadialScheme::Linear,
                        other => return Err(bad(&format!("unknown spacing {other:?}"))),
                    })
                }
                "radial.r_min" => r_min = Some(v.trim().parse().map_err(|_| bad("bad r_min"))?),
                "angular.order" => order = Some(v.trim().parse().map_err(|_| bad("bad order"))?),
                "sigma" => sigma = Some(v.trim().parse().map_err(|_| bad("bad sigma"))?),
                "eps0" => eps0 = Some(v.trim().parse().map_err(|_| bad("bad eps0"))?),
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        Ok(GridSpec {
            radial: RadialSpec {
                count: count.ok_or_else(|| Error::Config("missing radial.count".into()))?,
                scheme: spacing.unwrap_or(RadialScheme::Log),
                r_min: r_min.unwrap_or(1e-3),
            },
            angular: AngularSpec { order: order.unwrap_or(0) },
            sigma: sigma.unwrap_or(0.0),
            eps0: eps0.unwrap_or(0.1),
        })
    }
}

/// Discretized photon momentum space with quadrature weights.
#[derive(Debug, Clone)]
pub struct ModeGrid {
    pub spec: GridSpec,
    pub sigma: f64,
    pub kappa: f64,
    pub eps0: f64,
    pub radial_nodes: Vec<f64>,
    pub radial_weights: Vec<f64>,
    pub angular_nodes: Vec<[f64; 3]>,
    pub angular_weights: Vec<f64>,
    mode_k: Vec<[f64; 3]>,
    mode_abs: Vec<f64>,
    mode_weight: Vec<f64>,
}

fn radial_rule(spec: &RadialSpec, lo: f64, kappa: f64, eps0: f64) -> (Vec<f64>, Vec<f64>) {
    let knot = (1.0 - eps0) * kappa;
    let mut nodes = Vec::with_capacity(spec.count);
    let mut weights = Vec::with_capacity(spec.count);
    let mut push_panel = |a: f64, b: f64, n: usize, log_map: bool| {
        if n == 0 || b <= a {
            return;
        }
        if log_map {
            let (xs, ws) = crate::quadrature::gauss_legendre_on(n, a.ln(), b.ln());
            for (x, w) in xs.iter().zip(&ws) {
                let r = x.exp();
                nodes.push(r);
                weights.push(w * r);
            }
        } else {
            let (xs, ws) = crate::quadrature::gauss_legendre_on(n, a, b);
            nodes.extend_from_slice(&xs);
            weights.extend_from_slice(&ws);
        }
    };
    let log_map = matches!(spec.scheme, RadialScheme::Log);
    if spec.count >= 6 && lo < knot {
        // reserve a slice of nodes for the cutoff shoulder
        let n_sh = (spec.count / 4).max(2);
        push_panel(lo, knot, spec.count - n_sh, log_map);
        push_panel(knot, kappa, n_sh, false);
    } else {
        push_panel(lo, kappa, spec.count, log_map);
    }
    (nodes, weights)
}

fn angular_rule(spec: &AngularSpec) -> (Vec<[f64; 3]>, Vec<f64>) {
    use std::f64::consts::PI;
    if spec.order == 0 {
        let w = 4.0 * PI / 6.0;
        let nodes = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        return (nodes, vec![w; 6]);
    }
    let n = spec.order;
    let (us, ws) = crate::quadrature::gauss_legendre(n);
    let n_phi = 2 * n;
    let w_phi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(n * n_phi);
    let mut weights = Vec::with_capacity(n * n_phi);
    for (u, wu) in us.iter().zip(&ws) {
        let s = (1.0 - u * u).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
            nodes.push([s * phi.cos(), s * phi.sin(), *u]);
            weights.push(wu * w_phi);
        }
    }
    (nodes, weights)
}

/// Build a grid; with sigma > 0 no radial node lies below sigma.
pub fn build_grid(
    radial: RadialSpec,
    angular: AngularSpec,
    sigma: f64,
    eps0: f64,
) -> Result<ModeGrid> {
    if radial.count < 2 {
        return Err(Error::GridSpec(format!("radial count {} < 2", radial.count)));
    }
    if !(0.0..KAPPA).contains(&sigma) {
        return Err(Error::GridSpec(format!("sigma {sigma} outside [0, kappa)")));
    }
    if !(0.0..1.0).contains(&eps0) || eps0 == 0.0 {
        return Err(Error::GridSpec(format!("eps0 {eps0} outside (0,1)")));
    }
    if radial.r_min <= 0.0 && sigma == 0.0 {
        return Err(Error::GridSpec("r_min must be positive when sigma = 0".into()));
    }
    let lo = if sigma > 0.0 { sigma } else { radial.r_min };
    if lo >= KAPPA {
        return Err(Error::GridSpec(format!("lower radial edge {lo} ≥ kappa")));
    }
    let (radial_nodes, radial_weights) = radial_rule(&radial, lo, KAPPA, eps0);
    let (angular_nodes, angular_weights) = angular_rule(&angular);
    if angular_nodes.is_empty() {
        return Err(Error::GridSpec("empty angular node set".into()));
    }
    let spec = GridSpec { radial, angular, sigma, eps0 };
    let mut grid = ModeGrid {
        spec,
        sigma,
        kappa: KAPPA,
        eps0,
        radial_nodes,
        radial_weights,
        angular_nodes,
        angular_weights,
        mode_k: Vec::new(),
        mode_abs: Vec::new(),
        mode_weight: Vec::new(),
    };
    grid.rebuild_modes();
    grid.validate()?;
    Ok(grid)
}

impl ModeGrid {
    fn rebuild_modes(&mut self) {
        let nm = self.radial_nodes.len() * self.angular_nodes.len();
        self.mode_k = Vec::with_capacity(nm);
        self.mode_abs = Vec::with_capacity(nm);
        self.mode_weight = Vec::with_capacity(nm);
        for (r, wr) in self.radial_nodes.iter().zip(&self.radial_weights) {
            for (e, wa) in self.angular_nodes.iter().zip(&self.angular_weights) {
                self.mode_k.push([r * e[0], r * e[1], r * e[2]]);
                self.mode_abs.push(*r);
                self.mode_weight.push(wr * r * r * wa);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        for (&r, &w) in self.radial_nodes.iter().zip(&self.radial_weights) {
            if !(r > 0.0 && r <= self.kappa) {
                return Err(Error::GridSpec(format!("radial node {r} outside (0, kappa]")));
            }
            if self.spec.sigma > 0.0 && self.sigma == self.spec.sigma && r < self.spec.sigma {
                return Err(Error::GridSpec(format!("node {r} below sigma")));
            }
            if w <= 0.0 {
                return Err(Error::GridSpec("non-positive radial weight".into()));
            }
        }
        let sphere: f64 = self.angular_weights.iter().sum();
        if (sphere - 4.0 * std::f64::consts::PI).abs() > 1e-10 {
            return Err(Error::GridSpec(format!("sphere weights sum to {sphere}")));
        }
        // inversion closure
        for (e, w) in self.angular_nodes.iter().zip(&self.angular_weights) {
            let found = self
                .angular_nodes
                .iter()
                .zip(&self.angular_weights)
                .any(|(e2, w2)| {
                    (e[0] + e2[0]).abs() < 1e-12
                        && (e[1] + e2[1]).abs() < 1e-12
                        && (e[2] + e2[2]).abs() < 1e-12
                        && (w - w2).abs() < 1e-12
                });
            if !found {
                return Err(Error::GridSpec("angular nodes not closed under inversion".into()));
            }
        }
        Ok(())
    }

    /// Same node set, different infrared cutoff. The cutoff acts on the form
    /// factors only, so ground states at different sigma share one Fock space
    /// (nodes below the new sigma simply decouple from the interaction).
    pub fn with_sigma(&self, sigma: f64) -> ModeGrid {
        let mut g = self.clone();
        g.sigma = sigma;
        g
    }

    pub fn mode_count(&self) -> usize {
        self.mode_k.len()
    }

    pub fn k(&self, i: usize) -> [f64; 3] {
        self.mode_k[i]
    }

    pub fn abs_k(&self, i: usize) -> f64 {
        self.mode_abs[i]
    }

    /// 3-D quadrature weight of mode i.
    pub fn weight(&self, i: usize) -> f64 {
        self.mode_weight[i]
    }

    pub fn abs_ks(&self) -> &[f64] {
        &self.mode_abs
    }

    pub fn weights(&self) -> &[f64] {
        &self.mode_weight
    }

    /// Smallest positive radial node.
    pub fn r_min_node(&self) -> f64 {
        self.radial_nodes.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn chi(&self, r: f64) -> f64 {
        cutoff_chi(r, self.kappa, self.eps0)
    }

    /// χ_{[σ,κ)} at radius r, with this grid's sigma.
    pub fn chi_sigma(&self, r: f64) -> f64 {
        chi_sigma(r, self.sigma, self.kappa, self.eps0)
    }

    /// Sample a continuum function of k on the grid nodes.
    pub fn sample<F: Fn([f64; 3], f64) -> C64>(self: &Arc<Self>, f: F) -> ModeFunction {
        let values = self
            .mode_k
            .iter()
            .zip(&self.mode_abs)
            .map(|(k, &r)| f(*k, r))
            .collect();
        ModeFunction { grid: Arc::clone(self), values }
    }

    /// Stable content hash for cache keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.to_kv().as_bytes());
        h.update(self.sigma.to_bits().to_le_bytes());
        for (&r, &w) in self.radial_nodes.iter().zip(&self.radial_weights) {
            h.update(r.to_bits().to_le_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
        for (e, &w) in self.angular_nodes.iter().zip(&self.angular_weights) {
            for c in e {
                h.update(c.to_bits().to_le_bytes());
            }
            h.update(w.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Complex amplitudes sampled on the grid nodes (continuum values; the √w
/// weight absorption happens at the Fock-operator boundary).
#[derive(Debug, Clone)]
pub struct ModeFunction {
    pub grid: Arc<ModeGrid>,
    pub values: Vec<C64>,
}

impl ModeFunction {
    pub fn zero(grid: &Arc<ModeGrid>) -> Self {
        ModeFunction { grid: Arc::clone(grid), values: vec![C64::new(0.0, 0.0); grid.mode_count()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Discrete approximation of ⟨f, g⟩ = ∫ f̄ g d³k.
    pub fn inner(&self, other: &ModeFunction) -> C64 {
        assert_eq!(self.len(), other.len());
        let mut acc = C64::new(0.0, 0.0);
        for ((a, b), &w) in self.values.iter().zip(&other.values).zip(self.grid.weights()) {
            acc += a.conj() * b * w;
        }
        acc
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, &w)| v.norm_sqr() * w)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Fock-layer amplitudes g(k_i)·√w_i.
    pub fn weighted_amplitudes(&self) -> Vec<C64> {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, &w)| v * w.sqrt())
            .collect()
    }

    /// Pointwise product with a scalar function of the node.
    pub fn modulate<F: Fn([f64; 3], f64) -> C64>(&self, f: F) -> ModeFunction {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * f(self.grid.k(i), self.grid.abs_k(i)))
            .collect();
        ModeFunction { grid: Arc::clone(&self.grid), values }
    }

    pub fn scale(&self, c: C64) -> ModeFunction {
        ModeFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &ModeFunction) -> ModeFunction {
        assert_eq!(self.len(), other.len());
        ModeFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &ModeFunction) -> ModeFunction {
        assert_eq!(self.len(), other.len());
        ModeFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }
}

/// ‖(1 + |k|^{-1/2}) f‖₂ under the grid quadrature.
pub fn omega_norm(f: &ModeFunction) -> f64 {
    f.values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let r = f.grid.abs_k(i);
            let fac = 1.0 + r.sqrt().recip();
            v.norm_sqr() * fac * fac * f.grid.weight(i)
        })
        .sum::<f64>()
        .sqrt()
}

/// Samples of the infrared-cut form factor v^σ(k) = λ χ_{[σ,κ)}(k)/√(2|k|).
pub fn form_factor(grid: &Arc<ModeGrid>, lambda: f64) -> ModeFunction {
    grid.sample(|_, r| C64::new(lambda * grid.chi_sigma(r) / (2.0 * r).sqrt(), 0.0))
}

/// Coupling constant and total-momentum point; |p| < 1/3 enforced.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub lambda: f64,
    pub p: [f64; 3],
}

impl CouplingConfig {
    pub fn new(lambda: f64, p: [f64; 3]) -> Result<Self> {
        let pn = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if pn >= 1.0 / 3.0 {
            return Err(Error::Config(format!("|p| = {pn:.4} outside S (needs < 1/3)")));
        }
        if !lambda.is_finite() {
            return Err(Error::Config("lambda must be finite".into()));
        }
        Ok(CouplingConfig { lambda, p })
    }
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
