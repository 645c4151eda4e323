//! One-dimensional quadrature kernels shared by the grid builder, the phase
//! integrals and the test oracles.
//!
//! Gauss–Legendre nodes are computed on demand by Newton iteration on the
//! Legendre recurrence, so no tabulated constants enter the crate.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Legendre polynomial P_n(x) and its derivative, by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let dp = (n as f64) * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss–Legendre rule on [-1, 1]: (nodes, weights), nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "empty quadrature rule");
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, dp) = legendre_with_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    let rule = (nodes, weights);
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (u, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let nodes = u.iter().map(|&ui| mid + half * ui).collect();
    let weights = w.iter().map(|&wi| half * wi).collect();
    (nodes, weights)
}

/// Fixed n-point Gauss–Legendre integral of `f` over [a, b].
pub fn integrate_gl<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let (xs, ws) = gauss_legendre_on(n, a, b);
    xs.iter().zip(&ws).map(|(&x, &w)| w * f(x)).sum()
}

/// Adaptive Gauss–Legendre by interval bisection, comparing a 15-point rule
/// against the sum of two 15-point halves. Tolerance is absolute + relative.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    integrate_adaptive_with_estimate(f, a, b, tol).0
}

/// Adaptive integration that also reports the accumulated error estimate.
pub fn integrate_adaptive_with_estimate<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> (f64, f64) {
    let coarse = integrate_gl(f, a, b, 15);
    let mut err = 0.0;
    let v = adaptive_rec(f, a, b, coarse, tol, 0, &mut err);
    (v, err)
}

fn adaptive_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    coarse: f64,
    tol: f64,
    depth: usize,
    err_acc: &mut f64,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = integrate_gl(f, a, mid, 15);
    let right = integrate_gl(f, mid, b, 15);
    let fine = left + right;
    let err = (fine - coarse).abs();
    if depth >= 48 || err <= tol.max(1e-16 * fine.abs()) {
        *err_acc += err;
        return fine;
    }
    adaptive_rec(f, a, mid, left, tol * 0.5, depth + 1, err_acc)
        + adaptive_rec(f, mid, b, right, tol * 0.5, depth + 1, err_acc)
}

/// Composite Gauss–Legendre with `panels` equal panels of `n` points each.
pub fn integrate_composite<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    n: usize,
) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for j in 0..panels {
        let lo = a + j as f64 * h;
        total += integrate_gl(&mut f, lo, lo + h, n);
    }
    total
}
