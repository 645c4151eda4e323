//! Oscillatory 1-D integrals ∫ f(r) e^{iτr} dr for smooth f and arbitrary τ.
//!
//! Each panel interpolates the smooth factor by a degree-15 Legendre expansion
//! (from a 16-point Gauss sample) and applies the exact oscillatory moments
//! ∫ P_n(u) e^{iζu} du = 2 iⁿ jₙ(ζ), so the cost is independent of the
//! frequency. Panels bisect adaptively on a two-half comparison.
//!
//! Also hosts the sine integral Si and the cosine-based Cin that the radial
//! phase profiles reduce to on the flat part of the momentum cutoff.

use crate::C64;
use std::sync::OnceLock;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const PANEL_N: usize = 16;

/// Spherical Bessel functions j_0..j_nmax at x ≥ 0.
pub fn spherical_bessel_seq(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x < 1e-4 {
        // series around zero, double factorial normalization
        let mut dfact = 1.0; // (2n+1)!!
        let mut xn = 1.0;
        for (n, slot) in out.iter_mut().enumerate() {
            if n > 0 {
                dfact *= 2.0 * n as f64 + 1.0;
                xn *= x;
            }
            let x2 = x * x;
            let c1 = 2.0 * (2.0 * n as f64 + 3.0);
            let c2 = 8.0 * (2.0 * n as f64 + 3.0) * (2.0 * n as f64 + 5.0);
            *slot = xn / if n == 0 { 1.0 } else { dfact } * (1.0 - x2 / c1 + x2 * x2 / c2);
        }
        // n = 0 normalization: (2*0+1)!! = 1, handled above
        return out;
    }
    let j0 = x.sin() / x;
    if nmax == 0 {
        out[0] = j0;
        return out;
    }
    let j1 = x.sin() / (x * x) - x.cos() / x;
    if x > nmax as f64 {
        // upward recurrence is stable here
        out[0] = j0;
        out[1] = j1;
        for n in 1..nmax {
            out[n + 1] = (2.0 * n as f64 + 1.0) / x * out[n] - out[n - 1];
        }
        return out;
    }
    // Miller's downward recurrence
    let start = nmax + 16 + (x as usize);
    let mut fp = 0.0f64;
    let mut fc = 1e-280f64;
    let mut tmp = vec![0.0; nmax + 1];
    for n in (0..start).rev() {
        let fm = (2.0 * (n as f64 + 1.0) + 1.0) / x * fc - fp;
        if n <= nmax {
            tmp[n] = fm;
        }
        fp = fc;
        fc = fm;
        if fc.abs() > 1e260 {
            // rescale to avoid overflow
            let s = 1e-260;
            fp *= s;
            fc *= s;
            for v in tmp.iter_mut() {
                *v *= s;
            }
        }
    }
    let scale = j0 / tmp[0];
    for (o, t) in out.iter_mut().zip(&tmp) {
        *o = t * scale;
    }
    out
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>, Vec<[f64; PANEL_N]>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>, Vec<[f64; PANEL_N]>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (u, w) = crate::quadrature::gauss_legendre(PANEL_N);
        // legendre[k][n] = P_n(u_k)
        let mut leg = vec![[0.0; PANEL_N]; PANEL_N];
        for (k, &uk) in u.iter().enumerate() {
            let mut p_prev = 1.0;
            let mut p = uk;
            leg[k][0] = 1.0;
            leg[k][1] = uk;
            for n in 1..PANEL_N - 1 {
                let nf = n as f64;
                let p_next = ((2.0 * nf + 1.0) * uk * p - nf * p_prev) / (nf + 1.0);
                p_prev = p;
                p = p_next;
                leg[k][n + 1] = p;
            }
        }
        (u, w, leg)
    })
}

/// Single Filon–Legendre panel: ∫_a^b f(r) e^{iτ r} dr.
fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tau: f64) -> C64 {
    let (u, w, leg) = gl16();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut coeff = [0.0f64; PANEL_N];
    for k in 0..PANEL_N {
        let fk = f(mid + half * u[k]) * w[k];
        for (n, c) in coeff.iter_mut().enumerate() {
            *c += fk * leg[k][n];
        }
    }
    for (n, c) in coeff.iter_mut().enumerate() {
        *c *= (2.0 * n as f64 + 1.0) / 2.0;
    }
    let zeta = tau * half;
    let j = spherical_bessel_seq(PANEL_N - 1, zeta.abs());
    // ∫_{-1}^{1} P_n(u) e^{iζu} du = 2 iⁿ jₙ(ζ); jₙ(-ζ) = (-1)ⁿ jₙ(ζ)
    let mut acc = C64::new(0.0, 0.0);
    for (n, &c) in coeff.iter().enumerate() {
        let jn = if zeta >= 0.0 || n % 2 == 0 { j[n] } else { -j[n] };
        let i_pow = match n % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        acc += i_pow * (2.0 * c * jn);
    }
    let phase = C64::new(0.0, tau * mid).exp();
    half * phase * acc
}

fn osc_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tau: f64,
    coarse: C64,
    tol: f64,
    depth: usize,
    err: &mut f64,
) -> C64 {
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid, tau);
    let right = panel(f, mid, b, tau);
    let fine = left + right;
    let delta = (fine - coarse).norm();
    if depth >= 40 || delta <= tol {
        *err += delta;
        return fine;
    }
    osc_rec(f, a, mid, tau, left, tol * 0.5, depth + 1, err)
        + osc_rec(f, mid, b, tau, right, tol * 0.5, depth + 1, err)
}

/// ∫_a^b f(r) e^{iτ r} dr with adaptive Filon panels; returns (value, error estimate).
pub fn integrate_exp<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tau: f64, tol: f64) -> (C64, f64) {
    if a == b {
        return (C64::new(0.0, 0.0), 0.0);
    }
    let coarse = panel(f, a, b, tau);
    let mut err = 0.0;
    let v = osc_rec(f, a, b, tau, coarse, tol, 0, &mut err);
    (v, err)
}

/// ∫_a^b f(r) sin(τ r) dr for real f.
pub fn integrate_sin<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tau: f64, tol: f64) -> (f64, f64) {
    let (v, e) = integrate_exp(f, a, b, tau, tol);
    (v.im, e)
}

/// ∫_a^b f(r) cos(τ r) dr for real f.
pub fn integrate_cos<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tau: f64, tol: f64) -> (f64, f64) {
    let (v, e) = integrate_exp(f, a, b, tau, tol);
    (v.re, e)
}

/// Asymptotic auxiliary functions: Si(x) = π/2 − f cos x − g sin x,
/// Ci(x) = f sin x − g cos x, valid for large x.
fn asymp_fg(x: f64) -> (f64, f64) {
    let x2 = x * x;
    let mut f = 0.0;
    let mut term = 1.0 / x;
    let mut k = 0u32;
    loop {
        f += term;
        let next = -term * ((2 * k + 1) as f64) * ((2 * k + 2) as f64) / x2;
        if next.abs() >= term.abs() || next.abs() < 1e-18 * f.abs() {
            break;
        }
        term = next;
        k += 1;
    }
    let mut g = 0.0;
    let mut term = 1.0 / x2;
    let mut k = 0u32;
    loop {
        g += term;
        let next = -term * ((2 * k + 2) as f64) * ((2 * k + 3) as f64) / x2;
        if next.abs() >= term.abs() || next.abs() < 1e-18 * g.abs() {
            break;
        }
        term = next;
        k += 1;
    }
    (f, g)
}

/// Sine integral Si(x) = ∫_0^x sin(t)/t dt.
pub fn si(x: f64) -> f64 {
    if x < 0.0 {
        return -si(-x);
    }
    if x <= 12.0 {
        // Maclaurin series
        let mut sum = 0.0_f64;
        let mut term = x;
        let mut k = 0u32;
        while term.abs() > 1e-18 * (1.0 + sum.abs()) && k < 80 {
            sum += term / (2.0 * k as f64 + 1.0);
            term *= -x * x / ((2.0 * k as f64 + 2.0) * (2.0 * k as f64 + 3.0));
            k += 1;
        }
        return sum;
    }
    if x < 40.0 {
        let base = si(12.0);
        return base + crate::quadrature::integrate_composite(|t| t.sin() / t, 12.0, x, 10, 16);
    }
    let (f, g) = asymp_fg(x);
    std::f64::consts::FRAC_PI_2 - f * x.cos() - g * x.sin()
}

/// Cin(x) = ∫_0^x (1 − cos t)/t dt; even in x, grows like log|x|.
pub fn cin(x: f64) -> f64 {
    let x = x.abs();
    if x <= 12.0 {
        let mut sum = 0.0_f64;
        // Σ_{k≥1} (−1)^{k+1} x^{2k}/((2k)(2k)!)
        let mut term = x * x / 2.0; // k = 1 numerator: x²/2! = x²/2
        let mut k = 1u32;
        while term.abs() > 1e-18 * (1.0 + sum.abs()) && k < 80 {
            sum += term / (2.0 * k as f64);
            term *= -x * x / ((2.0 * k as f64 + 1.0) * (2.0 * k as f64 + 2.0));
            k += 1;
        }
        return sum;
    }
    if x < 40.0 {
        let base = cin(12.0);
        return base
            + crate::quadrature::integrate_composite(|t| (1.0 - t.cos()) / t, 12.0, x, 10, 16);
    }
    let (f, g) = asymp_fg(x);
    let ci = f * x.sin() - g * x.cos();
    EULER_GAMMA + x.ln() - ci
}
