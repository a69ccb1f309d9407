//! Geometric constants: the lower-bound function `g(α, t)`, its roots `R₀ < R₁`,
//! the mass threshold, the Sobolev constant `S` and Gagliardo–Nirenberg constants.

use crate::error::{Error, Result};
use crate::nonlinearity::{compute_c0, C0Scan, NonlinearityModel};
use crate::numeric::{bisect, gauss_legendre, sphere_area, two_star};
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::{OnceLock, RwLock};

/// `g(α, t) = 1/2 − C₀α²t⁻² − C₀S^{−2*/2}t^{2*−2}`.
pub fn g_value(c0: f64, s: f64, dim: usize, alpha: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("g is defined for t > 0, got t = {t}")));
    }
    if !(c0 > 0.0 && s > 0.0 && alpha > 0.0) || dim < 3 {
        return Err(Error::Domain("g needs positive C0, S, alpha and N >= 3".into()));
    }
    Ok(g_unchecked(c0, s, dim, alpha, t))
}

fn g_unchecked(c0: f64, s: f64, dim: usize, alpha: f64, t: f64) -> f64 {
    let ts = two_star(dim);
    0.5 - c0 * alpha * alpha / (t * t) - c0 * s.powf(-ts / 2.0) * t.powf(ts - 2.0)
}

/// Unique maximizer of `t ↦ g(α, t)t²`; it does not depend on `α`.
pub fn s_max(c0: f64, s: f64, dim: usize) -> f64 {
    let ts = two_star(dim);
    (s.powf(ts / 2.0) / (ts * c0)).powf(1.0 / (ts - 2.0))
}

/// `(2/(N−2))·(S/(2*C₀))^{N/2}`.
pub fn rho_threshold(c0: f64, s: f64, dim: usize) -> f64 {
    let n = dim as f64;
    2.0 / (n - 2.0) * (s / (two_star(dim) * c0)).powf(n / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Roots {
    Found { r0: f64, r1: f64 },
    NoThreshold,
}

/// Roots of `g(ρ, ·)`, bracketed by `0 < s_max < ∞` and refined by bisection.
pub fn find_r0_r1(c0: f64, s: f64, dim: usize, rho: f64) -> Result<Roots> {
    if !(c0 > 0.0 && s > 0.0 && rho > 0.0) || dim < 3 {
        return Err(Error::Domain("find_r0_r1 needs positive C0, S, rho and N >= 3".into()));
    }
    let thr = rho_threshold(c0, s, dim);
    if rho * rho >= thr * (1.0 - 4.0 * f64::EPSILON) {
        return Ok(Roots::NoThreshold);
    }
    let sm = s_max(c0, s, dim);
    let g = |t: f64| g_unchecked(c0, s, dim, rho, t);
    if g(sm) <= 0.0 {
        return Ok(Roots::NoThreshold);
    }
    let mut lo = sm;
    while g(lo) > 0.0 {
        lo *= 0.5;
    }
    let mut hi = sm;
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    let r0 = bisect(g, lo, sm, 0.0).expect("g changes sign on (0, s_max)");
    let r1 = bisect(g, sm, hi, 0.0).expect("g changes sign on (s_max, inf)");
    Ok(Roots::Found { r0, r1 })
}

/// `γ_q = N(q − 2)/(2q)`.
pub fn gamma_q(dim: usize, q: f64) -> f64 {
    dim as f64 * (q - 2.0) / (2.0 * q)
}

/// Talenti quotient `|∇U_μ|₂² / |U_μ|_{2*}²` with `r = μ tan θ`.
pub fn talenti_quotient(dim: usize, mu: f64, panels: usize) -> f64 {
    let n = dim as f64;
    let ts = two_star(dim);
    let w = sphere_area(dim);
    let u = |r: f64| (1.0 + (r / mu) * (r / mu)).powf(-(n - 2.0) / 2.0);
    let du = |r: f64| -(n - 2.0) * r / (mu * mu) * (1.0 + (r / mu) * (r / mu)).powf(-n / 2.0);
    let jac = |th: f64| mu / (th.cos() * th.cos());
    let grad = gauss_legendre(
        |th| {
            let r = mu * th.tan();
            let d = du(r);
            d * d * r.powf(n - 1.0) * jac(th)
        },
        0.0,
        FRAC_PI_2,
        panels,
    );
    let crit = gauss_legendre(
        |th| {
            let r = mu * th.tan();
            u(r).powf(ts) * r.powf(n - 1.0) * jac(th)
        },
        0.0,
        FRAC_PI_2,
        panels,
    );
    w * grad / (w * crit).powf(2.0 / ts)
}

/// Best Sobolev constant, as the Talenti quotient at `μ = 1` with panel doubling until it settles.
pub fn sobolev_constant(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::Domain(format!("N = {dim} must be at least 3")));
    }
    let mut panels = 16;
    let mut prev = talenti_quotient(dim, 1.0, panels);
    let mut achieved = f64::INFINITY;
    while panels < 1 << 14 {
        panels *= 2;
        let cur = talenti_quotient(dim, 1.0, panels);
        achieved = ((cur - prev) / cur).abs();
        if achieved < 1e-13 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Accuracy { achieved })
}

/// Radial ground state of `w'' + (N−1)/r·w' − λw + f(w) = 0` from the shooting method.
#[derive(Debug, Clone)]
pub struct ShootingProfile {
    pub dim: usize,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
    pub w0: f64,
}

impl ShootingProfile {
    /// Linear interpolation; zero past the truncation radius.
    pub fn eval(&self, r: f64) -> f64 {
        let h = self.r[1] - self.r[0];
        let k = (r / h).floor() as usize;
        if k + 1 >= self.r.len() {
            return 0.0;
        }
        let t = (r - self.r[k]) / h;
        (1.0 - t) * self.w[k] + t * self.w[k + 1]
    }

    fn integrate<F: Fn(usize) -> f64>(&self, g: F) -> f64 {
        // Simpson on the uniform shooting nodes, radial weight included by g
        let n = self.r.len();
        let m = if n % 2 == 0 { n - 1 } else { n };
        let h = self.r[1] - self.r[0];
        let mut s = g(0) + g(m - 1);
        for i in 1..m - 1 {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i);
        }
        sphere_area(self.dim) * s * h / 3.0
    }

    pub fn lp_pow(&self, p: f64) -> f64 {
        let n = self.dim as f64;
        self.integrate(|i| self.w[i].abs().powf(p) * self.r[i].powf(n - 1.0))
    }

    pub fn grad_sq(&self) -> f64 {
        let n = self.dim as f64;
        self.integrate(|i| self.dw[i] * self.dw[i] * self.r[i].powf(n - 1.0))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShootingOptions {
    pub h: f64,
    pub r_max: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { h: 2e-3, r_max: 40.0 }
    }
}

enum Outcome {
    /// crossed zero: initial value too large
    Over,
    /// turned upward while positive: too small
    Under,
}

fn shoot_once<F: Fn(f64) -> f64>(
    dim: usize,
    lambda: f64,
    f: &F,
    w0: f64,
    opts: &ShootingOptions,
    keep: bool,
) -> (Outcome, Vec<(f64, f64, f64)>) {
    let n = dim as f64;
    let rhs = |r: f64, w: f64, v: f64| -> (f64, f64) { (v, lambda * w - f(w) - (n - 1.0) / r * v) };
    let h = opts.h;
    // series start: w ≈ w0 + c r²/2 with c = (λw0 − f(w0))/N
    let c = (lambda * w0 - f(w0)) / n;
    let mut r = h;
    let mut w = w0 + 0.5 * c * h * h;
    let mut v = c * h;
    let mut path = Vec::new();
    if keep {
        path.push((0.0, w0, 0.0));
        path.push((r, w, v));
    }
    let steps = (opts.r_max / h).round() as usize;
    for _ in 1..steps {
        let (k1w, k1v) = rhs(r, w, v);
        let (k2w, k2v) = rhs(r + 0.5 * h, w + 0.5 * h * k1w, v + 0.5 * h * k1v);
        let (k3w, k3v) = rhs(r + 0.5 * h, w + 0.5 * h * k2w, v + 0.5 * h * k2v);
        let (k4w, k4v) = rhs(r + h, w + h * k3w, v + h * k3v);
        w += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        r += h;
        if w < 0.0 {
            return (Outcome::Over, path);
        }
        if v > 0.0 {
            return (Outcome::Under, path);
        }
        if keep {
            path.push((r, w, v));
        }
    }
    (Outcome::Under, path)
}

/// Relative level below which the shooting path is replaced by its linear tail.
const TAIL_LEVEL: f64 = 1e-6;

/// Positive decreasing solution of `−Δw + λw = f(w)` by bisection on `w(0)`.
pub fn shoot_ground_state<F: Fn(f64) -> f64>(
    dim: usize,
    lambda: f64,
    f: F,
    opts: ShootingOptions,
) -> Result<ShootingProfile> {
    // bracket: tiny w0 undershoots, large w0 overshoots
    let mut lo = 1e-6;
    let mut hi = 1.0;
    let mut tries = 0;
    while matches!(shoot_once(dim, lambda, &f, hi, &opts, false).0, Outcome::Under) {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::Shooting {
                reason: "no overshooting initial value found".into(),
                lo,
                hi,
            });
        }
    }
    if !matches!(shoot_once(dim, lambda, &f, lo, &opts, false).0, Outcome::Under) {
        return Err(Error::Shooting {
            reason: "small initial value does not undershoot".into(),
            lo,
            hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot_once(dim, lambda, &f, mid, &opts, false).0 {
            Outcome::Over => hi = mid,
            Outcome::Under => lo = mid,
        }
    }
    let (_, path) = shoot_once(dim, lambda, &f, lo, &opts, true);
    let mut r = Vec::with_capacity(path.len());
    let mut w = Vec::with_capacity(path.len());
    let mut dw = Vec::with_capacity(path.len());
    for (ri, wi, vi) in path {
        r.push(ri);
        w.push(wi);
        dw.push(vi);
    }
    // once w is small the equation is linear: continue with the decaying
    // solution w_c (r_c/r)^{(N−1)/2} e^{−√λ(r−r_c)} instead of the diverging path
    let h = opts.h;
    let total = (opts.r_max / h).round() as usize;
    let cut = w.iter().position(|&x| x < TAIL_LEVEL * lo).unwrap_or(w.len());
    r.truncate(cut);
    w.truncate(cut);
    dw.truncate(cut);
    let (rc, wc) = (*r.last().expect("non-empty path"), *w.last().expect("non-empty path"));
    let (k, p) = (lambda.max(0.0).sqrt(), 0.5 * (dim as f64 - 1.0));
    while r.len() < total {
        let x = r.len() as f64 * h;
        let v = if k > 0.0 { wc * (rc / x).powf(p) * (-k * (x - rc)).exp() } else { 0.0 };
        r.push(x);
        w.push(v);
        dw.push(-(k + p / x) * v);
    }
    Ok(ShootingProfile {
        dim,
        r,
        w,
        dw,
        w0: lo,
    })
}

/// Optimal constant in `|u|_q ≤ C |∇u|₂^{γ_q} |u|₂^{1−γ_q}`, evaluated on the shooting optimizer.
pub fn gn_constant(dim: usize, q: f64) -> Result<f64> {
    gn_constant_with(dim, q, ShootingOptions::default())
}

pub fn gn_constant_with(dim: usize, q: f64, opts: ShootingOptions) -> Result<f64> {
    let ts = two_star(dim);
    if !(q >= 2.0 && q < ts) {
        return Err(Error::Domain(format!("q = {q} must lie in [2, {ts})")));
    }
    if q == 2.0 {
        return Ok(1.0);
    }
    let prof = shoot_ground_state(dim, 1.0, |w: f64| w.abs().powf(q - 2.0) * w, opts)?;
    Ok(gn_quotient(dim, q, prof.lp_pow(q), prof.grad_sq(), prof.lp_pow(2.0)))
}

/// `|u|_q / (|∇u|₂^γ |u|₂^{1−γ})` from `|u|_q^q`, `|∇u|₂²`, `|u|₂²`.
pub fn gn_quotient(dim: usize, q: f64, lq_pow: f64, grad_sq: f64, mass_sq: f64) -> f64 {
    let g = gamma_q(dim, q);
    lq_pow.powf(1.0 / q) / (grad_sq.powf(g / 2.0) * mass_sq.powf((1.0 - g) / 2.0))
}

/// Constants for one `(model, ρ)` pair.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub model_digest: String,
    #[serde(rename = "N")]
    pub dim: usize,
    pub c0: f64,
    pub c0_argmax: f64,
    pub s: f64,
    pub rho: f64,
    pub rho_max_sq: f64,
    pub no_threshold: bool,
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub s_max: f64,
    pub gamma_q: Vec<(f64, f64)>,
    pub c_nq: Vec<(f64, f64)>,
    pub tags: Vec<String>,
}

type CacheKey = (String, usize, u64);

fn cache() -> &'static RwLock<HashMap<CacheKey, GeometryReport>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, GeometryReport>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Geometry for `(model, ρ)`, with Gagliardo–Nirenberg constants for each requested `q`.
/// Results are cached by model digest, dimension and `ρ`; `q`-tables are computed on demand.
pub fn geometry(model: &NonlinearityModel, rho: f64, qs: &[f64]) -> Result<GeometryReport> {
    let key = (model.digest(), model.dim(), rho.to_bits());
    let cached = cache().read().expect("geometry cache poisoned").get(&key).cloned();
    let mut rep = match cached {
        Some(r) => r,
        None => {
            let dim = model.dim();
            let c0 = compute_c0(model, C0Scan::default())?;
            let s = sobolev_constant(dim)?;
            let thr = rho_threshold(c0.value, s, dim);
            let roots = find_r0_r1(c0.value, s, dim, rho)?;
            let (r0, r1) = match roots {
                Roots::Found { r0, r1 } => (Some(r0), Some(r1)),
                Roots::NoThreshold => (None, None),
            };
            let rep = GeometryReport {
                model_digest: key.0.clone(),
                dim,
                c0: c0.value,
                c0_argmax: c0.argmax,
                s,
                rho,
                rho_max_sq: thr,
                no_threshold: r0.is_none(),
                r0,
                r1,
                s_max: s_max(c0.value, s, dim),
                gamma_q: vec![],
                c_nq: vec![],
                tags: vec!["eq:C0".into(), "eq:gns".into(), "eq:rho".into(), "le:g:roots".into()],
            };
            cache().write().expect("geometry cache poisoned").insert(key, rep.clone());
            rep
        }
    };
    for &q in qs {
        rep.gamma_q.push((q, gamma_q(rep.dim, q)));
        rep.c_nq.push((q, gn_constant(rep.dim, q)?));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_examples() {
        assert!(g_value(1.0, 1.0, 3, 1.0, 1e-6).unwrap() < -1e6);
        let v = g_value(0.5, 1.0, 3, 0.1f64.sqrt(), 0.5).unwrap();
        assert!((v - 0.26875).abs() < 1e-14);
        assert!(g_value(0.5, 1.0, 3, 1.0, 0.0).is_err());
    }

    #[test]
    fn roots_example() {
        let rho = 0.1f64.sqrt();
        let Roots::Found { r0, r1 } = find_r0_r1(0.5, 1.0, 3, rho).unwrap() else {
            panic!("expected roots")
        };
        // independent oracle: bisection on y^3 - y + 0.1 in y = t^2
        let cubic = |y: f64| y * y * y - y + 0.1;
        let mut roots = Vec::new();
        for (mut a, mut b) in [(0.0f64, 0.5f64), (0.5, 1.0)] {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if cubic(a).signum() == cubic(m).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            roots.push((0.5 * (a + b)).sqrt());
        }
        assert!((r0 - roots[0]).abs() < 1e-9, "{r0} vs {}", roots[0]);
        assert!((r1 - roots[1]).abs() < 1e-9, "{r1} vs {}", roots[1]);
        assert!((r0 - 0.31788).abs() < 1e-4 && (r1 - 0.97241).abs() < 1e-4);
        assert!(g_value(0.5, 1.0, 3, rho, r0).unwrap().abs() <= 1e-10);
        assert!(g_value(0.5, 1.0, 3, rho, r1).unwrap().abs() <= 1e-10);
        let sm = s_max(0.5, 1.0, 3);
        assert!(r0 < sm && sm < r1);
    }

    #[test]
    fn threshold_exact_is_no_threshold() {
        let thr = rho_threshold(0.5, 1.0, 3);
        assert_eq!(find_r0_r1(0.5, 1.0, 3, thr.sqrt()).unwrap(), Roots::NoThreshold);
        assert_eq!(find_r0_r1(0.5, 1.0, 3, 1.1 * thr.sqrt()).unwrap(), Roots::NoThreshold);
    }

    #[test]
    fn roots_move_apart_as_rho_drops() {
        let rho = 0.1f64.sqrt();
        let Roots::Found { r0, r1 } = find_r0_r1(0.5, 1.0, 3, rho).unwrap() else { panic!() };
        let Roots::Found { r0: a, r1: b } = find_r0_r1(0.5, 1.0, 3, 0.99 * rho).unwrap() else { panic!() };
        assert!(a < r0 && b > r1);
    }

    #[test]
    fn threshold_formula() {
        assert!((rho_threshold(0.5, 1.0, 3) - 2.0 * (1.0f64 / 3.0).powf(1.5)).abs() < 1e-15);
        assert!((rho_threshold(1.0, 1.0, 4) - 1.0 / 16.0).abs() < 1e-15);
        assert!((rho_threshold(4.0, 1.0, 4) - 1.0 / 256.0).abs() < 1e-17);
    }

    #[test]
    fn sobolev_n3_matches_closed_form() {
        let s = sobolev_constant(3).unwrap();
        let exact = 3.0 * (std::f64::consts::PI / 2.0).powf(4.0 / 3.0);
        assert!((s - exact).abs() < 1e-10 * exact, "{s} vs {exact}");
        let q1 = talenti_quotient(3, 1.0, 512);
        let q2 = talenti_quotient(3, 2.0, 512);
        assert!((q1 - q2).abs() < 1e-8 * q1);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_q(3, 4.0), 0.75);
        assert_eq!(gamma_q(3, 2.0), 0.0);
        assert_eq!(gn_constant(3, 2.0).unwrap(), 1.0);
        assert!(gn_constant(3, 6.0).is_err());
    }
}
