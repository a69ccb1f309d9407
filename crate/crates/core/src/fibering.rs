//! The fibering map `φ(s) = J(s⋆u)`, the Nehari–Pohozaev functional
//! `M(u) = |∇u|₂² − (N/2)∫H(u)`, projection onto `M = {M = 0}`, the
//! `M₋/M₀/M₊` split, per-field (J1)/(J2) checks and the Descartes count for
//! multi-power models.
//!
//! All fiber quantities are evaluated from `|∇u|₂²` and the nodal values:
//! `φ(s) = s²|∇u|₂²/2 − s^{−N} Σ w F(s^{N/2}u)`, so no resampling is involved.

use crate::error::{Error, Result};
use crate::field::RadialField;
use crate::nonlinearity::{MultiPowerSpec, NonlinearityModel, PowerTerm};
use crate::numeric::{bisect, geomspace, golden_max, two_sharp, two_star};
use crate::scalar_bounds::{bound_from_above, bound_from_below};
use crate::thresholds::{g_value, gn_constant, s_max};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, Zero};
use serde::Serialize;

/// Relative tolerance on `|M(u)|/|∇u|₂²` for membership in `M`.
pub const MANIFOLD_TOL: f64 = 1e-6;
/// Dead band for `M₀`, relative to `|∇u|₂²`.
pub const M0_BAND: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    #[serde(rename = "M-")]
    MMinus,
    #[serde(rename = "M0")]
    MZero,
    #[serde(rename = "M+")]
    MPlus,
}

/// `M(u) = |∇u|₂² − (N/2)∫H(u)`.
pub fn m_functional(model: &NonlinearityModel, u: &RadialField) -> f64 {
    let n = u.dim() as f64;
    u.grad_sq() - 0.5 * n * u.integral_of(|t| model.big_h(t))
}

/// Fiber of a fixed field.
pub struct Fiber<'a> {
    model: &'a NonlinearityModel,
    u: &'a RadialField,
    g2: f64,
    n: f64,
}

impl<'a> Fiber<'a> {
    pub fn new(model: &'a NonlinearityModel, u: &'a RadialField) -> Self {
        Fiber {
            model,
            u,
            g2: u.grad_sq(),
            n: u.dim() as f64,
        }
    }

    pub fn grad_sq(&self) -> f64 {
        self.g2
    }

    fn amp(&self, s: f64) -> f64 {
        s.powf(0.5 * self.n)
    }

    pub fn phi(&self, s: f64) -> f64 {
        let a = self.amp(s);
        0.5 * s * s * self.g2 - s.powf(-self.n) * self.u.integral_of(|t| self.model.big_f(a * t))
    }

    /// `M(s⋆u)`.
    pub fn m_at(&self, s: f64) -> f64 {
        let a = self.amp(s);
        s * s * self.g2 - 0.5 * self.n * s.powf(-self.n) * self.u.integral_of(|t| self.model.big_h(a * t))
    }

    /// `φ'(s) = M(s⋆u)/s`.
    pub fn dphi(&self, s: f64) -> f64 {
        self.m_at(s) / s
    }

    /// `φ''(s) = |∇u|₂² − (N²/4)s^{−N−2} Σ w G(s^{N/2}u)`, `G = h t − (2 + 2/N)H`.
    pub fn d2phi(&self, s: f64) -> f64 {
        let a = self.amp(s);
        let g = self.u.integral_of(|t| self.model.eval_g(a * t));
        self.g2 - 0.25 * self.n * self.n * s.powf(-self.n - 2.0) * g
    }
}

/// Result of `project_to_m`.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `(N∫H(u)/(2|∇u|₂²))^{1/2}`
    pub r: f64,
    /// dilation actually applied after refinement on the grid
    pub r_refined: f64,
    pub field: RadialField,
    /// `r^{−N/2}|u|₂`
    pub mass: f64,
    /// `M` of the returned field relative to its `|∇·|₂²`
    pub residual: f64,
}

/// Closed-form `r(u)`; fails when `∫H(u) ≤ 0`.
pub fn projection_factor(model: &NonlinearityModel, u: &RadialField) -> Result<f64> {
    let ih = u.integral_of(|t| model.big_h(t));
    if !(ih > 0.0) {
        return Err(Error::NotProjectable(ih));
    }
    let g2 = u.grad_sq();
    if !(g2 > 0.0) {
        return Err(Error::NotProjectable(ih));
    }
    Ok((0.5 * u.dim() as f64 * ih / g2).sqrt())
}

/// `u(r·)` with `r = r(u)`, refined by a secant iteration so that the
/// interpolated field lies on the discrete `M`.
pub fn project_to_m(model: &NonlinearityModel, u: &RadialField) -> Result<Projection> {
    let r = projection_factor(model, u)?;
    let rel_m = |k: f64| -> Result<(f64, RadialField)> {
        let v = if k == 1.0 { u.clone() } else { u.dilate(k)? };
        let g2 = v.grad_sq();
        Ok((m_functional(model, &v) / g2, v))
    };
    let (mut m1, mut v1) = rel_m(r)?;
    let mut k1 = r;
    if m1.abs() > 1e-12 {
        let mut k0 = 1.0;
        let (mut m0, _) = rel_m(k0)?;
        for _ in 0..30 {
            if m1.abs() <= 1e-12 || m1 == m0 {
                break;
            }
            let k2 = k1 - m1 * (k1 - k0) / (m1 - m0);
            if !(k2 > 0.0 && k2.is_finite()) {
                break;
            }
            k0 = k1;
            m0 = m1;
            k1 = k2;
            let (m, v) = rel_m(k1)?;
            m1 = m;
            v1 = v;
        }
    }
    let mass = r.powf(-0.5 * u.dim() as f64) * u.mass();
    Ok(Projection {
        r,
        r_refined: k1,
        field: v1,
        mass,
        residual: m1.abs(),
    })
}

/// `(N²/4)(2_#∫H(u) − ∫h(u)u)` for `u ∈ M` within `tol·|∇u|₂²`.
pub fn phi_second_derivative_at_1_tol(model: &NonlinearityModel, u: &RadialField, tol: f64) -> Result<f64> {
    let g2 = u.grad_sq();
    let m = m_functional(model, u);
    if m.abs() > tol * g2 {
        return Err(Error::NotOnManifold { m: m.abs(), tol: tol * g2 });
    }
    let n = u.dim() as f64;
    let ts = two_sharp(u.dim());
    let v = u.integral_of(|t| ts * model.big_h(t) - model.h(t) * t);
    Ok(0.25 * n * n * v)
}

pub fn phi_second_derivative_at_1(model: &NonlinearityModel, u: &RadialField) -> Result<f64> {
    phi_second_derivative_at_1_tol(model, u, MANIFOLD_TOL)
}

pub fn classify_tol(model: &NonlinearityModel, u: &RadialField, tol: f64) -> Result<Branch> {
    let d2 = phi_second_derivative_at_1_tol(model, u, tol)?;
    Ok(branch_of(d2, u.grad_sq()))
}

pub fn classify(model: &NonlinearityModel, u: &RadialField) -> Result<Branch> {
    classify_tol(model, u, MANIFOLD_TOL)
}

fn branch_of(d2: f64, g2: f64) -> Branch {
    if d2.abs() <= M0_BAND * g2 {
        Branch::MZero
    } else if d2 < 0.0 {
        Branch::MMinus
    } else {
        Branch::MPlus
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FiberingScan {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    /// analytic `M(s⋆u)/s`
    pub dphi: Vec<f64>,
    /// analytic `φ''` at the located extrema, as `(s, φ'')`
    pub d2phi_at_extrema: Vec<(f64, f64)>,
    pub local_maxima: Vec<f64>,
    pub local_minima: Vec<f64>,
    /// the local maximum when it is unique
    pub t_u: Option<f64>,
    /// branch of `u` itself when `|M(u)| ≤ 1e−6|∇u|₂²`
    pub branch_at_1: Option<Branch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiberCertificate {
    pub local_max_count: usize,
    pub j1: bool,
    pub t_u: Option<f64>,
    /// `None` when J1 fails and `t_u` is undefined
    pub j2: Option<bool>,
    /// largest `φ'' − tol` over scanned `s > t_u`
    pub j2_worst: f64,
    pub tags: Vec<String>,
}

/// Scan `φ` on `n_s` log-spaced points of `[s_lo, s_hi]`.
pub fn fiber_scan(model: &NonlinearityModel, u: &RadialField, s_lo: f64, s_hi: f64, n_s: usize) -> Result<FiberingScan> {
    if !(s_lo > 0.0 && s_hi > s_lo && n_s >= 8) {
        return Err(Error::Domain(format!("bad scan range [{s_lo}, {s_hi}] with {n_s} points")));
    }
    if s_lo > 1e-3 || s_hi < 1e2 {
        return Err(Error::Domain(format!("scan range [{s_lo}, {s_hi}] must cover [1e-3, 1e2]")));
    }
    let fib = Fiber::new(model, u);
    if !(fib.g2 > 0.0) {
        return Err(Error::Domain("fiber of the zero field".into()));
    }
    let s = geomspace(s_lo, s_hi, n_s);
    let mut phi = Vec::with_capacity(n_s);
    let mut dphi = Vec::with_capacity(n_s);
    for &x in &s {
        let p = fib.phi(x);
        let d = fib.dphi(x);
        if !p.is_finite() || !d.is_finite() {
            return Err(Error::NonFinite(format!("fibering map at s = {x}")));
        }
        phi.push(p);
        dphi.push(d);
    }
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 0..n_s - 1 {
        let (a, b) = (dphi[i], dphi[i + 1]);
        if a > 0.0 && b <= 0.0 {
            let lo = s[i.saturating_sub(1)];
            let hi = s[(i + 2).min(n_s - 1)];
            let (t, _) = golden_max(|x| fib.phi(x), lo, hi, 1e-12 * hi);
            maxima.push(t);
        } else if a < 0.0 && b >= 0.0 {
            let t = bisect(|x| fib.dphi(x), s[i], s[i + 1], 1e-14 * s[i + 1]).unwrap_or(s[i]);
            minima.push(t);
        }
    }
    let d2phi_at_extrema = maxima.iter().chain(&minima).map(|&t| (t, fib.d2phi(t))).collect();
    let t_u = if maxima.len() == 1 { Some(maxima[0]) } else { None };
    let g2 = fib.g2;
    let branch_at_1 = if fib.m_at(1.0).abs() <= MANIFOLD_TOL * g2 {
        let n = u.dim() as f64;
        let ts = two_sharp(u.dim());
        let v = u.integral_of(|t| ts * model.big_h(t) - model.h(t) * t);
        Some(branch_of(0.25 * n * n * v, g2))
    } else {
        None
    };
    Ok(FiberingScan {
        s,
        phi,
        dphi,
        d2phi_at_extrema,
        local_maxima: maxima,
        local_minima: minima,
        t_u,
        branch_at_1,
    })
}

/// (J1): exactly one strict local maximum. (J2): centered second differences
/// of `φ` stay below `1e−7|φ| + 1e−12` beyond it.
pub fn check_j1_j2(scan: &FiberingScan) -> FiberCertificate {
    let count = scan.local_maxima.len();
    let j1 = count == 1;
    let mut worst = f64::NEG_INFINITY;
    let j2 = scan.t_u.map(|tu| {
        let s = &scan.s;
        let p = &scan.phi;
        let mut ok = true;
        for i in 1..s.len() - 1 {
            if s[i - 1] <= tu {
                continue;
            }
            let d1 = (p[i + 1] - p[i]) / (s[i + 1] - s[i]);
            let d0 = (p[i] - p[i - 1]) / (s[i] - s[i - 1]);
            let d2 = 2.0 * (d1 - d0) / (s[i + 1] - s[i - 1]);
            let excess = d2 - (1e-7 * p[i].abs() + 1e-12);
            worst = worst.max(excess);
            if excess > 0.0 {
                ok = false;
            }
        }
        ok
    });
    FiberCertificate {
        local_max_count: count,
        j1,
        t_u: scan.t_u,
        j2,
        j2_worst: worst,
        tags: vec!["J1".into(), "J2".into(), "equivM".into()],
    }
}

/// Norms entering the fibering polynomial.
#[derive(Debug, Clone, Serialize)]
pub struct DescartesNorms {
    pub grad_sq: f64,
    /// `|u|_{q}^{q}` for each subcritical term
    pub sub: Vec<f64>,
    /// `|u|_{p}^{p}` for each supercritical term
    pub sup: Vec<f64>,
}

impl DescartesNorms {
    pub fn of(spec: &MultiPowerSpec, u: &RadialField) -> Self {
        let pw = |t: &PowerTerm| u.lp_pow(t.exponent.value());
        DescartesNorms {
            grad_sq: u.grad_sq(),
            sub: spec.sub.iter().map(pw).collect(),
            sup: spec.sup.iter().map(pw).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyTerm {
    /// exponent of `τ = s^{1/m}`
    pub exponent: i64,
    /// exact coefficient `p/q`; decimal when the certificate is numeric only
    pub coefficient: String,
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Below,
    Equal,
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescartesCertificate {
    pub m: i64,
    /// `P(τ)` with `sφ'(s) = P(s^{1/m})`, ascending exponents
    pub p_terms: Vec<PolyTerm>,
    pub sign_changes: usize,
    pub max_positive_roots: usize,
    pub at_most_two: bool,
    /// signs of `s²φ''(s)` ordered by ascending exponent, zero terms dropped
    pub phi2_pattern: Vec<i8>,
    pub phi2_sign_changes: usize,
    /// smallest exponent against `2 + 2/N`
    pub q0: Side,
    /// largest subcritical exponent against `2 + 2/N`
    pub q_k: Side,
    pub j2_certified: bool,
    pub numeric_only: bool,
    pub tags: Vec<String>,
}

struct RawTerm {
    /// `N(q−2)/2` (or `2` for the gradient term)
    e: Option<Ratio<i64>>,
    e_f: f64,
    /// coefficient of `s^e` in `sφ'`
    c1: Option<BigRational>,
    c1_f: f64,
    /// coefficient of `s^e` in `s²φ''`
    c2: Option<BigRational>,
    c2_f: f64,
}

fn exact(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

fn sign_of(x: &BigRational) -> i8 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}

fn fsign(x: f64) -> i8 {
    if x == 0.0 {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

fn sign_changes(signs: &[i8]) -> usize {
    let nz: Vec<i8> = signs.iter().copied().filter(|&s| s != 0).collect();
    nz.windows(2).filter(|w| w[0] != w[1]).count()
}

fn side(x: f64, thr: f64) -> Side {
    if (x - thr).abs() <= 1e-14 * thr {
        Side::Equal
    } else if x < thr {
        Side::Below
    } else {
        Side::Above
    }
}

/// Exact sign analysis of `sφ'(s) = s²|∇u|² − Σ c_k e_k s^{e_k}`, with
/// `e_k = N(q_k − 2)/2` and `c_k = α_k|u|_{q_k}^{q_k}/q_k`.
pub fn descartes_certificate(spec: &MultiPowerSpec, dim: usize, norms: &DescartesNorms) -> Result<DescartesCertificate> {
    if norms.sub.len() != spec.sub.len() || norms.sup.len() != spec.sup.len() {
        return Err(Error::Domain("norm list does not match the model terms".into()));
    }
    if !(norms.grad_sq > 0.0) || norms.sub.iter().chain(&norms.sup).any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("all norms must be positive".into()));
    }
    let n_rat = Ratio::from_integer(dim as i64);
    let mut raw = Vec::new();
    let g = exact(norms.grad_sq);
    raw.push(RawTerm {
        e: Some(Ratio::from_integer(2)),
        e_f: 2.0,
        c1: g.clone(),
        c1_f: norms.grad_sq,
        c2: g,
        c2_f: norms.grad_sq,
    });
    for (t, &nm) in spec.sub.iter().chain(&spec.sup).zip(norms.sub.iter().chain(&norms.sup)) {
        let q = t.exponent.value();
        let e_f = 0.5 * dim as f64 * (q - 2.0);
        let c_f = t.coef * nm / q;
        let e = t.exponent.as_ratio().map(|q| n_rat * (q - 2) / 2);
        let (c1, c2) = match (t.exponent.as_ratio(), exact(t.coef), exact(nm)) {
            (Some(qr), Some(a), Some(b)) => {
                let er = e.expect("rational exponent");
                let big = |r: Ratio<i64>| BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()));
                let c = a * b / big(qr);
                let c1 = -(c.clone() * big(er));
                let c2 = -(c * big(er) * big(er - 1));
                (Some(c1), Some(c2))
            }
            _ => (None, None),
        };
        raw.push(RawTerm {
            e,
            e_f,
            c1,
            c1_f: -c_f * e_f,
            c2,
            c2_f: -c_f * e_f * (e_f - 1.0),
        });
    }
    raw.sort_by(|a, b| a.e_f.partial_cmp(&b.e_f).unwrap());
    let numeric_only = raw.iter().any(|t| t.e.is_none() || t.c1.is_none());
    let m = if numeric_only {
        1
    } else {
        raw.iter()
            .map(|t| *t.e.unwrap().denom())
            .fold(1i64, num_integer::lcm)
    };
    let p_terms: Vec<PolyTerm> = raw
        .iter()
        .map(|t| {
            if numeric_only {
                PolyTerm {
                    exponent: (t.e_f * m as f64).round() as i64,
                    coefficient: format!("{:e}", t.c1_f),
                    sign: fsign(t.c1_f),
                }
            } else {
                let e = t.e.unwrap() * m;
                let c = t.c1.as_ref().unwrap();
                PolyTerm {
                    exponent: e.to_integer(),
                    coefficient: c.to_string(),
                    sign: sign_of(c),
                }
            }
        })
        .collect();
    let signs: Vec<i8> = p_terms.iter().map(|t| t.sign).collect();
    let changes = sign_changes(&signs);
    let phi2_pattern: Vec<i8> = raw
        .iter()
        .map(|t| match &t.c2 {
            Some(c) if !numeric_only => sign_of(c),
            _ => fsign(t.c2_f),
        })
        .filter(|&s| s != 0)
        .collect();
    let phi2_changes = sign_changes(&phi2_pattern);
    let thr = 2.0 + 2.0 / dim as f64;
    let all: Vec<f64> = spec.sub.iter().chain(&spec.sup).map(|t| t.exponent.value()).collect();
    let q0 = side(all[0], thr);
    let qk_val = spec.sub.last().map(|t| t.exponent.value()).unwrap_or(all[0]);
    let q_k = side(qk_val, thr);
    // one sign change of s²φ'' (q_K ≤ 2+2/N), or the −…−,+,−…− pattern (q₀ > 2+2/N)
    let j2_certified = phi2_changes <= 1
        || (phi2_changes == 2 && phi2_pattern.first() == Some(&-1) && phi2_pattern.last() == Some(&-1));
    Ok(DescartesCertificate {
        m,
        p_terms,
        sign_changes: changes,
        max_positive_roots: changes,
        at_most_two: changes <= 2,
        phi2_pattern,
        phi2_sign_changes: phi2_changes,
        q0,
        q_k,
        j2_certified,
        numeric_only,
        tags: vec!["J1".into(), "J2".into(), "app:B1:descartes".into()],
    })
}

/// Positive roots of `φ'` located by sign changes of `sφ'(s)` on a fine log grid.
pub fn numeric_critical_points(spec: &MultiPowerSpec, dim: usize, norms: &DescartesNorms) -> usize {
    let terms: Vec<(f64, f64)> = spec
        .sub
        .iter()
        .chain(&spec.sup)
        .zip(norms.sub.iter().chain(&norms.sup))
        .map(|(t, &nm)| {
            let q = t.exponent.value();
            let e = 0.5 * dim as f64 * (q - 2.0);
            (e, t.coef * nm / q * e)
        })
        .collect();
    let p = |s: f64| norms.grad_sq * s * s - terms.iter().map(|(e, c)| c * s.powf(*e)).sum::<f64>();
    let grid = geomspace(1e-8, 1e8, 20_000);
    let vals: Vec<i8> = grid.iter().map(|&s| fsign(p(s))).collect();
    sign_changes(&vals)
}

/// `sup_{t>0} num(t)/den(t)` by a log scan and golden refinement.
fn sup_ratio<N: Fn(f64) -> f64, D: Fn(f64) -> f64>(num: N, den: D) -> f64 {
    let q = |t: f64| num(t) / den(t);
    let ts = geomspace(1e-40, 1e40, 8001);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &t) in ts.iter().enumerate() {
        let v = q(t);
        if v > best.1 {
            best = (i, v);
        }
    }
    let i = best.0;
    if i == 0 || i == ts.len() - 1 {
        return best.1;
    }
    let (_, v) = golden_max(q, ts[i - 1], ts[i + 1], 1e-13 * ts[i + 1]);
    v.max(best.1)
}

/// Sufficient small-mass bound under which `M₀ ∩ D_ρ = ∅`.
#[derive(Debug, Clone, Serialize)]
pub struct MemptyGuard {
    /// `sup H₁(t)/(t² + |t|^a)`
    pub c_h1: f64,
    /// `C(N/2)(b−2)/(b−2_#)`
    pub d: f64,
    pub eps: f64,
    /// `sup (H₂(t) − ε|t|^{2*})/|t|^b`
    pub c_eps: f64,
    pub c_na: Option<f64>,
    pub c_nb: f64,
    /// largest `ρ` meeting all three smallness conditions (sampled and bisected)
    pub rho_guard: f64,
    pub tags: Vec<String>,
}

impl MemptyGuard {
    /// The three smallness conditions at `ρ`.
    pub fn conditions(&self, dim: usize, a: Option<f64>, b: f64, s_const: f64, rho: f64) -> [bool; 3] {
        let n = dim as f64;
        let ts = two_sharp(dim);
        let tst = two_star(dim);
        let c1 = match (a, self.c_na) {
            (Some(a), Some(cna)) => {
                let p = 0.5 * n * (a - 2.0);
                let big_a = self.d * rho * rho;
                let big_b = self.d * cna.powf(a) * rho.powf(a - p);
                bound_from_above(big_a, big_b, p).map(|r| r.admissible).unwrap_or(false)
            }
            _ => true,
        };
        let a_eff = a.unwrap_or(2.0);
        let k = 0.5 * n * (tst - a_eff) / (ts - a_eff);
        let c2 = k * self.c_eps * self.c_nb.powf(b) * rho.powf(b - 0.5 * n * (b - 2.0)) <= 0.5;
        let c3 = self.d.sqrt() * rho + 0.5 < 1.0;
        let _ = s_const;
        [c1, c2, c3]
    }
}

/// Smallness bound on `ρ` from the `M₀`-emptiness argument. Models without a
/// subcritical part have `H₁ = 0` and `M₀ = ∅` for every `ρ`.
pub fn mempty_guard(model: &NonlinearityModel, s_const: f64) -> Result<MemptyGuard> {
    let dim = model.dim();
    let b = model
        .b()
        .ok_or_else(|| Error::InvalidSpec("model has no supercritical exponent b".into()))?;
    let a = model.a();
    let n = dim as f64;
    let ts = two_sharp(dim);
    let tst = two_star(dim);
    let c_nb = gn_constant(dim, b.min(tst - 1e-9))?;
    let tags = vec!["le:Mempty".into(), "lem:fromAbove".into(), "lem:fromBelow".into()];
    let a_eff = a.unwrap_or(2.0);
    let eps = s_const.powf(tst / 2.0) / n * (ts - a_eff) / (tst - a_eff);
    let c_eps = sup_ratio(|t| model.big_h2(t) - eps * t.powf(tst), |t| t.powf(b)).max(0.0);
    let Some(a) = a else {
        return Ok(MemptyGuard {
            c_h1: 0.0,
            d: 0.0,
            eps,
            c_eps,
            c_na: None,
            c_nb,
            rho_guard: f64::INFINITY,
            tags,
        });
    };
    let c_h1 = sup_ratio(|t| model.big_h1(t), |t| t * t + t.powf(a));
    let d = c_h1 * 0.5 * n * (b - 2.0) / (b - ts);
    let c_na = gn_constant(dim, a)?;
    let mut g = MemptyGuard {
        c_h1,
        d,
        eps,
        c_eps,
        c_na: Some(c_na),
        c_nb,
        rho_guard: 0.0,
        tags,
    };
    let ok = |rho: f64| g.conditions(dim, Some(a), b, s_const, rho).iter().all(|&c| c);
    let rhos = geomspace(1e-6, 1e3, 901);
    let mut last = None;
    for &r in &rhos {
        if ok(r) {
            last = Some(r);
        } else {
            break;
        }
    }
    let guard = match last {
        None => 0.0,
        Some(r) => {
            let (mut lo, mut hi) = (r, r * 10f64.powf(9.0 / 900.0));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            lo
        }
    };
    g.rho_guard = guard;
    Ok(g)
}

/// `inf_{M₋ ∩ D_ρ} |∇u|₂ ≥ xi`, with `xi` from the scalar lower bound applied to
/// `x² ≤ A x^{N(b−2)/2} + B x^{2*}`.
pub fn grad_floor_mminus(model: &NonlinearityModel, rho: f64, s_const: f64) -> Result<f64> {
    let dim = model.dim();
    let n = dim as f64;
    let ts = two_sharp(dim);
    let tst = two_star(dim);
    let b = model
        .b()
        .ok_or_else(|| Error::InvalidSpec("model has no supercritical exponent b".into()))?;
    let k = match model.a() {
        Some(a) => 0.5 * n * (tst - a) / (ts - a),
        None => 0.5 * n,
    };
    let c_h2 = sup_ratio(|t| model.big_h2(t), |t| t.powf(b) + t.powf(tst));
    let big_b = k * c_h2 * s_const.powf(-tst / 2.0);
    if b >= tst - 1e-12 {
        // single power: x² ≤ (A + B)x^{2*}
        let c_nb = 1.0 / s_const.sqrt();
        let big_a = k * c_h2 * c_nb.powf(tst);
        return Ok((big_a + big_b).powf(1.0 / (2.0 - tst)));
    }
    let c_nb = gn_constant(dim, b)?;
    let p = 0.5 * n * (b - 2.0);
    let big_a = k * c_h2 * c_nb.powf(b) * rho.powf(b - p);
    Ok(bound_from_below(big_a, big_b, p, tst)?.xi)
}

/// `∫H₂(u) − (2_# − a)/(2* − 2_#)∫H₁(u)`; positive on `M₋`.
pub fn h1_h2_margin(model: &NonlinearityModel, u: &RadialField) -> Result<f64> {
    let a = model
        .a()
        .ok_or_else(|| Error::InvalidSpec("model has no subcritical exponent a".into()))?;
    let dim = u.dim();
    let ts = two_sharp(dim);
    let tst = two_star(dim);
    let i1 = u.integral_of(|t| model.big_h1(t));
    let i2 = u.integral_of(|t| model.big_h2(t));
    Ok(i2 - (ts - a) / (tst - ts) * i1)
}

/// `g(ρ, s_max)·s_max²`, a lower bound for `J` on `M₋ ∩ D_ρ`.
pub fn energy_floor_mminus(c0: f64, s_const: f64, dim: usize, rho: f64) -> Result<f64> {
    let sm = s_max(c0, s_const, dim);
    Ok(g_value(c0, s_const, dim, rho, sm)? * sm * sm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RadialGrid;
    use crate::nonlinearity::make_multipower;
    use crate::thresholds::sobolev_constant;

    fn pure(num: i64, den: i64) -> NonlinearityModel {
        let q = num as f64 / den as f64;
        let spec = if q < 2.0 + 4.0 / 3.0 {
            MultiPowerSpec {
                sub: vec![PowerTerm::new(1.0, num, den)],
                sup: vec![],
            }
        } else {
            MultiPowerSpec {
                sub: vec![],
                sup: vec![PowerTerm::new(1.0, num, den)],
            }
        };
        make_multipower(spec, 3).unwrap()
    }

    fn gauss() -> RadialField {
        let g = RadialGrid::new(3, 4096, 20.0).unwrap();
        RadialField::gaussian(g, 1.0, 1.0)
    }

    #[test]
    fn m_matches_fiber_derivative() {
        let model = pure(4, 1);
        let u = gauss();
        let m = m_functional(&model, &u);
        let closed = u.grad_sq() - 1.5 * 0.5 * u.lp_pow(4.0);
        assert!((m - closed).abs() < 1e-12 * closed.abs().max(1.0));
        let fib = Fiber::new(&model, &u);
        let d = 1e-4;
        let fd = (fib.phi(1.0 + d) - fib.phi(1.0 - d)) / (2.0 * d);
        assert!((fd - m).abs() < 1e-5 * m.abs().max(1.0));
        let u0 = RadialField::zeros(u.grid().clone());
        assert_eq!(m_functional(&model, &u0), 0.0);
    }

    #[test]
    fn projection_closed_form() {
        let model = pure(4, 1);
        let u = gauss().scaled(3.0);
        let r = projection_factor(&model, &u).unwrap();
        let closed = (3.0 * 2.0 * u.lp_pow(4.0) / (2.0 * 4.0 * u.grad_sq())).sqrt();
        assert!((r - closed).abs() < 1e-8 * closed);
        let p = project_to_m(&model, &u).unwrap();
        assert!(p.residual < 1e-10);
        assert!((p.mass - r.powf(-1.5) * u.mass()).abs() < 1e-12);
        // fixed point
        let r1 = projection_factor(&model, &p.field).unwrap();
        assert!((r1 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn not_projectable() {
        let model = NonlinearityModel::custom("neg", 3, true, |t| -t * t * t, |t| -t.powi(4) / 4.0);
        assert!(matches!(projection_factor(&model, &gauss()), Err(Error::NotProjectable(_))));
    }

    #[test]
    fn supercritical_power_is_m_minus() {
        let model = pure(4, 1);
        let p = project_to_m(&model, &gauss().scaled(3.0)).unwrap();
        assert_eq!(classify(&model, &p.field).unwrap(), Branch::MMinus);
        let v = p.field;
        let d2 = phi_second_derivative_at_1(&model, &v).unwrap();
        let fib = Fiber::new(&model, &v);
        let h = 1e-3;
        let fd = (fib.phi(1.0 + h) - 2.0 * fib.phi(1.0) + fib.phi(1.0 - h)) / (h * h);
        assert!((fd - d2).abs() < 1e-4 * d2.abs(), "{fd} vs {d2}");
    }

    #[test]
    fn critical_power_is_m_zero() {
        let model = pure(10, 3);
        let u = gauss().scaled(4.0);
        let p = project_to_m(&model, &u).unwrap();
        assert_eq!(classify(&model, &p.field).unwrap(), Branch::MZero);
    }

    #[test]
    fn two_power_scan() {
        let model = make_multipower(MultiPowerSpec::two_power((7, 3), (13, 3)), 3).unwrap();
        let u = gauss();
        let scan = fiber_scan(&model, &u, 1e-3, 1e2, 400).unwrap();
        assert_eq!(scan.local_maxima.len(), 1);
        assert_eq!(scan.local_minima.len(), 1);
        let cert = check_j1_j2(&scan);
        assert!(cert.j1);
        assert_eq!(cert.j2, Some(true));
        let fib = Fiber::new(&model, &u);
        for (&s, &d) in scan.s.iter().zip(&scan.dphi) {
            assert!((d * s - fib.m_at(s)).abs() <= 1e-12 * fib.m_at(s).abs().max(1e-300));
        }
    }

    #[test]
    fn pure_supercritical_maximum() {
        let model = pure(4, 1);
        let u = gauss();
        let scan = fiber_scan(&model, &u, 1e-3, 1e2, 400).unwrap();
        // φ = s²A − s^σB with A = |∇u|²/2, σ = N(4−2)/2 = 3, B = |u|₄⁴/4
        let a = 0.5 * u.grad_sq();
        let b = 0.25 * u.lp_pow(4.0);
        let sigma = 3.0;
        let tu = (2.0 * a / (sigma * b)).powf(1.0 / (sigma - 2.0));
        let got = scan.t_u.unwrap();
        assert!((got - tu).abs() < 1e-3 * tu.max(1.0), "{got} vs {tu}");
    }

    #[test]
    fn subcritical_has_no_maximum() {
        let model = pure(7, 3);
        let scan = fiber_scan(&model, &gauss(), 1e-3, 1e2, 400).unwrap();
        assert!(scan.local_maxima.is_empty());
        assert!(!check_j1_j2(&scan).j1);
    }

    #[test]
    fn descartes_two_power() {
        let spec = MultiPowerSpec::two_power((7, 3), (13, 3));
        let u = gauss();
        let norms = DescartesNorms::of(&spec, &u);
        let c = descartes_certificate(&spec, 3, &norms).unwrap();
        assert_eq!(c.m, 2);
        let exps: Vec<i64> = c.p_terms.iter().map(|t| t.exponent).collect();
        assert_eq!(exps, vec![1, 4, 7]);
        let signs: Vec<i8> = c.p_terms.iter().map(|t| t.sign).collect();
        assert_eq!(signs, vec![-1, 1, -1]);
        assert!(c.at_most_two);
        assert_eq!(numeric_critical_points(&spec, 3, &norms), 2);
        assert!(c.j2_certified);
        assert_eq!(c.q_k, Side::Below);
    }

    #[test]
    fn descartes_patterns() {
        let u = gauss();
        // q_K = 8/3 = 2 + 2/3
        let spec = MultiPowerSpec {
            sub: vec![PowerTerm::new(1.0, 7, 3), PowerTerm::new(1.0, 8, 3)],
            sup: vec![PowerTerm::new(1.0, 4, 1)],
        };
        let c = descartes_certificate(&spec, 3, &DescartesNorms::of(&spec, &u)).unwrap();
        assert_eq!(c.q_k, Side::Equal);
        assert_eq!(c.phi2_pattern, vec![1, 1, -1]);
        assert!(c.j2_certified);
        // q₀ = 3 > 8/3
        let spec = MultiPowerSpec {
            sub: vec![PowerTerm::new(1.0, 3, 1)],
            sup: vec![PowerTerm::new(1.0, 4, 1), PowerTerm::new(1.0, 5, 1)],
        };
        let c = descartes_certificate(&spec, 3, &DescartesNorms::of(&spec, &u)).unwrap();
        assert_eq!(c.q0, Side::Above);
        assert_eq!(c.phi2_pattern, vec![-1, 1, -1, -1]);
        assert!(c.j2_certified);
        assert!(!c.numeric_only);
    }

    #[test]
    fn descartes_real_exponent_is_numeric() {
        let spec = MultiPowerSpec {
            sub: vec![PowerTerm::real(1.0, 2.5)],
            sup: vec![PowerTerm::real(1.0, 4.1)],
        };
        let c = descartes_certificate(&spec, 3, &DescartesNorms::of(&spec, &gauss())).unwrap();
        assert!(c.numeric_only);
        assert_eq!(c.sign_changes, 2);
    }

    #[test]
    fn guard_two_power() {
        let model = make_multipower(MultiPowerSpec::two_power((7, 3), (13, 3)), 3).unwrap();
        let s = sobolev_constant(3).unwrap();
        let g = mempty_guard(&model, s).unwrap();
        assert!((g.c_h1 - 1.0 / 7.0).abs() < 1e-9);
        assert!((g.d - 0.5).abs() < 1e-9);
        assert!((g.c_eps - 7.0 / 13.0).abs() < 1e-6);
        assert!((g.rho_guard - 0.5f64.sqrt()).abs() < 1e-9, "{}", g.rho_guard);
        let floor = grad_floor_mminus(&model, 0.5, s).unwrap();
        assert!(floor > 0.0 && floor <= 1.0);
    }
}
