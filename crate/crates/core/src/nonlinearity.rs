//! Nonlinearity models `f`, their primitives `F`, the split `H = f t − 2F = H₁ + H₂`,
//! `h_j = H_j'`, the constant `C₀ = sup F(t)/(t² + |t|^{2*})` and sampled
//! checks of the structural assumptions.

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, geomspace, golden_max, two_sharp, two_star};
use crate::spline::{CubicSpline, EndCondition};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Power exponent; exact when rational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Rational(Ratio<i64>),
    Real(f64),
}

impl Exponent {
    pub fn ratio(num: i64, den: i64) -> Self {
        Exponent::Rational(Ratio::new(num, den))
    }

    pub fn value(&self) -> f64 {
        match self {
            Exponent::Rational(r) => *r.numer() as f64 / *r.denom() as f64,
            Exponent::Real(x) => *x,
        }
    }

    pub fn as_ratio(&self) -> Option<Ratio<i64>> {
        match self {
            Exponent::Rational(r) => Some(*r),
            Exponent::Real(_) => None,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Rational(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Exponent::Real(x) => write!(f, "{x}"),
        }
    }
}

/// One term `coef·|t|^{q−2}t` of a multi-power nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTerm {
    pub coef: f64,
    pub exponent: Exponent,
}

impl PowerTerm {
    pub fn new(coef: f64, num: i64, den: i64) -> Self {
        PowerTerm {
            coef,
            exponent: Exponent::ratio(num, den),
        }
    }

    pub fn real(coef: f64, q: f64) -> Self {
        PowerTerm {
            coef,
            exponent: Exponent::Real(q),
        }
    }

    fn q(&self) -> f64 {
        self.exponent.value()
    }

    fn f(&self, t: f64) -> f64 {
        self.coef * t.abs().powf(self.q() - 2.0) * t
    }

    fn big_f(&self, t: f64) -> f64 {
        self.coef / self.q() * t.abs().powf(self.q())
    }

    fn big_h(&self, t: f64) -> f64 {
        let q = self.q();
        (q - 2.0) / q * self.coef * t.abs().powf(q)
    }

    fn h(&self, t: f64) -> f64 {
        let q = self.q();
        (q - 2.0) * self.coef * t.abs().powf(q - 2.0) * t
    }

    fn df(&self, t: f64) -> f64 {
        let q = self.q();
        self.coef * (q - 1.0) * t.abs().powf(q - 2.0)
    }
}

/// Subcritical terms (exponents in `(2, 2_#)`) and supercritical terms (in `(2_#, 2*]`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiPowerSpec {
    pub sub: Vec<PowerTerm>,
    pub sup: Vec<PowerTerm>,
}

impl MultiPowerSpec {
    pub fn two_power(q: (i64, i64), p: (i64, i64)) -> Self {
        MultiPowerSpec {
            sub: vec![PowerTerm::new(1.0, q.0, q.1)],
            sup: vec![PowerTerm::new(1.0, p.0, p.1)],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if dim < 3 {
            return Err(Error::InvalidSpec(format!("dimension N = {dim} must be at least 3")));
        }
        if self.sub.is_empty() && self.sup.is_empty() {
            return Err(Error::InvalidSpec("no terms".into()));
        }
        let ts = two_sharp(dim);
        let tst = two_star(dim);
        for t in self.sub.iter().chain(&self.sup) {
            if !(t.coef > 0.0 && t.coef.is_finite()) {
                return Err(Error::InvalidSpec(format!("coefficient {} must be positive", t.coef)));
            }
            if let Exponent::Rational(r) = t.exponent {
                if *r.denom() <= 0 {
                    return Err(Error::InvalidSpec(format!("bad exponent {r}")));
                }
            }
        }
        for w in self.sub.windows(2).chain(self.sup.windows(2)) {
            if w[0].q() >= w[1].q() {
                return Err(Error::InvalidSpec(format!(
                    "exponents must increase strictly ({} then {})",
                    w[0].exponent, w[1].exponent
                )));
            }
        }
        for t in &self.sub {
            let q = t.q();
            if !(q > 2.0 && q < ts) {
                return Err(Error::InvalidSpec(format!(
                    "subcritical exponent {} is outside (2, {ts})",
                    t.exponent
                )));
            }
        }
        for t in &self.sup {
            let p = t.q();
            if !(p > ts) {
                return Err(Error::InvalidSpec(format!(
                    "supercritical exponent {} is not above {ts}",
                    t.exponent
                )));
            }
            if p > tst + 1e-15 {
                return Err(Error::InvalidSpec(format!(
                    "supercritical exponent {} exceeds the critical exponent {tst}",
                    t.exponent
                )));
            }
        }
        Ok(())
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
struct Tabulated {
    spline: CubicSpline,
    t_lo: f64,
    t_hi: f64,
    // power-law tails F ≈ c t^k outside the table
    lo_law: (f64, f64),
    hi_law: (f64, f64),
    digest_src: String,
}

impl Tabulated {
    fn big_f_pos(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t < self.t_lo {
            self.lo_law.0 * t.powf(self.lo_law.1)
        } else if t > self.t_hi {
            self.hi_law.0 * t.powf(self.hi_law.1)
        } else {
            self.spline.eval(t)
        }
    }

    fn f_pos(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t < self.t_lo {
            self.lo_law.0 * self.lo_law.1 * t.powf(self.lo_law.1 - 1.0)
        } else if t > self.t_hi {
            self.hi_law.0 * self.hi_law.1 * t.powf(self.hi_law.1 - 1.0)
        } else {
            self.spline.derivative(t)
        }
    }
}

#[derive(Clone)]
enum Family {
    MultiPower(MultiPowerSpec),
    LogPower,
    Tabulated(Box<Tabulated>),
    Custom { f: ScalarFn, big_f: ScalarFn },
}

/// A nonlinearity together with the split `H = H₁ + H₂` and growth exponents.
/// Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct NonlinearityModel {
    name: String,
    dim: usize,
    a: Option<f64>,
    b: Option<f64>,
    is_odd: bool,
    family: Family,
}

impl fmt::Debug for NonlinearityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearityModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("is_odd", &self.is_odd)
            .finish()
    }
}

const LOG_A: f64 = 2.75;

/// Multi-power nonlinearity `f(t) = Σ α_k|t|^{q_k−2}t + Σ β_l|t|^{p_l−2}t`.
pub fn make_multipower(spec: MultiPowerSpec, dim: usize) -> Result<NonlinearityModel> {
    spec.validate(dim)?;
    let a = spec.sub.last().map(|t| t.q());
    let b = spec.sup.first().map(|t| t.q());
    let name = {
        let terms: Vec<String> = spec
            .sub
            .iter()
            .chain(&spec.sup)
            .map(|t| format!("{}*|t|^({})", t.coef, t.exponent))
            .collect();
        format!("multipower[{}]", terms.join(" + "))
    };
    Ok(NonlinearityModel {
        name,
        dim,
        a,
        b,
        is_odd: true,
        family: Family::MultiPower(spec),
    })
}

/// `F(t) = (3/7)|t|^{7/3} ln(e + |t|) + (3/13)|t|^{13/3}` in dimension 3.
pub fn make_logpower_example() -> NonlinearityModel {
    NonlinearityModel {
        name: "logpower".into(),
        dim: 3,
        a: Some(LOG_A),
        b: Some(13.0 / 3.0),
        is_odd: true,
        family: Family::LogPower,
    }
}

/// Model from `(t, F(t))` samples with `t > 0`, extended evenly to `t < 0`.
/// `f` is the derivative of the interpolating spline.
pub fn make_tabulated(dim: usize, table: &[(f64, f64)]) -> Result<NonlinearityModel> {
    if dim < 3 {
        return Err(Error::InvalidSpec(format!("dimension N = {dim} must be at least 3")));
    }
    let pts: Vec<(f64, f64)> = table.iter().copied().filter(|p| p.0 > 0.0).collect();
    if pts.len() < 4 {
        return Err(Error::InvalidSpec("tabulated model needs at least four points with t > 0".into()));
    }
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidSpec("tabulated t values must increase strictly".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let law = |i: usize, j: usize| -> (f64, f64) {
        let (t0, f0) = pts[i];
        let (t1, f1) = pts[j];
        if f0 > 0.0 && f1 > 0.0 {
            let k = (f1 / f0).ln() / (t1 / t0).ln();
            (f0 / t0.powf(k), k)
        } else {
            (0.0, 2.0)
        }
    };
    let n = pts.len();
    let lo_law = law(0, 1);
    let hi_law = law(n - 2, n - 1);
    let spline = CubicSpline::new(
        &xs,
        &ys,
        EndCondition::Clamped(lo_law.0 * lo_law.1 * xs[0].powf(lo_law.1 - 1.0)),
        EndCondition::Clamped(hi_law.0 * hi_law.1 * xs[n - 1].powf(hi_law.1 - 1.0)),
    );
    let digest_src = pts
        .iter()
        .map(|(t, f)| format!("{:016x}:{:016x}", t.to_bits(), f.to_bits()))
        .collect::<Vec<_>>()
        .join(",");
    Ok(NonlinearityModel {
        name: format!("tabulated[{} points]", n),
        dim,
        a: None,
        b: None,
        is_odd: true,
        family: Family::Tabulated(Box::new(Tabulated {
            spline,
            t_lo: xs[0],
            t_hi: xs[n - 1],
            lo_law,
            hi_law,
            digest_src,
        })),
    })
}

impl NonlinearityModel {
    /// Model from closures. `H₁` is the whole of `H`, `H₂ = 0`, and `h` is a
    /// finite-difference derivative.
    pub fn custom<F1, F2>(name: &str, dim: usize, is_odd: bool, f: F1, big_f: F2) -> Self
    where
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        NonlinearityModel {
            name: name.to_string(),
            dim,
            a: None,
            b: None,
            is_odd,
            family: Family::Custom {
                f: Arc::new(f),
                big_f: Arc::new(big_f),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> Option<f64> {
        self.a
    }

    pub fn b(&self) -> Option<f64> {
        self.b
    }

    pub fn is_odd(&self) -> bool {
        self.is_odd
    }

    /// True when `f` or `h` come from interpolation or finite differences.
    pub fn is_approximate(&self) -> bool {
        matches!(self.family, Family::Tabulated(_) | Family::Custom { .. })
    }

    pub fn multipower_spec(&self) -> Option<&MultiPowerSpec> {
        match &self.family {
            Family::MultiPower(s) => Some(s),
            _ => None,
        }
    }

    /// Stable hash of the model definition.
    pub fn digest(&self) -> String {
        let src = match &self.family {
            Family::MultiPower(s) => format!(
                "mp:{}:{:?}",
                self.dim,
                s.sub
                    .iter()
                    .chain(&s.sup)
                    .map(|t| (t.coef.to_bits(), t.exponent.to_string()))
                    .collect::<Vec<_>>()
            ),
            Family::LogPower => "logpower:3".to_string(),
            Family::Tabulated(t) => format!("tab:{}:{}", self.dim, t.digest_src),
            Family::Custom { .. } => format!("custom:{}:{}", self.dim, self.name),
        };
        let mut h = Sha256::new();
        h.update(src.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn f(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sub.iter().chain(&s.sup).map(|p| p.f(t)).sum(),
            Family::LogPower => {
                let x = t.abs();
                let e = std::f64::consts::E;
                let v = x.powf(4.0 / 3.0) * (e + x).ln()
                    + 3.0 / 7.0 * x.powf(7.0 / 3.0) / (e + x)
                    + x.powf(10.0 / 3.0);
                v.copysign(t) * if t == 0.0 { 0.0 } else { 1.0 }
            }
            Family::Tabulated(tb) => tb.f_pos(t.abs()).copysign(t) * if t == 0.0 { 0.0 } else { 1.0 },
            Family::Custom { f, .. } => f(t),
        }
    }

    /// The primitive `F(t) = ∫₀ᵗ f`.
    pub fn big_f(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sub.iter().chain(&s.sup).map(|p| p.big_f(t)).sum(),
            Family::LogPower => {
                let x = t.abs();
                3.0 / 7.0 * x.powf(7.0 / 3.0) * (std::f64::consts::E + x).ln()
                    + 3.0 / 13.0 * x.powf(13.0 / 3.0)
            }
            Family::Tabulated(tb) => tb.big_f_pos(t.abs()),
            Family::Custom { big_f, .. } => big_f(t),
        }
    }

    pub fn big_h1(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sub.iter().map(|p| p.big_h(t)).sum(),
            Family::LogPower => {
                let x = t.abs();
                let e = std::f64::consts::E;
                x.powf(7.0 / 3.0) * (e + x).ln() / 7.0 + 3.0 / 7.0 * x.powf(10.0 / 3.0) / (e + x)
            }
            _ => self.f(t) * t - 2.0 * self.big_f(t),
        }
    }

    pub fn big_h2(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sup.iter().map(|p| p.big_h(t)).sum(),
            Family::LogPower => 7.0 / 13.0 * t.abs().powf(13.0 / 3.0),
            _ => 0.0,
        }
    }

    pub fn h1(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sub.iter().map(|p| p.h(t)).sum(),
            Family::LogPower => {
                let x = t.abs();
                let e = std::f64::consts::E;
                let v = x.powf(4.0 / 3.0) * (e + x).ln() / 3.0
                    + (1.0 / 7.0 + 10.0 / 7.0) * x.powf(7.0 / 3.0) / (e + x)
                    - 3.0 / 7.0 * x.powf(10.0 / 3.0) / ((e + x) * (e + x));
                if t == 0.0 {
                    0.0
                } else {
                    v.copysign(t)
                }
            }
            _ => central_difference(|x| self.big_h1(x), t),
        }
    }

    pub fn h2(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sup.iter().map(|p| p.h(t)).sum(),
            Family::LogPower => 7.0 / 3.0 * t.abs().powf(7.0 / 3.0) * t,
            _ => 0.0,
        }
    }

    pub fn big_h(&self, t: f64) -> f64 {
        self.big_h1(t) + self.big_h2(t)
    }

    pub fn h(&self, t: f64) -> f64 {
        self.h1(t) + self.h2(t)
    }

    /// `f'(t)`; closed form for multi-power models, finite differences otherwise.
    pub fn df(&self, t: f64) -> f64 {
        match &self.family {
            Family::MultiPower(s) => s.sub.iter().chain(&s.sup).map(|p| p.df(t)).sum(),
            _ => central_difference(|x| self.f(x), t),
        }
    }

    /// `G(t) = h(t)t − (2 + 2/N)H(t)`.
    pub fn eval_g(&self, t: f64) -> f64 {
        self.h(t) * t - (2.0 + 2.0 / self.dim as f64) * self.big_h(t)
    }

    /// Nonlinear phase rate `f(|z|)/|z|`, so that `f(z) = θ(|z|) z` for complex `z`.
    pub fn phase_rate(&self, modulus: f64) -> f64 {
        if modulus == 0.0 {
            let eps = 1e-300_f64.max(f64::MIN_POSITIVE);
            self.f(eps) / eps
        } else {
            self.f(modulus) / modulus
        }
    }
}

pub fn eval_g(model: &NonlinearityModel, t: f64) -> f64 {
    model.eval_g(t)
}

fn central_difference<F: Fn(f64) -> f64>(g: F, t: f64) -> f64 {
    let d = if t == 0.0 { 1e-8 } else { 1e-4 * t.abs() };
    (g(t + d) - g(t - d)) / (2.0 * d)
}

/// Result of the `C₀` search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct C0Result {
    pub value: f64,
    pub argmax: f64,
    /// maximizer sits at an end of the scan range
    pub unbounded_warning: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct C0Scan {
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
    pub tol: f64,
}

impl Default for C0Scan {
    fn default() -> Self {
        C0Scan {
            t_min: 1e-6,
            t_max: 1e6,
            n: 2001,
            tol: 1e-12,
        }
    }
}

/// `C₀ = sup_{t≠0} F(t)/(t² + |t|^{2*})`, by a coarse scan and golden-section refinement in `ln t`.
pub fn compute_c0(model: &NonlinearityModel, scan: C0Scan) -> Result<C0Result> {
    let ts = two_star(model.dim);
    let ratio = |t: f64| model.big_f(t) / (t * t + t.abs().powf(ts));
    let pos = geomspace(scan.t_min, scan.t_max, scan.n);
    let mut signs = vec![1.0];
    if !model.is_odd {
        signs.push(-1.0);
    }
    let mut best: Option<(f64, f64, usize, f64)> = None; // (value, t, index, sign)
    for &sg in &signs {
        for (i, &t) in pos.iter().enumerate() {
            let v = ratio(sg * t);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("F({})", sg * t)));
            }
            if best.map_or(true, |b| v > b.0) {
                best = Some((v, t, i, sg));
            }
        }
    }
    let (v0, _, idx, sg) = best.unwrap();
    if !(v0 > 0.0) {
        return Err(Error::NoPositiveF);
    }
    let edge = idx == 0 || idx == pos.len() - 1;
    let lo = pos[idx.saturating_sub(1)].ln();
    let hi = pos[(idx + 1).min(pos.len() - 1)].ln();
    let (ls, val) = golden_max(|l| ratio(sg * l.exp()), lo, hi, scan.tol / pos[idx]);
    let (value, argmax) = if val >= v0 { (val, sg * ls.exp()) } else { (v0, sg * pos[idx]) };
    Ok(C0Result {
        value,
        argmax,
        unbounded_warning: edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// a sampled limit trend agrees with the assumption
    Consistent,
    Inconsistent,
    Skipped,
}

impl CheckStatus {
    pub fn ok(self) -> bool {
        matches!(self, CheckStatus::Pass | CheckStatus::Consistent | CheckStatus::Skipped)
    }

    fn from_pass(p: bool) -> Self {
        if p {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    fn from_trend(p: bool) -> Self {
        if p {
            CheckStatus::Consistent
        } else {
            CheckStatus::Inconsistent
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub id: String,
    pub status: CheckStatus,
    pub witness: Option<f64>,
    pub approximate: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub model: String,
    pub entries: Vec<CheckEntry>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn status(&self, id: &str) -> Option<CheckStatus> {
        self.get(id).map(|e| e.status)
    }

    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.status.ok())
    }
}

/// Sample grid for the assumption checks: geometric in `|t|`.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
    pub tol: f64,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid {
            t_min: 1e-6,
            t_max: 1e6,
            n: 1201,
            tol: 1e-9,
        }
    }
}

/// Minimum log-slope counted as genuine growth or decay at a grid edge.
const SLOPE_EPS: f64 = 1e-2;

/// Log-log slope of `|g|` over the last `frac` of the grid at the chosen end.
fn edge_slope(ts: &[f64], vals: &[f64], high_end: bool) -> f64 {
    let n = ts.len();
    let k = (n / 12).max(2);
    let (i, j) = if high_end { (n - 1 - k, n - 1) } else { (k, 0) };
    let (a, b) = (vals[i].abs(), vals[j].abs());
    if a == 0.0 || b == 0.0 {
        return if b == 0.0 && a != 0.0 { f64::NEG_INFINITY } else { 0.0 };
    }
    (b / a).ln() / (ts[j] / ts[i]).ln()
}

/// Whether `vals` moves monotonically toward the chosen edge (non-strictly, with relative tolerance).
fn monotone_toward_edge(vals: &[f64], high_end: bool, increasing: bool) -> bool {
    let n = vals.len();
    let k = (n / 12).max(2);
    let seg: Vec<f64> = if high_end {
        vals[n - 1 - k..].to_vec()
    } else {
        vals[..=k].iter().rev().copied().collect()
    };
    seg.windows(2).all(|w| {
        let slack = 1e-12 * w[0].abs().max(w[1].abs());
        if increasing {
            w[1] >= w[0] - slack
        } else {
            w[1] <= w[0] + slack
        }
    })
}

fn sample_points(model: &NonlinearityModel, g: &SampleGrid) -> Vec<f64> {
    let pos = geomspace(g.t_min, g.t_max, g.n);
    let mut all = pos.clone();
    if !model.is_odd {
        all.extend(pos.iter().map(|t| -t));
    }
    all
}

/// `∫₀ᵗ f` with geometric panels toward the origin.
fn primitive_quadrature(model: &NonlinearityModel, t: f64) -> f64 {
    let mut s = 0.0;
    let mut hi = t;
    for _ in 0..80 {
        let lo = hi * 0.5;
        s += gauss_legendre(|x| model.f(x), lo, hi, 2);
        hi = lo;
    }
    s
}

/// Sampled checks of the growth assumptions and of the model's internal consistency.
pub fn check_assumptions(model: &NonlinearityModel, grid: SampleGrid) -> AssumptionReport {
    let n_dim = model.dim;
    let ts = two_star(n_dim);
    let tsh = two_sharp(n_dim);
    let tol = grid.tol;
    let approx = model.is_approximate();
    let pos = geomspace(grid.t_min, grid.t_max, grid.n);
    let all = sample_points(model, &grid);
    let mut entries = Vec::new();
    let mut push = |id: &str, status: CheckStatus, witness: Option<f64>, approximate: bool, detail: String| {
        entries.push(CheckEntry {
            id: id.to_string(),
            status,
            witness,
            approximate,
            detail,
        })
    };

    // internal consistency of the model
    push(
        "model:F_zero",
        CheckStatus::from_pass(model.big_f(0.0) == 0.0),
        None,
        false,
        format!("F(0) = {}", model.big_f(0.0)),
    );
    {
        let mut worst: Option<f64> = None;
        let mut max_err: f64 = 0.0;
        for &t in all.iter().step_by(24) {
            let q = primitive_quadrature(model, t);
            let err = (q - model.big_f(t)).abs() / (1.0 + t.abs().powf(ts));
            if err > max_err {
                max_err = err;
            }
            if err > tol && worst.is_none() {
                worst = Some(t);
            }
        }
        push(
            "model:primitive",
            CheckStatus::from_pass(worst.is_none()),
            worst,
            approx,
            format!("max scaled |F - int f| = {max_err:.3e}"),
        );
    }
    {
        let mut worst = None;
        let mut max_err: f64 = 0.0;
        for &t in &all {
            let err = (model.big_h1(t) + model.big_h2(t) - (model.f(t) * t - 2.0 * model.big_f(t))).abs()
                / (1.0 + t.abs().powf(ts));
            max_err = max_err.max(err);
            if err > tol && worst.is_none() {
                worst = Some(t);
            }
        }
        push(
            "model:H_split",
            CheckStatus::from_pass(worst.is_none()),
            worst,
            false,
            format!("max scaled |H1 + H2 - (f t - 2F)| = {max_err:.3e}"),
        );
    }
    {
        let mut worst = None;
        let mut max_err: f64 = 0.0;
        for &t in all.iter().step_by(6) {
            for (hj, bhj) in [
                (model.h1(t), central_difference(|x| model.big_h1(x), t)),
                (model.h2(t), central_difference(|x| model.big_h2(x), t)),
            ] {
                let scale = hj.abs() + model.big_h(t).abs() / t.abs() + 1e-300;
                let err = (hj - bhj).abs() / scale;
                max_err = max_err.max(err);
                if err > 1e-6 && worst.is_none() {
                    worst = Some(t);
                }
            }
        }
        push(
            "model:h_derivative",
            CheckStatus::from_pass(worst.is_none()),
            worst,
            approx,
            format!("max relative |h_j - dH_j/dt| = {max_err:.3e}"),
        );
    }
    if model.is_odd {
        let mut worst = None;
        for &t in &pos {
            if model.big_f(-t) != model.big_f(t) || model.f(-t) != -model.f(t) {
                worst = Some(t);
                break;
            }
        }
        push(
            "model:odd_symmetry",
            CheckStatus::from_pass(worst.is_none()),
            worst,
            false,
            "F even and f odd at every sample".into(),
        );
    }

    // F0: |f(t)| <= C(|t| + |t|^{2*-1})
    {
        let r: Vec<f64> = pos.iter().map(|&t| model.f(t).abs() / (t + t.powf(ts - 1.0))).collect();
        let hi = edge_slope(&pos, &r, true);
        let lo = edge_slope(&pos, &r, false);
        let ok = hi <= SLOPE_EPS && lo >= -SLOPE_EPS;
        let witness = if hi > SLOPE_EPS {
            Some(grid.t_max)
        } else if lo < -SLOPE_EPS {
            Some(grid.t_min)
        } else {
            None
        };
        push(
            "F0",
            CheckStatus::from_trend(ok),
            witness,
            approx,
            format!("log-slope of |f|/(|t|+|t|^(2*-1)): {lo:.3} at small t, {hi:.3} at large t"),
        );
    }
    // F1: F/t^2 -> 0 as t -> 0
    {
        let r: Vec<f64> = pos.iter().map(|&t| model.big_f(t) / (t * t)).collect();
        let s = edge_slope(&pos, &r, false);
        let ok = monotone_toward_edge(&r.iter().map(|v| v.abs()).collect::<Vec<_>>(), false, false)
            && (s > SLOPE_EPS || r[0].abs() < tol);
        push(
            "F1",
            CheckStatus::from_trend(ok),
            if ok { None } else { Some(grid.t_min) },
            false,
            format!("F/t^2 = {:.3e} at t = {:.1e}, log-slope {s:.3}", r[0], grid.t_min),
        );
    }
    // F2: F/|t|^{2_#} -> +inf as t -> 0
    {
        let r: Vec<f64> = pos.iter().map(|&t| model.big_f(t) / t.powf(tsh)).collect();
        let s = edge_slope(&pos, &r, false);
        let ok = r[0] > 0.0 && monotone_toward_edge(&r, false, true) && s < -SLOPE_EPS;
        push(
            "F2",
            CheckStatus::from_trend(ok),
            if ok { None } else { Some(grid.t_min) },
            false,
            format!("F/|t|^(2#) = {:.3e} at t = {:.1e}, log-slope {s:.3}", r[0], grid.t_min),
        );
    }
    // F3: F/|t|^{2*} -> 0 as |t| -> inf
    {
        let r: Vec<f64> = pos.iter().map(|&t| model.big_f(t) / t.powf(ts)).collect();
        let s = edge_slope(&pos, &r, true);
        let n = r.len();
        let ok = monotone_toward_edge(&r.iter().map(|v| v.abs()).collect::<Vec<_>>(), true, false)
            && (s < -SLOPE_EPS || r[n - 1].abs() < tol);
        push(
            "F3",
            CheckStatus::from_trend(ok),
            if ok { None } else { Some(grid.t_max) },
            false,
            format!("F/|t|^(2*) = {:.3e} at t = {:.1e}, log-slope {s:.3}", r[n - 1], grid.t_max),
        );
    }
    // F4: f(t)t <= 2* F(t)
    {
        let mut worst = None;
        for &t in &all {
            let lhs = model.f(t) * t;
            let rhs = ts * model.big_f(t);
            if lhs > rhs + tol * (lhs.abs() + rhs.abs()) {
                worst = Some(t);
                break;
            }
        }
        push(
            "F4",
            CheckStatus::from_pass(worst.is_none()),
            worst,
            approx,
            "f(t)t <= 2* F(t) at every sample".into(),
        );
    }
    // F5b: |f'(t)| <~ |t|^{q-2} + |t|^{2*-2} for some q in (2, 2*)
    {
        let d: Vec<f64> = pos.iter().map(|&t| model.df(t).abs()).collect();
        let lo = edge_slope(&pos, &d, false);
        let hi = edge_slope(&pos, &d, true);
        let q_eff = 2.0 + lo;
        let ok = lo > SLOPE_EPS && q_eff < ts && hi <= ts - 2.0 + SLOPE_EPS;
        push(
            "F5b",
            CheckStatus::from_trend(ok),
            if ok { None } else { Some(if lo <= SLOPE_EPS { grid.t_min } else { grid.t_max }) },
            true,
            format!("|f'| grows like |t|^{lo:.3} near 0 (q = {q_eff:.4}) and |t|^{hi:.3} at infinity"),
        );
    }
    // H0n / H2n when exponents are known
    match (model.a, model.b) {
        (Some(a), Some(b)) => {
            let range_ok = a > 2.0 && a < tsh && b > tsh && b < ts + 1e-15;
            let mut worst = None;
            for &t in &all {
                let (h1t, big1) = (model.h1(t) * t, model.big_h1(t));
                let (h2t, big2) = (model.h2(t) * t, model.big_h2(t));
                let s1 = tol * (h1t.abs() + big1.abs());
                let s2 = tol * (h2t.abs() + big2.abs());
                let ok = 2.0 * big1 <= h1t + s1
                    && h1t <= a * big1 + s1
                    && b * big2 <= h2t + s2
                    && h2t <= ts * big2 + s2;
                if !ok {
                    worst = Some(t);
                    break;
                }
            }
            push(
                "H0n",
                CheckStatus::from_pass(range_ok),
                None,
                false,
                format!("a = {a}, b = {b}, require 2 < a < {tsh} < b <= {ts}"),
            );
            push(
                "H2n",
                CheckStatus::from_pass(worst.is_none()),
                worst,
                approx,
                "2H1 <= h1 t <= a H1 and b H2 <= h2 t <= 2* H2 at every sample".into(),
            );
        }
        _ => {
            push("H0n", CheckStatus::Skipped, None, false, "no H1/H2 split exponents for this model".into());
            push("H2n", CheckStatus::Skipped, None, false, "no H1/H2 split exponents for this model".into());
        }
    }
    AssumptionReport {
        model: model.name.clone(),
        entries,
    }
}

/// Evenness of `G`, the small- and large-`t` trends of `G/|t|^{2_#}`, and its strict increase.
pub fn check_g_conditions(model: &NonlinearityModel, grid: SampleGrid) -> AssumptionReport {
    let tsh = two_sharp(model.dim);
    let pos = geomspace(grid.t_min, grid.t_max, grid.n);
    let approx = model.is_approximate();
    let mut entries = Vec::new();
    {
        let witness = pos.iter().copied().find(|&t| model.eval_g(-t) != model.eval_g(t));
        entries.push(CheckEntry {
            id: "G0".into(),
            status: CheckStatus::from_pass(witness.is_none()),
            witness,
            approximate: false,
            detail: "G(-t) = G(t) at every sample".into(),
        });
    }
    let r: Vec<f64> = pos.iter().map(|&t| model.eval_g(t) / t.powf(tsh)).collect();
    {
        // limsup G/|t|^{2#} <= 0 as t -> 0
        let s = edge_slope(&pos, &r, false);
        let ok = r[0] <= 0.0 || (monotone_toward_edge(&r, false, false) && s > SLOPE_EPS);
        entries.push(CheckEntry {
            id: "G1".into(),
            status: CheckStatus::from_trend(ok),
            witness: if ok { None } else { Some(grid.t_min) },
            approximate: approx,
            detail: format!("G/|t|^(2#) = {:.3e} at t = {:.1e}", r[0], grid.t_min),
        });
    }
    {
        let n = r.len();
        let s = edge_slope(&pos, &r, true);
        let ok = r[n - 1] > 0.0 && monotone_toward_edge(&r, true, true) && s > SLOPE_EPS;
        entries.push(CheckEntry {
            id: "G2".into(),
            status: CheckStatus::from_trend(ok),
            witness: if ok { None } else { Some(grid.t_max) },
            approximate: approx,
            detail: format!("G/|t|^(2#) = {:.3e} at t = {:.1e}, log-slope {s:.3}", r[n - 1], grid.t_max),
        });
    }
    {
        let witness = r
            .windows(2)
            .zip(&pos)
            .find(|(w, _)| !(w[1] > w[0]))
            .map(|(_, &t)| t);
        entries.push(CheckEntry {
            id: "G3".into(),
            status: CheckStatus::from_pass(witness.is_none()),
            witness,
            approximate: approx,
            detail: "G(t)/t^(2#) strictly increasing on the positive grid".into(),
        });
    }
    AssumptionReport {
        model: model.name.clone(),
        entries,
    }
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelFile {
    Multipower {
        #[serde(rename = "N")]
        dim: usize,
        #[serde(default)]
        sub: Vec<(f64, i64, i64)>,
        #[serde(default)]
        sup: Vec<(f64, i64, i64)>,
    },
    Logpower {
        #[serde(rename = "N", default = "three")]
        dim: usize,
    },
    Tabulated {
        #[serde(rename = "N")]
        dim: usize,
        table: Vec<(f64, f64)>,
    },
}

fn three() -> usize {
    3
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read model file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn build(&self) -> Result<NonlinearityModel> {
        match self {
            ModelFile::Multipower { dim, sub, sup } => {
                let conv = |v: &Vec<(f64, i64, i64)>| -> Result<Vec<PowerTerm>> {
                    v.iter()
                        .map(|&(c, n, d)| {
                            if d <= 0 {
                                Err(Error::InvalidSpec(format!("exponent denominator {d} must be positive")))
                            } else {
                                Ok(PowerTerm::new(c, n, d))
                            }
                        })
                        .collect()
                };
                make_multipower(
                    MultiPowerSpec {
                        sub: conv(sub)?,
                        sup: conv(sup)?,
                    },
                    *dim,
                )
            }
            ModelFile::Logpower { dim } => {
                if *dim != 3 {
                    return Err(Error::InvalidSpec("the logarithmic example is defined for N = 3 only".into()));
                }
                Ok(make_logpower_example())
            }
            ModelFile::Tabulated { dim, table } => make_tabulated(*dim, table),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn two_power() -> NonlinearityModel {
        make_multipower(MultiPowerSpec::two_power((7, 3), (13, 3)), 3).unwrap()
    }

    #[test]
    fn single_supercritical_power() {
        let m = make_multipower(
            MultiPowerSpec {
                sub: vec![],
                sup: vec![PowerTerm::new(1.0, 4, 1)],
            },
            3,
        )
        .unwrap();
        for &t in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
            let t: f64 = t;
            assert!((m.f(t) - t * t * t).abs() < 1e-14);
            assert!((m.big_f(t) - t.powi(4) / 4.0).abs() < 1e-14);
            assert!((m.big_h(t) - t.powi(4) / 2.0).abs() < 1e-14);
        }
        assert_eq!(m.a(), None);
        assert_eq!(m.b(), Some(4.0));
    }

    #[test]
    fn two_power_ordering_is_valid() {
        let m = two_power();
        assert_eq!(m.a(), Some(7.0 / 3.0));
        assert_eq!(m.b(), Some(13.0 / 3.0));
        assert!(m.is_odd());
    }

    #[test]
    fn misplaced_subcritical_term_rejected() {
        let spec = MultiPowerSpec {
            sub: vec![PowerTerm::new(1.0, 3, 1), PowerTerm::new(1.0, 4, 1)],
            sup: vec![],
        };
        assert!(matches!(make_multipower(spec, 3), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn ordering_and_critical_bound_enforced() {
        let bad_order = MultiPowerSpec {
            sub: vec![PowerTerm::new(1.0, 3, 1), PowerTerm::new(1.0, 5, 2)],
            sup: vec![],
        };
        assert!(make_multipower(bad_order, 3).is_err());
        let over = MultiPowerSpec {
            sub: vec![],
            sup: vec![PowerTerm::new(1.0, 7, 1)],
        };
        assert!(make_multipower(over, 3).is_err());
        let critical = MultiPowerSpec {
            sub: vec![],
            sup: vec![PowerTerm::new(1.0, 6, 1)],
        };
        assert!(make_multipower(critical, 3).is_ok());
        let neg = MultiPowerSpec {
            sub: vec![PowerTerm::new(-1.0, 7, 3)],
            sup: vec![],
        };
        assert!(make_multipower(neg, 3).is_err());
    }

    #[test]
    fn ratio_exponents_are_reduced() {
        let e = Exponent::ratio(14, 6);
        assert_eq!(e.as_ratio().unwrap(), Ratio::new(7, 3));
        assert_eq!(e.to_string(), "7/3");
    }

    #[test]
    fn logpower_values() {
        let m = make_logpower_example();
        assert_eq!(m.big_f(0.0), 0.0);
        let f1 = 3.0 / 7.0 * (E + 1.0).ln() + 3.0 / 13.0;
        assert!((m.big_f(1.0) - f1).abs() < 1e-15);
        let g1 = -(E + 1.0).ln() / 21.0 + 3.0 / 7.0 / (E + 1.0) - 3.0 / 7.0 / ((E + 1.0) * (E + 1.0)) + 35.0 / 39.0;
        assert!((m.eval_g(1.0) - g1).abs() < 1e-14, "{} vs {g1}", m.eval_g(1.0));
    }

    #[test]
    fn logpower_g_matches_displayed_closed_form() {
        let m = make_logpower_example();
        // G(t) = -(1/21) t^{7/3} ln(e+t) + (3/7) t^{10/3}/(e+t) - (3/7) t^{13/3}/(e+t)^2 + (35/39) t^{13/3}
        let g = |t: f64| {
            -t.powf(7.0 / 3.0) * (E + t).ln() / 21.0 + 3.0 / 7.0 * t.powf(10.0 / 3.0) / (E + t)
                - 3.0 / 7.0 * t.powf(13.0 / 3.0) / ((E + t) * (E + t))
                + 35.0 / 39.0 * t.powf(13.0 / 3.0)
        };
        for &t in &[1e-4, 0.01, 0.5, 1.0, 2.0, 7.0, 100.0] {
            let rel = (m.eval_g(t) - g(t)).abs() / g(t).abs().max(1e-300);
            assert!(rel < 1e-12, "t={t}: {} vs {}", m.eval_g(t), g(t));
        }
    }

    #[test]
    fn c0_examples() {
        let unit = NonlinearityModel::custom("t2+t6", 3, true, |t| 2.0 * t + 6.0 * t.powi(5), |t| t * t + t.powi(6));
        let r = compute_c0(&unit, C0Scan::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);

        let quartic = NonlinearityModel::custom("t4", 3, true, |t| 4.0 * t.powi(3), |t| t.powi(4));
        let r = compute_c0(&quartic, C0Scan::default()).unwrap();
        assert!((r.value - 0.5).abs() < 1e-13);
        assert!((r.argmax - 1.0).abs() < 1e-6);
        assert!(!r.unbounded_warning);

        let neg = NonlinearityModel::custom("-t2", 3, true, |t| -2.0 * t, |t| -t * t);
        assert_eq!(compute_c0(&neg, C0Scan::default()).unwrap_err(), Error::NoPositiveF);
    }

    #[test]
    fn c0_two_power_value_and_density_invariance() {
        let m = two_power();
        let a = compute_c0(&m, C0Scan::default()).unwrap();
        let b = compute_c0(
            &m,
            C0Scan {
                n: 4001,
                ..C0Scan::default()
            },
        )
        .unwrap();
        assert!((a.value - b.value).abs() <= 1e-10 * a.value);
        assert!((a.value - 0.387876).abs() < 1e-5, "{}", a.value);
    }

    #[test]
    fn c0_even_extension_on_non_odd_model() {
        let m = NonlinearityModel::custom("t4 even", 3, false, |t| 4.0 * t.powi(3), |t| t.powi(4));
        let r = compute_c0(&m, C0Scan::default()).unwrap();
        assert!((r.value - 0.5).abs() < 1e-13);
    }

    #[test]
    fn pure_quartic_fails_f2() {
        let m = make_multipower(
            MultiPowerSpec {
                sub: vec![],
                sup: vec![PowerTerm::new(1.0, 4, 1)],
            },
            3,
        )
        .unwrap();
        let rep = check_assumptions(&m, SampleGrid::default());
        assert_eq!(rep.status("F2"), Some(CheckStatus::Inconsistent));
        assert_eq!(rep.status("F1"), Some(CheckStatus::Consistent));
        assert_eq!(rep.status("F4"), Some(CheckStatus::Pass));
    }

    #[test]
    fn logpower_satisfies_all() {
        let m = make_logpower_example();
        let rep = check_assumptions(&m, SampleGrid::default());
        for e in &rep.entries {
            assert!(e.status.ok(), "{}: {:?} {}", e.id, e.status, e.detail);
        }
        let g = check_g_conditions(&m, SampleGrid::default());
        for e in &g.entries {
            assert!(e.status.ok(), "{}: {:?} {}", e.id, e.status, e.detail);
        }
    }

    #[test]
    fn two_power_satisfies_all() {
        let rep = check_assumptions(&two_power(), SampleGrid::default());
        assert!(rep.all_ok(), "{:#?}", rep);
    }

    #[test]
    fn supercritical_growth_fails_f0() {
        let m = NonlinearityModel::custom("t^6 sign", 3, true, |t| t.abs().powi(6) * t.signum(), |t| t.abs().powi(7) / 7.0);
        let rep = check_assumptions(&m, SampleGrid::default());
        let e = rep.get("F0").unwrap();
        assert_eq!(e.status, CheckStatus::Inconsistent);
        assert_eq!(e.witness, Some(1e6));
    }

    #[test]
    fn pure_power_g_conditions() {
        // G = (q - 2 - 2/N)(q-2)/q |t|^q
        for &(num, den) in &[(7i64, 3i64), (3, 1), (4, 1), (5, 2)] {
            let q = num as f64 / den as f64;
            let spec = if q < 10.0 / 3.0 {
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
            let m = make_multipower(spec, 3).unwrap();
            for &t in &[0.3f64, 1.0, 2.5] {
                let g = (q - 2.0 - 2.0 / 3.0) * (q - 2.0) / q * t.powf(q);
                assert!((m.eval_g(t) - g).abs() < 1e-12 * (1.0 + g.abs()));
            }
            let rep = check_g_conditions(&m, SampleGrid::default());
            let expect = q > 10.0 / 3.0 || q < 8.0 / 3.0;
            assert_eq!(rep.status("G3").unwrap().ok(), expect, "q = {q}");
        }
    }

    #[test]
    fn even_model_g_is_even() {
        let m = two_power();
        for &t in &[0.1, 1.3, 17.0] {
            assert_eq!(m.eval_g(-t), m.eval_g(t));
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let text = "family = \"multipower\"\nN = 3\nsub = [[1.0, 7, 3]]\nsup = [[1.0, 13, 3]]\n";
        let m = ModelFile::parse(text).unwrap().build().unwrap();
        assert_eq!(m.digest(), two_power().digest());
        let lp = ModelFile::parse("family = \"logpower\"\n").unwrap().build().unwrap();
        assert_eq!(lp.name(), "logpower");
        assert!(ModelFile::parse("family = \"cubic\"\n").is_err());
    }

    #[test]
    fn tabulated_quartic_close_to_exact() {
        let table: Vec<(f64, f64)> = geomspace(1e-3, 1e3, 600).into_iter().map(|t| (t, t.powi(4) / 4.0)).collect();
        let m = make_tabulated(3, &table).unwrap();
        assert!(m.is_approximate());
        for &t in &[0.01, 0.5, 1.0, 3.0] {
            assert!((m.big_f(t) - t.powi(4) / 4.0).abs() < 1e-6 * (1.0 + t.powi(4)));
            assert!((m.f(t) - t.powi(3)).abs() < 1e-3 * (1.0 + t.powi(3)));
        }
        // power-law tails
        assert!((m.big_f(1e4) - 1e16 / 4.0).abs() < 1e-6 * 1e16);
    }
}
