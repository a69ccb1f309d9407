//! Constrained minimizers: the negative-energy local minimizer on the
//! gradient-bounded part of the mass sphere, and the positive-energy minimizer
//! on `M₋`. Both run a preconditioned projected descent on the discrete sphere
//! `Σ w u² = ρ²` over the active nodes `1..n−2`.

use crate::error::{Error, Result};
use crate::fibering::{classify_tol, m_functional, mempty_guard, Branch, Fiber};
use crate::field::{RadialField, RadialGrid};
use crate::nonlinearity::NonlinearityModel;
use crate::numeric::two_star;
use crate::thresholds::{geometry, sobolev_constant};
use crate::tridiag::Tridiagonal;
use serde::Serialize;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolutionBranch {
    #[serde(rename = "local-min")]
    LocalMin,
    #[serde(rename = "M-minus")]
    MMinus,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    pub pde: f64,
    pub nehari: f64,
    pub pohozaev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundStateResult {
    #[serde(skip)]
    pub field: RadialField,
    pub branch: SolutionBranch,
    pub rho: f64,
    pub lambda: f64,
    pub energy: f64,
    pub mass: f64,
    pub grad_norm: f64,
    pub residuals: Residuals,
    /// `M(u)/|∇u|₂²`
    pub m_relative: f64,
    pub classification: Option<Branch>,
    pub min_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `R₀` for the local branch, the small-mass guard for `M₋`
    pub guard: Option<f64>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// relative projected-gradient tolerance
    pub tol: f64,
    pub armijo_c: f64,
    pub tau0: f64,
    /// escape guard at `R₀(1 − margin)`
    pub guard_margin: f64,
    /// relative energy stall for `M₋`
    pub stall_tol: f64,
    /// refuse `M₋` runs above the small-mass guard
    pub enforce_guard: bool,
    pub initial: Option<RadialField>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 20_000,
            tol: 1e-8,
            armijo_c: 1e-4,
            tau0: 0.1,
            guard_margin: 1e-3,
            stall_tol: 1e-10,
            enforce_guard: true,
            initial: None,
        }
    }
}

/// Descent hands over to the Newton polish at this relative residual.
const POLISH_LEVEL: f64 = 1e-6;
/// The fiber-maximum descent only needs to land in the Newton basin.
const MMINUS_HANDOVER: f64 = 1e-3;

/// `λ = (∫f(u)u − |∇u|₂²)/|u|₂²`.
pub fn lagrange_multiplier(model: &NonlinearityModel, u: &RadialField) -> f64 {
    let fu = u.integral_of(|t| model.f(t) * t);
    (fu - u.grad_sq()) / u.mass_sq()
}

/// PDE, Nehari and Pohozaev residuals, each relative.
pub fn residuals(model: &NonlinearityModel, u: &RadialField, lambda: f64) -> Residuals {
    let g = u.grid();
    let lap = u.laplacian();
    let w = g.weights();
    let n = g.n();
    let (mut r2, mut l2, mut k2, mut f2) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..n - 1 {
        let v = u.values()[i];
        let (d, fv) = (lap.values()[i], model.f(v));
        r2 += w[i] * (-d + lambda * v - fv).powi(2);
        l2 += w[i] * d * d;
        k2 += w[i] * v * v;
        f2 += w[i] * fv * fv;
    }
    // relative to |Δu|₂ + |λu|₂ + |f(u)|₂
    let norm = l2.sqrt() + lambda.abs() * k2.sqrt() + f2.sqrt();
    let pde = if norm > 0.0 { r2.sqrt() / norm } else { r2.sqrt() };
    let g2 = u.grad_sq();
    let m2 = u.mass_sq();
    let fu = u.integral_of(|t| model.f(t) * t);
    let big_f = u.integral_of(|t| model.big_f(t));
    let scale_n = g2 + (lambda * m2).abs() + fu.abs();
    let nehari = (g2 + lambda * m2 - fu).abs() / scale_n.max(f64::MIN_POSITIVE);
    let ts = two_star(u.dim());
    let scale_p = g2 + ts * (big_f.abs() + 0.5 * (lambda * m2).abs());
    let pohozaev = (g2 - ts * (big_f - 0.5 * lambda * m2)).abs() / scale_p.max(f64::MIN_POSITIVE);
    Residuals { pde, nehari, pohozaev }
}

/// Energy and `W`-gradient on the active nodes.
trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<f64>;
    /// gradient at the point of the last successful `eval`
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// factor multiplying `K` in the preconditioner
    fn stiffness_scale(&self) -> f64;
    /// direction along which the objective is flat up to discretization error
    fn null_direction(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Solves the small symmetric system `a·β = b` by elimination.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let p = a[c][c];
        if p == 0.0 {
            continue;
        }
        for r in c + 1..k {
            let f = a[r][c] / p;
            for j in c..k {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| a[c][j] * x[j]).sum();
        x[c] = if a[c][c] == 0.0 { 0.0 } else { (b[c] - s) / a[c][c] };
    }
    x
}

struct Disc {
    k: Tridiagonal<f64>,
    w: Vec<f64>,
}

impl Disc {
    fn new(grid: &RadialGrid) -> Self {
        Disc {
            k: grid.stiffness(),
            w: grid.active_weights().to_vec(),
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.w).map(|((x, y), w)| w * x * y).sum()
    }

    fn quad(&self, x: &[f64]) -> f64 {
        let kx = self.k.apply(x);
        x.iter().zip(&kx).map(|(a, b)| a * b).sum()
    }

    fn integral<G: Fn(f64) -> f64>(&self, x: &[f64], g: G) -> f64 {
        x.iter().zip(&self.w).map(|(&v, w)| w * g(v)).sum()
    }

    fn normalize(&self, x: &mut [f64], rho: f64) {
        let m = self.dot(x, x).sqrt();
        if m > 0.0 {
            let c = rho / m;
            x.iter_mut().for_each(|v| *v *= c);
        }
    }
}

struct LocalObjective<'a> {
    model: &'a NonlinearityModel,
    disc: &'a Disc,
}

impl Objective for LocalObjective<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let e = 0.5 * self.disc.quad(x) - self.disc.integral(x, |t| self.model.big_f(t));
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::NonFinite("energy".into()))
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let kx = self.disc.k.apply(x);
        kx.iter()
            .zip(x)
            .zip(&self.disc.w)
            .map(|((k, &v), w)| k / w - self.model.f(v))
            .collect()
    }

    fn stiffness_scale(&self) -> f64 {
        1.0
    }
}

/// `Ψ(x) = max_s φ_x(s)` with `φ_x(s) = ½s²xᵀKx − s^{−N} Σ w F(s^{N/2}x)`.
struct FiberMaxObjective<'a> {
    model: &'a NonlinearityModel,
    disc: &'a Disc,
    dim: f64,
    t: f64,
    g2: f64,
    rho: f64,
    guard: f64,
    /// radii of the active nodes
    radii: Vec<f64>,
    h: f64,
}

impl FiberMaxObjective<'_> {
    fn dphi_s(&self, x: &[f64], g2: f64, s: f64) -> f64 {
        let a = s.powf(0.5 * self.dim);
        let ih = self.disc.integral(x, |t| self.model.big_h(a * t));
        s * s * g2 - 0.5 * self.dim * s.powf(-self.dim) * ih
    }

    fn d2phi(&self, x: &[f64], g2: f64, s: f64) -> f64 {
        let a = s.powf(0.5 * self.dim);
        let g = self.disc.integral(x, |t| self.model.eval_g(a * t));
        g2 - 0.25 * self.dim * self.dim * s.powf(-self.dim - 2.0) * g
    }

    fn phi(&self, x: &[f64], g2: f64, s: f64) -> f64 {
        let a = s.powf(0.5 * self.dim);
        0.5 * s * s * g2 - s.powf(-self.dim) * self.disc.integral(x, |t| self.model.big_f(a * t))
    }

    /// Fiber maximum near `t0`: `sφ'` changes sign from + to −.
    fn locate(&self, x: &[f64], g2: f64, t0: f64) -> Result<f64> {
        let f = |s: f64| self.dphi_s(x, g2, s);
        let (mut lo, mut hi) = (t0 / 1.05, t0 * 1.05);
        let mut flo = f(lo);
        let mut fhi = f(hi);
        let mut tries = 0;
        while !(flo > 0.0 && fhi < 0.0) {
            tries += 1;
            if tries > 200 {
                return Err(Error::WrongBranch(tries));
            }
            if flo <= 0.0 {
                hi = lo;
                fhi = flo;
                lo /= 1.5;
                flo = f(lo);
            } else {
                lo = hi;
                flo = fhi;
                hi *= 1.5;
                fhi = f(hi);
            }
            if !(lo > 1e-12 && hi < 1e12) {
                return Err(Error::WrongBranch(tries));
            }
        }
        // safeguarded Newton inside the bracket
        let mut s = 0.5 * (lo + hi);
        for _ in 0..100 {
            let v = f(s);
            if v == 0.0 {
                return Ok(s);
            }
            if v > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // d(sφ')/ds = φ' + sφ''
            let d = v / s + s * self.d2phi(x, g2, s);
            let mut next = s - v / d;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-15 * s || hi - lo <= 1e-15 * hi {
                return Ok(next);
            }
            s = next;
        }
        Ok(s)
    }
}

impl Objective for FiberMaxObjective<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let g2 = self.disc.quad(x);
        let t = self.locate(x, g2, self.t)?;
        let d2 = self.d2phi(x, g2, t);
        if d2.abs() <= crate::fibering::M0_BAND * g2 {
            return Err(Error::RhoTooLarge {
                rho: self.rho,
                guard: self.guard,
            });
        }
        self.t = t;
        self.g2 = g2;
        let e = self.phi(x, g2, t);
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::NonFinite("fiber maximum".into()))
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = self.t;
        let a = t.powf(0.5 * self.dim);
        let kx = self.disc.k.apply(x);
        kx.iter()
            .zip(x)
            .zip(&self.disc.w)
            .map(|((k, &v), w)| t * t * k / w - self.model.f(a * v) / a)
            .collect()
    }

    fn stiffness_scale(&self) -> f64 {
        self.t * self.t
    }

    /// generator of `s ↦ s⋆x` at `s = 1`: `(N/2)x + r x'`
    fn null_direction(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = x.len();
        let z = (0..m)
            .map(|j| {
                let left = if j == 0 { x[0] } else { x[j - 1] };
                let right = if j + 1 < m { x[j + 1] } else { 0.0 };
                0.5 * self.dim * x[j] + self.radii[j] * (right - left) / (2.0 * self.h)
            })
            .collect();
        Some(z)
    }
}

struct DescentOutcome {
    iterations: usize,
    converged: bool,
}

struct DescentConfig<'a> {
    rho: f64,
    opts: &'a SolverOptions,
    /// abort when `sqrt(xᵀKx)` reaches this value
    grad_guard: Option<f64>,
    /// stop on relative energy stall once the residual is below this level
    stall_residual: Option<f64>,
}

/// Preconditioned projected descent with Armijo backtracking.
fn sphere_descent<O: Objective>(obj: &mut O, disc: &Disc, x: &mut Vec<f64>, cfg: DescentConfig) -> Result<DescentOutcome> {
    let DescentConfig {
        rho,
        opts,
        grad_guard,
        stall_residual,
    } = cfg;
    let m = x.len();
    disc.normalize(x, rho);
    let mut e = obj.eval(x)?;
    let mut tau = opts.tau0;
    let mut trajectory = Vec::new();
    for it in 0..opts.max_iter {
        let g = obj.gradient(x);
        let cs = constraints(obj, x);
        let (r, mu) = project_out(disc, &g, &cs);
        let res = disc.dot(&r, &r).sqrt() / rho;
        if res <= opts.tol {
            return Ok(DescentOutcome {
                iterations: it,
                converged: true,
            });
        }
        // (σW + sK) y = W r,  (σW + sK) z_j = W c_j
        let sigma = (-mu).max(1e-3);
        let sc = obj.stiffness_scale();
        let mut a = disc.k.clone();
        for i in 0..m {
            a.diag[i] = sc * a.diag[i] + sigma * disc.w[i];
            a.lower[i] *= sc;
            a.upper[i] *= sc;
        }
        let lu = a.factor();
        let weigh = |v: &[f64]| -> Vec<f64> { v.iter().zip(&disc.w).map(|(a, w)| a * w).collect() };
        let y = lu.solve(&weigh(&r));
        let zs: Vec<Vec<f64>> = cs.iter().map(|c| lu.solve(&weigh(c))).collect();
        let gram: Vec<Vec<f64>> = cs.iter().map(|c| zs.iter().map(|z| disc.dot(c, z)).collect()).collect();
        let beta = solve_small(gram, cs.iter().map(|c| disc.dot(c, &y)).collect());
        let mut d: Vec<f64> = y.iter().map(|v| -v).collect();
        for (b, z) in beta.iter().zip(&zs) {
            d.iter_mut().zip(z).for_each(|(di, zi)| *di += b * zi);
        }
        let slope = disc.dot(&g, &d);
        if !(slope < 0.0) {
            return Ok(DescentOutcome {
                iterations: it,
                converged: res <= 1e3 * opts.tol,
            });
        }
        let mut accepted = None;
        let mut trial_tau = (2.0 * tau).min(8.0);
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + trial_tau * b).collect();
            disc.normalize(&mut xn, rho);
            match obj.eval(&xn) {
                Ok(en) if en <= e + opts.armijo_c * trial_tau * slope => {
                    accepted = Some((xn, en));
                    break;
                }
                Ok(en) if en <= e + 1e-12 * e.abs() => {
                    // roundoff regime: accept only if the residual drops
                    let gn = obj.gradient(&xn);
                    let (rn, _) = project_out(disc, &gn, &constraints(obj, &xn));
                    if disc.dot(&rn, &rn).sqrt() / rho < res {
                        accepted = Some((xn, en));
                        break;
                    }
                }
                Err(err @ Error::RhoTooLarge { .. }) => return Err(err),
                _ => {}
            }
            trial_tau *= 0.5;
        }
        let Some((xn, en)) = accepted else {
            if stall_residual.is_some_and(|s| res <= s) {
                return Ok(DescentOutcome {
                    iterations: it,
                    converged: true,
                });
            }
            return Err(Error::Stall {
                iterations: it,
                energy: e,
                residual: res,
            });
        };
        // re-evaluate so that the objective state matches the accepted point
        let e_prev = e;
        *x = xn;
        e = en;
        obj.eval(x)?;
        tau = trial_tau;
        if let Some(gg) = grad_guard {
            let gn = disc.quad(x).max(0.0).sqrt();
            trajectory.push(gn);
            if gn >= gg {
                return Err(Error::EscapedWell {
                    grad: gn,
                    guard: gg,
                    iterations: it + 1,
                    trajectory,
                });
            }
        }
        if let Some(level) = stall_residual {
            if res <= level && (e_prev - e).abs() <= opts.stall_tol * e.abs() {
                return Ok(DescentOutcome {
                    iterations: it + 1,
                    converged: true,
                });
            }
        }
    }
    Ok(DescentOutcome {
        iterations: opts.max_iter,
        converged: false,
    })
}

fn constraints<O: Objective>(obj: &O, x: &[f64]) -> Vec<Vec<f64>> {
    let mut cs = vec![x.to_vec()];
    cs.extend(obj.null_direction(x));
    cs
}

/// `g` minus its W-orthogonal projection on `span(cs)`, and the coefficient
/// of `cs[0]`.
fn project_out(disc: &Disc, g: &[f64], cs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let gram: Vec<Vec<f64>> = cs.iter().map(|a| cs.iter().map(|b| disc.dot(a, b)).collect()).collect();
    let coef = solve_small(gram, cs.iter().map(|c| disc.dot(c, g)).collect());
    let mut r = g.to_vec();
    for (k, c) in coef.iter().zip(cs) {
        r.iter_mut().zip(c).for_each(|(ri, ci)| *ri -= k * ci);
    }
    (r, coef[0])
}

/// Newton on `−Δu + λu − f(u) = 0`, `|u|₂ = ρ` with the bordered
/// tridiagonal Jacobian. Returns the final relative residual; the iterate is
/// left untouched if the residual does not drop.
fn newton_polish(model: &NonlinearityModel, disc: &Disc, x: &mut Vec<f64>, rho: f64, tol: f64) -> f64 {
    let m = x.len();
    let resid = |x: &[f64]| -> (f64, Vec<f64>, f64) {
        let kx = disc.k.apply(x);
        let fu: f64 = x.iter().zip(&disc.w).map(|(&v, w)| w * model.f(v) * v).sum();
        let g2: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum();
        let lam = (fu - g2) / disc.dot(x, x);
        let r: Vec<f64> = kx
            .iter()
            .zip(x)
            .zip(&disc.w)
            .map(|((k, &v), w)| k / w + lam * v - model.f(v))
            .collect();
        let lap: Vec<f64> = kx.iter().zip(&disc.w).map(|(k, w)| k / w).collect();
        let fx: Vec<f64> = x.iter().map(|&v| model.f(v)).collect();
        let scale = disc.dot(&lap, &lap).sqrt() + lam.abs() * disc.dot(x, x).sqrt() + disc.dot(&fx, &fx).sqrt();
        let n = disc.dot(&r, &r).sqrt() / scale;
        (lam, r, n)
    };
    let (mut lam, mut r, mut res) = resid(x);
    for _ in 0..30 {
        if res <= tol {
            break;
        }
        let mut t = disc.k.clone();
        for i in 0..m {
            t.diag[i] += disc.w[i] * (lam - model.df(x[i]));
        }
        let lu = t.factor();
        let wr: Vec<f64> = r.iter().zip(&disc.w).map(|(a, w)| a * w).collect();
        let wx: Vec<f64> = x.iter().zip(&disc.w).map(|(a, w)| a * w).collect();
        let a = lu.solve(&wr);
        let b = lu.solve(&wx);
        let c = 0.5 * (rho * rho - disc.dot(x, x));
        let dl = -(c + disc.dot(x, &a)) / disc.dot(x, &b);
        let mut xn: Vec<f64> = (0..m).map(|i| x[i] - a[i] - dl * b[i]).collect();
        if xn.iter().any(|v| !v.is_finite()) {
            break;
        }
        disc.normalize(&mut xn, rho);
        let (ln, rn, nn) = resid(&xn);
        if !(nn < res) {
            break;
        }
        *x = xn;
        lam = ln;
        r = rn;
        res = nn;
    }
    res
}

fn to_field(grid: &Arc<RadialGrid>, x: &[f64]) -> RadialField {
    let n = grid.n();
    let mut v = vec![0.0; n];
    v[1..n - 1].copy_from_slice(x);
    let mut u = RadialField::from_values(grid.clone(), v).expect("length matches the grid");
    u.close_boundary();
    u
}

fn active(u: &RadialField) -> Vec<f64> {
    let n = u.values().len();
    u.values()[1..n - 1].to_vec()
}

fn check_grid(model: &NonlinearityModel, grid: &RadialGrid, rho: f64) -> Result<()> {
    if grid.dim() != model.dim() {
        return Err(Error::Domain(format!(
            "grid dimension {} differs from the model dimension {}",
            grid.dim(),
            model.dim()
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("rho = {rho} must be positive")));
    }
    Ok(())
}

/// Width `σ` of a Gaussian with mass `ρ` sitting at the local minimum of its
/// fiber below `r0`, clamped to what the grid resolves.
fn local_initial_width(model: &NonlinearityModel, grid: &Arc<RadialGrid>, rho: f64, r0: f64) -> f64 {
    let lo = 8.0 * grid.h();
    let hi = grid.r_max() / 8.0;
    let base = RadialField::gaussian(grid.clone(), 1.0_f64.clamp(lo, hi), rho);
    let fib = Fiber::new(model, &base);
    let g = fib.grad_sq().sqrt();
    // s⋆u has |∇| = s·g; restrict to the well
    let s_hi = 0.95 * r0 / g;
    let s_lo = s_hi * 1e-4;
    let n = 400;
    let mut best = (s_hi * 0.5, f64::INFINITY);
    for k in 0..=n {
        let s = s_lo * (s_hi / s_lo).powf(k as f64 / n as f64);
        let p = fib.phi(s);
        if p < best.1 {
            best = (s, p);
        }
    }
    (1.0_f64.clamp(lo, hi) / best.0).clamp(lo, hi)
}

/// Negative-energy local minimizer of `J` on `S_ρ ∩ {|∇u|₂ < R₀}`.
pub fn minimize_local(
    model: &NonlinearityModel,
    rho: f64,
    grid: &Arc<RadialGrid>,
    opts: &SolverOptions,
) -> Result<GroundStateResult> {
    check_grid(model, grid, rho)?;
    let geo = geometry(model, rho, &[])?;
    let Some(r0) = geo.r0 else {
        return Err(Error::AboveThreshold {
            rho,
            rho_sq: rho * rho,
            threshold: geo.rho_max_sq,
        });
    };
    let disc = Disc::new(grid);
    let mut x = match &opts.initial {
        Some(u0) => active(u0),
        None => {
            let sigma = local_initial_width(model, grid, rho, r0);
            active(&RadialField::gaussian(grid.clone(), sigma, rho))
        }
    };
    let mut obj = LocalObjective { model, disc: &disc };
    let guard = r0 * (1.0 - opts.guard_margin);
    let coarse = SolverOptions {
        tol: opts.tol.max(POLISH_LEVEL),
        ..opts.clone()
    };
    let mut out = sphere_descent(
        &mut obj,
        &disc,
        &mut x,
        DescentConfig {
            rho,
            opts: &coarse,
            grad_guard: Some(guard),
            stall_residual: None,
        },
    )?;
    if out.converged && opts.tol < coarse.tol {
        let e0 = obj.eval(&x)?;
        let mut y = x.clone();
        let res = newton_polish(model, &disc, &mut y, rho, opts.tol);
        let e1 = obj.eval(&y)?;
        let inside = disc.quad(&y).sqrt() < guard;
        if e1 <= e0 + 1e-12 * e0.abs() && inside && res <= opts.tol {
            x = y;
        } else {
            let more = sphere_descent(
                &mut obj,
                &disc,
                &mut x,
                DescentConfig {
                    rho,
                    opts,
                    grad_guard: Some(guard),
                    stall_residual: None,
                },
            )?;
            out.iterations += more.iterations;
            out.converged = more.converged;
        }
    }
    let mut u = to_field(grid, &x);
    if u.values()[1] < 0.0 {
        u = u.scaled(-1.0);
    }
    if u.is_truncated() {
        log::warn!("local minimizer has not decayed before r_max = {}", grid.r_max());
    }
    Ok(finish(model, u, rho, SolutionBranch::LocalMin, out, Some(r0)))
}

fn finish(
    model: &NonlinearityModel,
    u: RadialField,
    rho: f64,
    branch: SolutionBranch,
    out: DescentOutcome,
    guard: Option<f64>,
) -> GroundStateResult {
    let lambda = lagrange_multiplier(model, &u);
    let res = residuals(model, &u, lambda);
    let g2 = u.grad_sq();
    let n = u.values().len();
    let min_value = u.values()[..n - 1].iter().copied().fold(f64::INFINITY, f64::min);
    let classification = classify_tol(model, &u, 1e-6).ok();
    let tags = match branch {
        SolutionBranch::LocalMin => vec![
            "th:locmin:negative_energy",
            "th:locmin:lambda_positive",
            "th:locmin:constant_sign",
            "th:locmin:inside_well",
            "Nehari",
            "Poho",
        ],
        SolutionBranch::MMinus => vec![
            "th:2sol:positive_energy",
            "th:2sol:lambda_positive",
            "th:2sol:decreasing",
            "le:inf-achieved",
            "eq:ineqInM-",
            "defM",
        ],
    };
    GroundStateResult {
        branch,
        rho,
        lambda,
        energy: u.energy(model),
        mass: u.mass(),
        grad_norm: g2.sqrt(),
        residuals: res,
        m_relative: m_functional(model, &u) / g2,
        classification,
        min_value,
        iterations: out.iterations,
        converged: out.converged,
        guard,
        tags: tags.into_iter().map(String::from).collect(),
        field: u,
    }
}

/// Fiber scale `t_u` of the unit-width Gaussian with mass `ρ`, used to size grids.
pub fn mminus_length_scale(model: &NonlinearityModel, rho: f64) -> Result<f64> {
    let grid = RadialGrid::new(model.dim(), 2048, 12.0)?;
    let u = RadialField::gaussian(grid, 1.0, rho);
    let fib = Fiber::new(model, &u);
    let scan = crate::numeric::geomspace(1e-4, 1e6, 2000);
    let mut best: Option<(f64, f64)> = None;
    for w in scan.windows(2) {
        if fib.dphi(w[0]) > 0.0 && fib.dphi(w[1]) <= 0.0 {
            let p = fib.phi(w[0]);
            if best.map_or(true, |b| p > b.1) {
                best = Some((w[0], p));
            }
        }
    }
    best.map(|b| 1.0 / b.0)
        .ok_or(Error::WrongBranch(0))
}

/// Grid sized for the `M₋` state: about 40 length scales, `n` nodes.
pub fn suggest_mminus_grid(model: &NonlinearityModel, rho: f64, n: usize) -> Result<Arc<RadialGrid>> {
    let ell = mminus_length_scale(model, rho)?;
    RadialGrid::new(model.dim(), n, 40.0 * ell)
}

/// Positive-energy minimizer of `J` on `M₋ ∩ D_ρ`, found as the minimizer of
/// `Ψ(u) = max_s J(s⋆u)` on `S_ρ` and returned on the discrete `M`.
pub fn minimize_on_mminus(
    model: &NonlinearityModel,
    rho: f64,
    grid: &Arc<RadialGrid>,
    opts: &SolverOptions,
) -> Result<GroundStateResult> {
    check_grid(model, grid, rho)?;
    let s_const = sobolev_constant(model.dim())?;
    let guard = if model.b().is_some() {
        mempty_guard(model, s_const)?.rho_guard
    } else {
        f64::INFINITY
    };
    if opts.enforce_guard && rho >= guard {
        return Err(Error::RhoTooLarge { rho, guard });
    }
    let disc = Disc::new(grid);
    let mut x = match &opts.initial {
        Some(u0) => active(u0),
        None => {
            let sigma = (grid.r_max() / 12.0).max(8.0 * grid.h());
            active(&RadialField::gaussian(grid.clone(), sigma, rho))
        }
    };
    disc.normalize(&mut x, rho);
    let mut obj = FiberMaxObjective {
        model,
        disc: &disc,
        dim: model.dim() as f64,
        t: 1.0,
        g2: 0.0,
        rho,
        guard,
        radii: grid.nodes()[1..grid.n() - 1].to_vec(),
        h: grid.h(),
    };
    // start from the fiber maximum of the initial guess
    {
        let g2 = disc.quad(&x);
        let u = to_field(grid, &x);
        let fib = Fiber::new(model, &u);
        let scan = crate::numeric::geomspace(1e-4, 1e4, 800);
        let mut best: Option<(f64, f64)> = None;
        for w in scan.windows(2) {
            if fib.dphi(w[0]) > 0.0 && fib.dphi(w[1]) <= 0.0 {
                let p = fib.phi(w[0]);
                if best.map_or(true, |b| p > b.1) {
                    best = Some((w[0], p));
                }
            }
        }
        let Some((t, _)) = best else {
            return Err(Error::WrongBranch(0));
        };
        obj.t = obj.locate(&x, g2, t)?;
        x = rescale(grid, &disc, &x, obj.t, rho, model.is_odd())?;
        obj.t = 1.0;
    }
    let odd = model.is_odd();
    let mut out = sphere_descent(
        &mut obj,
        &disc,
        &mut x,
        DescentConfig {
            rho,
            opts: &SolverOptions {
                tol: opts.tol.max(MMINUS_HANDOVER),
                ..opts.clone()
            },
            grad_guard: None,
            stall_residual: Some(MMINUS_HANDOVER),
        },
    )?;
    let t = obj.t;
    x = rescale(grid, &disc, &x, t, rho, odd)?;
    let res = newton_polish(model, &disc, &mut x, rho, opts.tol);
    if res > opts.tol {
        out.converged = false;
        log::warn!("Newton polish stopped at relative residual {res:.3e}");
    }
    // final representative: mass ρ and discrete M = 0
    let u = to_field(grid, &x);
    let v = project_on_fiber(model, &u)?;
    let mut res = finish(model, v, rho, SolutionBranch::MMinus, out, Some(guard));
    if res.classification == Some(Branch::MZero) {
        return Err(Error::RhoTooLarge { rho, guard });
    }
    if res.classification == Some(Branch::MPlus) {
        return Err(Error::WrongBranch(1));
    }
    res.converged &= res.m_relative.abs() <= 1e-8;
    Ok(res)
}

/// `t⋆x` renormalized to `ρ`, rearranged for odd models.
fn rescale(grid: &Arc<RadialGrid>, disc: &Disc, x: &[f64], t: f64, rho: f64, odd: bool) -> Result<Vec<f64>> {
    let u = to_field(grid, x);
    let mut v = u.scale_star(t)?;
    if odd {
        v = v.rearrange_decreasing();
    }
    let mut y = active(&v);
    disc.normalize(&mut y, rho);
    Ok(y)
}

/// `s⋆u` with `s` solving `M(s⋆u) = 0`. The dilation is carried by the grid
/// (`r_max/s`), so node values are only rescaled, never interpolated.
fn project_on_fiber(model: &NonlinearityModel, u: &RadialField) -> Result<RadialField> {
    let g = u.grid();
    let half_n = 0.5 * g.dim() as f64;
    let make = |s: f64| -> Result<(f64, RadialField)> {
        let grid = RadialGrid::new(g.dim(), g.n(), g.r_max() / s)?;
        let c = s.powf(half_n);
        let mut v = RadialField::from_values(grid, u.values().iter().map(|t| c * t).collect())?;
        v.close_boundary();
        let g2 = v.grad_sq();
        Ok((m_functional(model, &v) / g2, v))
    };
    let mut s0 = 1.0;
    let (mut m0, v0) = make(s0)?;
    if m0.abs() <= 1e-13 {
        return Ok(v0);
    }
    let mut s1 = 1.0 + 1e-4;
    let (mut m1, mut v1) = make(s1)?;
    for _ in 0..60 {
        if m1.abs() <= 1e-13 || m1 == m0 {
            break;
        }
        let s2 = s1 - m1 * (s1 - s0) / (m1 - m0);
        if !(s2 > 0.0 && s2.is_finite()) {
            break;
        }
        s0 = s1;
        m0 = m1;
        s1 = s2;
        let (m, v) = make(s1)?;
        m1 = m;
        v1 = v;
    }
    Ok(v1)
}

/// One row of the `m_{R₀}(ρ)` table.
#[derive(Debug, Clone, Serialize)]
pub struct MCurveRow {
    pub rho: f64,
    pub m: Option<f64>,
    pub r0: Option<f64>,
    pub lambda: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

pub fn m_curve_row(model: &NonlinearityModel, rho: f64, grid: &Arc<RadialGrid>, opts: &SolverOptions) -> MCurveRow {
    match minimize_local(model, rho, grid, opts) {
        Ok(r) => MCurveRow {
            rho,
            m: Some(r.energy),
            r0: r.guard,
            lambda: Some(r.lambda),
            converged: r.converged,
            error: None,
        },
        Err(e) => MCurveRow {
            rho,
            m: None,
            r0: None,
            lambda: None,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// `m_{R₀}(ρ)` for each `ρ`; failures are recorded per row.
pub fn m_curve(model: &NonlinearityModel, rhos: &[f64], grid: &Arc<RadialGrid>, opts: &SolverOptions) -> Vec<MCurveRow> {
    rhos.iter().map(|&rho| m_curve_row(model, rho, grid, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibering::fiber_scan;
    use crate::nonlinearity::{make_multipower, MultiPowerSpec, PowerTerm};
    use crate::thresholds::{shoot_ground_state, ShootingOptions, ShootingProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn two_power() -> NonlinearityModel {
        make_multipower(MultiPowerSpec::two_power((7, 3), (13, 3)), 3).unwrap()
    }

    fn cubic() -> NonlinearityModel {
        let spec = MultiPowerSpec {
            sub: vec![],
            sup: vec![PowerTerm::new(1.0, 4, 1)],
        };
        make_multipower(spec, 3).unwrap()
    }

    fn q_profile() -> &'static ShootingProfile {
        static Q: OnceLock<ShootingProfile> = OnceLock::new();
        Q.get_or_init(|| {
            let opts = ShootingOptions { h: 5e-4, r_max: 25.0 };
            shoot_ground_state(3, 1.0, |t| t * t * t, opts).unwrap()
        })
    }

    fn half_threshold(model: &NonlinearityModel) -> f64 {
        let g = geometry(model, 1.0, &[]).unwrap();
        0.5 * g.rho_max_sq.sqrt()
    }

    fn pair() -> &'static (GroundStateResult, GroundStateResult) {
        static P: OnceLock<(GroundStateResult, GroundStateResult)> = OnceLock::new();
        P.get_or_init(|| {
            let model = two_power();
            let rho = half_threshold(&model);
            let grid = RadialGrid::new(3, 4096, 30.0).unwrap();
            let low = minimize_local(&model, rho, &grid, &SolverOptions::default()).unwrap();
            let g2 = suggest_mminus_grid(&model, rho.min(0.5), 4096).unwrap();
            let high = minimize_on_mminus(&model, rho.min(0.5), &g2, &SolverOptions::default()).unwrap();
            (low, high)
        })
    }

    #[test]
    fn shooting_solution_is_a_solution() {
        let q = q_profile();
        // grid nodes coincide with the shooting nodes
        let grid = RadialGrid::new(3, 48001, 24.0).unwrap();
        let mut u = RadialField::from_fn(grid, |r| q.eval(r));
        u.close_boundary();
        let model = cubic();
        let lam = lagrange_multiplier(&model, &u);
        assert!((lam - 1.0).abs() < 1e-4, "lambda {lam}");
        let r = residuals(&model, &u, lam);
        assert!(r.pde <= 1e-5 && r.nehari <= 1e-5 && r.pohozaev <= 1e-5, "{r:?}");
    }

    #[test]
    fn multiplier_of_gaussian_without_nonlinearity() {
        let model = NonlinearityModel::custom("zero", 3, true, |_| 0.0, |_| 0.0);
        let grid = RadialGrid::new(3, 2048, 12.0).unwrap();
        let u = RadialField::gaussian(grid, 1.3, 1.0);
        let lam = lagrange_multiplier(&model, &u);
        assert!(lam < 0.0);
        assert!((lam + u.grad_sq() / u.mass_sq()).abs() < 1e-12);
    }

    #[test]
    fn random_field_is_flagged() {
        let model = two_power();
        let grid = RadialGrid::new(3, 2048, 12.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u = RadialField::random_smooth(grid.clone(), &mut rng, 4, 1.0, false);
            let r = residuals(&model, &u, lagrange_multiplier(&model, &u));
            assert!(r.pde > 1e-2, "{r:?}");
        }
    }

    #[test]
    fn local_minimizer_invariants() {
        let (low, _) = pair();
        assert!(low.converged);
        assert!(low.energy < 0.0 && low.lambda > 0.0);
        assert!((low.mass - low.rho).abs() <= 1e-8);
        assert!(low.min_value > 0.0);
        let r = &low.residuals;
        assert!(r.pde <= 1e-5 && r.nehari <= 1e-5 && r.pohozaev <= 1e-5, "{r:?}");
        let r0 = geometry(&two_power(), low.rho, &[]).unwrap().r0.unwrap();
        assert!(low.grad_norm < r0);
    }

    #[test]
    fn mminus_invariants() {
        let (low, high) = pair();
        assert!(high.converged);
        assert!(high.energy > 0.0 && 0.0 > low.energy);
        assert!(high.lambda > 0.0);
        assert_eq!(high.classification, Some(Branch::MMinus));
        assert!(high.m_relative.abs() <= 1e-8);
        let r = &high.residuals;
        assert!(r.pde <= 1e-4 && r.nehari <= 1e-4 && r.pohozaev <= 1e-4, "{r:?}");
        let v = high.field.values();
        assert!(v[1..v.len() - 1].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn mminus_sits_at_its_fiber_maximum() {
        let (_, high) = pair();
        let scan = fiber_scan(&two_power(), &high.field, 1e-3, 1e2, 2000).unwrap();
        let t = scan.t_u.unwrap();
        assert!((t - 1.0).abs() <= 1e-3, "t_u = {t}");
    }

    #[test]
    fn multiplier_minimizes_pde_residual() {
        let (low, _) = pair();
        let model = two_power();
        let lam = low.lambda;
        let best = (-2000..=2000)
            .map(|k| lam * (1.0 + 1e-6 * k as f64))
            .min_by(|a, b| {
                let ra = residuals(&model, &low.field, *a).pde;
                let rb = residuals(&model, &low.field, *b).pde;
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        assert!((best - lam).abs() <= 1e-4 * lam, "{best} vs {lam}");
    }

    #[test]
    fn pure_cubic_recovers_scaled_shooting_profile() {
        let model = cubic();
        let q = q_profile();
        let q2 = q.lp_pow(2.0);
        let rho = 3.0;
        let lam = (q2 / (rho * rho)).powi(2);
        let grid = suggest_mminus_grid(&model, rho, 4096).unwrap();
        let res = minimize_on_mminus(&model, rho, &grid, &SolverOptions::default()).unwrap();
        assert!(res.converged && res.energy > 0.0);
        assert!((res.lambda - lam).abs() <= 1e-3 * lam, "{} vs {lam}", res.lambda);
        let u = &res.field;
        let s = lam.sqrt();
        let oracle = RadialField::from_fn(u.grid().clone(), |r| s * q.eval(s * r));
        let diff = RadialField::from_values(
            u.grid().clone(),
            u.values().iter().zip(oracle.values()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let rel = diff.mass() / oracle.mass();
        assert!(rel <= 1e-3, "relative L2 error {rel}");
    }

    #[test]
    fn least_energy_ordering() {
        let (low, high) = pair();
        assert!(low.energy <= high.energy);
    }

    #[test]
    fn theta_comparison_on_local_minimizer() {
        let (low, _) = pair();
        let model = two_power();
        let rho_max = 2.0 * low.rho;
        // zero padding keeps the dilated mass on the grid
        let wide = RadialGrid::new(3, 8192, 60.0).unwrap();
        let u = &RadialField::from_fn(wide, |r| if r < low.field.grid().r_max() { low.field.sample(r) } else { 0.0 });
        let big_f = u.integral_of(|t| model.big_f(t));
        for theta in [1.05, 1.2, 1.5, rho_max / low.rho] {
            let v = u.dilate_mass(theta).unwrap();
            let lhs = v.energy(&model);
            let rhs = theta * theta * (0.5 * theta.powf(-4.0 / 3.0) * u.grad_sq() - big_f);
            assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1.0), "theta {theta}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn m_curve_is_monotone_and_subadditive() {
        let model = two_power();
        let top = half_threshold(&model);
        let grid = RadialGrid::new(3, 4096, 40.0).unwrap();
        let opts = SolverOptions::default();
        let rhos = [0.5 * top, top / 2f64.sqrt(), top];
        let rows = m_curve(&model, &rhos, &grid, &opts);
        let m: Vec<f64> = rows.iter().map(|r| r.m.unwrap()).collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
        // α = ρ/√2
        assert!(m[2] < 2.0 * m[1] + 1e-8, "{m:?}");
        let single = m_curve(&model, &[top], &grid, &opts);
        assert_eq!(single.len(), 1);
        assert!((single[0].m.unwrap() - m[2]).abs() < 1e-12);
    }

    #[test]
    fn rho_above_guard_is_refused() {
        let model = two_power();
        let grid = RadialGrid::new(3, 512, 5.0).unwrap();
        match minimize_on_mminus(&model, 0.9, &grid, &SolverOptions::default()) {
            Err(Error::RhoTooLarge { guard, .. }) => assert!((guard - 0.5f64.sqrt()).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
