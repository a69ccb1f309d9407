//! Radial time evolution of `i∂ₜΨ + ΔΨ + f(Ψ) = 0` by Strang splitting, with
//! conservation and virial monitors and the stability/instability probes.
//!
//! Under this convention a solution of `−Δu + λu = f(u)` evolves as `u e^{iλt}`.

use crate::error::{Error, Result};
use crate::field::{ComplexField, RadialField};
use crate::nonlinearity::NonlinearityModel;
use crate::thresholds::geometry;
use crate::tridiag::Tridiagonal;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_end: f64,
    /// record every this many steps
    pub record_every: usize,
    /// relative energy tolerance; one step moving the energy by more than
    /// 100× this is a step-size error
    pub energy_tol: f64,
    /// blow-up when `|∇Ψ|₂` exceeds this multiple of its initial value
    pub blowup_factor: f64,
    /// an energy jump that survives all halvings after `|∇Ψ|₂` has grown by
    /// this factor is read as the collapse outrunning the grid: blow-up
    pub resolution_factor: f64,
    /// how often `dt` may be halved on an energy jump
    pub max_halvings: usize,
    /// state used for the orbital distance and the overlap phase
    pub reference: Option<RadialField>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt: 1e-3,
            t_end: 1.0,
            record_every: 1,
            energy_tol: 1e-6,
            blowup_factor: 1e3,
            resolution_factor: 2.0,
            max_halvings: 8,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionTrace {
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub v: Vec<f64>,
    /// centered differences of `v` (one-sided at the ends)
    pub dv: Vec<f64>,
    pub m: Vec<f64>,
    /// orbital distance to the reference, empty without one
    pub dist: Vec<f64>,
    /// unwrapped `arg⟨reference, Ψ⟩`, empty without a reference
    pub overlap_phase: Vec<f64>,
    pub blowup_time: Option<f64>,
    /// `(t, dt)` at the start and after every halving
    pub dt_history: Vec<(f64, f64)>,
    pub steps: usize,
    #[serde(skip)]
    pub final_state: Option<ComplexField>,
}

impl EvolutionTrace {
    pub fn blew_up(&self) -> bool {
        self.blowup_time.is_some()
    }

    /// `max|ΔV/Δt²| − 8M|` over interior records, both divided by `1 + |M|`.
    pub fn virial_defect(&self) -> f64 {
        let d2 = second_difference(&self.t, &self.v);
        d2.iter()
            .enumerate()
            .map(|(k, d)| (d - 8.0 * self.m[k + 1]).abs() / (1.0 + self.m[k + 1].abs()))
            .fold(0.0, f64::max)
    }

    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().map(|m| (m - m0).abs() / m0).fold(0.0, f64::max)
    }

    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Least-squares slope of the overlap phase.
    pub fn fitted_phase_rate(&self) -> Option<f64> {
        if self.overlap_phase.len() < 2 {
            return None;
        }
        let n = self.overlap_phase.len() as f64;
        let tm = self.t.iter().sum::<f64>() / n;
        let pm = self.overlap_phase.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, p) in self.t.iter().zip(&self.overlap_phase) {
            sxy += (t - tm) * (p - pm);
            sxx += (t - tm) * (t - tm);
        }
        Some(sxy / sxx)
    }
}

/// Three-point second differences at interior records.
pub fn second_difference(t: &[f64], v: &[f64]) -> Vec<f64> {
    (1..v.len().saturating_sub(1))
        .map(|k| {
            let (hm, hp) = (t[k] - t[k - 1], t[k + 1] - t[k]);
            2.0 * ((v[k + 1] - v[k]) / hp - (v[k] - v[k - 1]) / hm) / (hm + hp)
        })
        .collect()
}

fn first_difference(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            if k == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (t[2] - t[0])
            } else if k == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (t[n - 1] - t[n - 3])
            } else {
                (v[k + 1] - v[k - 1]) / (t[k + 1] - t[k - 1])
            }
        })
        .collect()
}

/// `M(Ψ) = |∇Ψ|₂² − (N/2)∫H(|Ψ|)`.
pub fn m_of(model: &NonlinearityModel, psi: &ComplexField) -> f64 {
    let g = psi.grid();
    let ih: f64 = psi
        .values()
        .iter()
        .zip(g.weights())
        .map(|(v, w)| w * model.big_h(v.norm()))
        .sum();
    psi.grad_sq() - 0.5 * g.dim() as f64 * ih
}

/// `min_θ ‖e^{iθ}ψ − u‖_{H¹}` over the phase; translations are not explored.
pub fn orbital_distance(psi: &ComplexField, reference: &RadialField) -> Result<f64> {
    if psi.grid().n() != reference.grid().n() || psi.grid().r_max() != reference.grid().r_max() {
        return Err(Error::Domain("orbital distance needs a shared grid".into()));
    }
    let u = reference.to_complex();
    let z = u.h1_inner(psi);
    let rot = if z.norm() > 0.0 { z.conj() / z.norm() } else { Complex64::new(1.0, 0.0) };
    let diff = ComplexField::from_values(
        psi.grid().clone(),
        psi.values().iter().zip(u.values()).map(|(p, q)| rot * p - q).collect(),
    )?;
    Ok(diff.h1_norm())
}

/// Strang stepper on the active nodes.
struct Stepper<'a> {
    model: &'a NonlinearityModel,
    a: crate::tridiag::TridiagonalLu<Complex64>,
    b: Tridiagonal<Complex64>,
    dt: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a NonlinearityModel, psi: &ComplexField, dt: f64) -> Self {
        let g = psi.grid();
        let k = g.stiffness();
        let w = g.active_weights();
        let half = Complex64::new(0.0, 0.5 * dt);
        let build = |sign: f64| Tridiagonal {
            lower: k.lower.iter().map(|&c| half * c * sign).collect(),
            diag: k.diag.iter().zip(w).map(|(&c, &wi)| Complex64::new(wi, 0.0) + half * c * sign).collect(),
            upper: k.upper.iter().map(|&c| half * c * sign).collect(),
        };
        Stepper {
            model,
            a: build(1.0).factor(),
            b: build(-1.0),
            dt,
        }
    }

    fn rotate(&self, x: &mut [Complex64], tau: f64) {
        for v in x.iter_mut() {
            let th = self.model.phase_rate(v.norm()) * tau;
            *v *= Complex64::from_polar(1.0, th);
        }
    }

    /// One step on the active values.
    fn step(&self, x: &mut Vec<Complex64>) {
        self.rotate(x, 0.5 * self.dt);
        let mut y = self.b.apply(x);
        self.a.solve_in_place(&mut y);
        *x = y;
        self.rotate(x, 0.5 * self.dt);
    }
}

fn assemble(psi0: &ComplexField, x: &[Complex64]) -> ComplexField {
    let n = psi0.grid().n();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    v[1..n - 1].copy_from_slice(x);
    let mut out = ComplexField::from_values(psi0.grid().clone(), v).expect("length matches the grid");
    out.close_boundary();
    out
}

/// Integrates `i∂ₜΨ + ΔΨ + f(Ψ) = 0` from `psi0` up to `t_end`.
pub fn evolve(model: &NonlinearityModel, psi0: &ComplexField, opts: &EvolveOptions) -> Result<EvolutionTrace> {
    if !model.is_odd() {
        return Err(Error::Domain("evolution needs an odd nonlinearity".into()));
    }
    if !(opts.dt > 0.0 && opts.t_end >= 0.0 && opts.record_every > 0) {
        return Err(Error::Domain("dt must be positive and t_end non-negative".into()));
    }
    if psi0.grid().dim() != model.dim() {
        return Err(Error::Domain("grid and model dimensions differ".into()));
    }
    let reference = opts.reference.as_ref().map(|u| u.to_complex());
    let n = psi0.grid().n();
    let mut x: Vec<Complex64> = psi0.values()[1..n - 1].to_vec();
    let steps = (opts.t_end / opts.dt).round() as usize;
    let mut tr = EvolutionTrace {
        t: vec![],
        mass: vec![],
        energy: vec![],
        grad_norm: vec![],
        v: vec![],
        dv: vec![],
        m: vec![],
        dist: vec![],
        overlap_phase: vec![],
        blowup_time: None,
        dt_history: vec![],
        steps: 0,
        final_state: None,
    };
    let mut psi = assemble(psi0, &x);
    let e0 = psi.energy(model);
    let g0 = psi.grad_norm();
    let e_scale = e0.abs().max(psi.grad_sq()).max(f64::MIN_POSITIVE);
    let ceiling = opts.blowup_factor * g0;
    let mut e_prev = e0;
    let record = |tr: &mut EvolutionTrace, psi: &ComplexField, t: f64, e: f64| -> Result<()> {
        tr.t.push(t);
        tr.mass.push(psi.mass());
        tr.energy.push(e);
        tr.grad_norm.push(psi.grad_norm());
        tr.v.push(psi.virial_weight());
        tr.m.push(m_of(model, psi));
        if let (Some(u), Some(r)) = (&reference, &opts.reference) {
            tr.dist.push(orbital_distance(psi, r)?);
            let z = u.inner(psi).arg();
            let p = match tr.overlap_phase.last() {
                Some(&last) => {
                    let two_pi = 2.0 * std::f64::consts::PI;
                    last + (z - last + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
                }
                None => z,
            };
            tr.overlap_phase.push(p);
        }
        Ok(())
    };
    record(&mut tr, &psi, 0.0, e0)?;
    let mut dt = opts.t_end / steps.max(1) as f64;
    let mut stepper = Stepper::new(model, psi0, dt);
    let mut halvings = 0;
    let mut t = 0.0;
    tr.dt_history.push((0.0, dt));
    while steps > 0 && t < opts.t_end * (1.0 - 1e-12) {
        let mut xn = x.clone();
        stepper.step(&mut xn);
        let cand = assemble(psi0, &xn);
        let t_new = t + dt;
        let gn = cand.grad_norm();
        if !gn.is_finite() || gn > ceiling {
            tr.blowup_time = Some(t_new);
            psi = cand;
            break;
        }
        let e = cand.energy(model);
        let jump = (e - e_prev).abs() / e_scale;
        if jump > 100.0 * opts.energy_tol {
            if halvings < opts.max_halvings {
                halvings += 1;
                dt *= 0.5;
                stepper = Stepper::new(model, psi0, dt);
                tr.dt_history.push((t, dt));
                continue;
            }
            if gn > opts.resolution_factor * g0 {
                tr.blowup_time = Some(t_new);
                psi = cand;
                break;
            }
            // Strang local error is O(dt³)
            let suggested_dt = 0.5 * dt * (100.0 * opts.energy_tol / jump).cbrt();
            return Err(Error::StepSize { jump, suggested_dt });
        }
        x = xn;
        psi = cand;
        t = t_new;
        e_prev = e;
        tr.steps += 1;
        if tr.steps % opts.record_every == 0 || t >= opts.t_end * (1.0 - 1e-12) {
            record(&mut tr, &psi, t, e)?;
        }
    }
    tr.dv = first_difference(&tr.t, &tr.v);
    tr.final_state = Some(psi);
    Ok(tr)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub epsilon: f64,
    /// finite horizon; the definition takes a supremum over all t > 0
    pub horizon: f64,
    pub initial_energy: f64,
    pub out_of_well: bool,
    pub sup_distance: f64,
    pub max_grad_norm: f64,
    pub r0: f64,
    pub stayed_below_r0: bool,
    pub blowup_time: Option<f64>,
    pub stable: bool,
    pub tags: Vec<String>,
    #[serde(skip)]
    pub trace: Option<EvolutionTrace>,
}

/// Evolves `ū + ε·p` (renormalized to `|ū|₂`) with `p` a random smooth radial
/// bump of unit mass and reports the orbital distance to `ū`.
pub fn stability_probe(
    model: &NonlinearityModel,
    ubar: &RadialField,
    epsilon: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<StabilityReport> {
    let rho = ubar.mass();
    let r0 = geometry(model, rho, &[])?
        .r0
        .ok_or_else(|| Error::Domain("no well: the mass is above the threshold".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = RadialField::random_smooth(ubar.grid().clone(), &mut rng, 4, 1.0, false);
    let vals: Vec<f64> = ubar.values().iter().zip(p.values()).map(|(a, b)| a + epsilon * b).collect();
    let mut u0 = RadialField::from_values(ubar.grid().clone(), vals)?;
    u0.close_boundary();
    let u0 = u0.scaled(rho / u0.mass());
    let initial_energy = u0.energy(model);
    let out_of_well = initial_energy >= 0.0 || u0.grad_norm() >= r0;
    let opts = EvolveOptions {
        dt,
        t_end: horizon,
        record_every: ((0.05 / dt).round() as usize).max(1),
        energy_tol: 1e-4,
        blowup_factor: 1e3,
        resolution_factor: 2.0,
        max_halvings: 8,
        reference: Some(ubar.clone()),
    };
    let trace = evolve(model, &u0.to_complex(), &opts)?;
    let sup_distance = trace.dist.iter().cloned().fold(0.0, f64::max);
    let max_grad_norm = trace.grad_norm.iter().cloned().fold(0.0, f64::max);
    let stayed_below_r0 = max_grad_norm < r0;
    let stable = !out_of_well && stayed_below_r0 && !trace.blew_up();
    let mut tags = vec!["def:os".to_string()];
    if stable {
        tags.push("pr:os".into());
    } else {
        tags.push("pr:os:violation".into());
    }
    Ok(StabilityReport {
        epsilon,
        horizon,
        initial_energy,
        out_of_well,
        sup_distance,
        max_grad_norm,
        r0,
        stayed_below_r0,
        blowup_time: trace.blowup_time,
        stable,
        tags,
        trace: Some(trace),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupReport {
    pub s: f64,
    pub delta: f64,
    pub v0: f64,
    pub dv0: f64,
    /// positive root of `V(0) + V'(0)t − 4δt²`
    pub t_star: f64,
    pub detected_at: Option<f64>,
    pub detected_before_t_star: bool,
    /// `max (M(Ψ(t)) + δ)` before detection
    pub max_m_plus_delta: f64,
    pub m_initial: f64,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub m: Vec<f64>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BlowupOptions {
    pub dt: f64,
    pub energy_tol: f64,
    pub blowup_factor: f64,
    pub resolution_factor: f64,
    pub max_halvings: usize,
    pub record_every: usize,
    /// evolution window; `2T*` when absent
    pub horizon: Option<f64>,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        BlowupOptions {
            dt: 2e-6,
            energy_tol: 1e-4,
            blowup_factor: 1e3,
            resolution_factor: 2.0,
            max_halvings: 8,
            record_every: 1,
            horizon: None,
        }
    }
}

/// Evolves `s⋆ũ`, `s > 1`, and compares the blow-up time with the virial root.
pub fn blowup_probe(model: &NonlinearityModel, utilde: &RadialField, s: f64, opts: &BlowupOptions) -> Result<BlowupReport> {
    if !(s >= 1.0) {
        return Err(Error::Domain(format!("s = {s} must be at least 1")));
    }
    let psi0 = if s == 1.0 { utilde.clone() } else { utilde.scale_star(s)? };
    let delta = utilde.energy(model) - psi0.energy(model);
    let m_initial = m_of(model, &psi0.to_complex());
    // V'(0) needs two records; take it from a short start-up run
    let start = evolve(
        model,
        &psi0.to_complex(),
        &EvolveOptions {
            dt: opts.dt,
            t_end: 2.0 * opts.dt,
            record_every: 1,
            energy_tol: 1.0,
            blowup_factor: f64::INFINITY,
            resolution_factor: f64::INFINITY,
            max_halvings: 0,
            reference: None,
        },
    )?;
    let v0 = start.v[0];
    let dv0 = start.dv[0];
    let t_star = if delta > 0.0 {
        (dv0 + (dv0 * dv0 + 16.0 * delta * v0).sqrt()) / (8.0 * delta)
    } else {
        f64::INFINITY
    };
    let horizon = match (opts.horizon, t_star.is_finite()) {
        (Some(h), _) => h,
        (None, true) => 2.0 * t_star,
        (None, false) => {
            return Err(Error::Domain(format!(
                "no virial root for delta = {delta:.3e}; pass an explicit horizon"
            )))
        }
    };
    let trace = evolve(
        model,
        &psi0.to_complex(),
        &EvolveOptions {
            dt: opts.dt,
            t_end: horizon,
            record_every: opts.record_every,
            energy_tol: opts.energy_tol,
            blowup_factor: opts.blowup_factor,
            resolution_factor: opts.resolution_factor,
            max_halvings: opts.max_halvings,
            reference: None,
        },
    )?;
    let max_m_plus_delta = trace.m.iter().map(|m| m + delta).fold(f64::NEG_INFINITY, f64::max);
    let detected_at = trace.blowup_time;
    let detected_before_t_star = detected_at.is_some_and(|t| t <= t_star);
    let mut tags = vec!["le:inst".to_string()];
    if detected_before_t_star {
        tags.push("pr:si".into());
    }
    Ok(BlowupReport {
        s,
        delta,
        v0,
        dv0,
        t_star,
        detected_at,
        detected_before_t_star,
        max_m_plus_delta,
        m_initial,
        t: trace.t,
        v: trace.v,
        grad_norm: trace.grad_norm,
        m: trace.m,
        tags,
    })
}
