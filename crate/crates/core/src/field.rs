//! Radial discretization of `H¹_rad(ℝᴺ)`.
//!
//! Nodes `r_i = i·h` on `[0, r_max]`. Quadrature weights are the trapezoid rule
//! in `|S^{N−1}| r^{N−1} dr` with a Gregory correction at the outer end; the
//! origin carries zero weight. Edge fluxes `c_{i+1/2}` are chosen so that the
//! discrete divergence theorem holds for `r²`, which makes the Laplacian exact
//! on quadratics and self-adjoint in the weighted inner product. The outer node
//! is a Dirichlet node; the origin value is an output only, recovered from
//! regularity.

use crate::error::{Error, Result};
use crate::nonlinearity::NonlinearityModel;
use crate::numeric::sphere_area;
use crate::spline::{CubicSpline, EndCondition};
use crate::tridiag::Tridiagonal;
use num_complex::Complex64;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::sync::Arc;

/// Relative tail level that triggers the truncation warning.
pub const TRUNCATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct RadialGrid {
    dim: usize,
    r_max: f64,
    h: f64,
    r: Vec<f64>,
    w: Vec<f64>,
    flux: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.r.len() == other.r.len() && self.r_max == other.r_max
    }
}

impl RadialGrid {
    pub fn new(dim: usize, n: usize, r_max: f64) -> Result<Arc<Self>> {
        if dim < 3 {
            return Err(Error::Domain(format!("N = {dim} must be at least 3")));
        }
        if n < 16 {
            return Err(Error::Domain(format!("grid needs at least 16 nodes, got {n}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::Domain(format!("r_max = {r_max} must be positive")));
        }
        let h = r_max / (n - 1) as f64;
        let om = sphere_area(dim);
        let r: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let mut w: Vec<f64> = r.iter().map(|&x| om * x.powi(dim as i32 - 1) * h).collect();
        w[0] = 0.0;
        w[n - 1] *= 3.0 / 8.0;
        w[n - 2] *= 7.0 / 6.0;
        w[n - 3] *= 23.0 / 24.0;
        let mut flux = vec![0.0; n - 1];
        let mut acc = 0.0;
        for i in 1..n - 1 {
            acc += w[i];
            flux[i] = 2.0 * dim as f64 * acc / ((2 * i + 1) as f64 * h);
        }
        Ok(Arc::new(RadialGrid {
            dim,
            r_max,
            h,
            r,
            w,
            flux,
        }))
    }

    /// Default grid: 4096 nodes on `[0, 40]`.
    pub fn default_for(dim: usize) -> Result<Arc<Self>> {
        Self::new(dim, 4096, 40.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// `c_{i+1/2}` for `i = 0..n−2`; `c_{1/2} = 0`.
    pub fn fluxes(&self) -> &[f64] {
        &self.flux
    }

    pub fn ball_volume(&self) -> f64 {
        sphere_area(self.dim) * self.r_max.powi(self.dim as i32) / self.dim as f64
    }

    /// Stiffness matrix `K` on the active nodes `1..=n−2`, so that
    /// `(Ku)_i = −[c_{i+½}(u_{i+1} − u_i) − c_{i−½}(u_i − u_{i−1})]/h` and `Δu = −W⁻¹Ku`.
    pub fn stiffness(&self) -> Tridiagonal<f64> {
        let m = self.n() - 2;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let cl = self.flux[i - 1];
            let cr = self.flux[i];
            diag[k] = (cl + cr) / self.h;
            lower[k] = -cl / self.h;
            upper[k] = -cr / self.h;
        }
        Tridiagonal { lower, diag, upper }
    }

    /// Active-node weights `w_1..w_{n−2}`.
    pub fn active_weights(&self) -> &[f64] {
        &self.w[1..self.n() - 1]
    }
}

/// Scalar types a field can hold.
pub trait FieldValue:
    Copy + Debug + Send + Sync + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn modulus_sq(self) -> f64;
    fn modulus(self) -> f64 {
        self.modulus_sq().sqrt()
    }
}

impl FieldValue for f64 {
    fn modulus_sq(self) -> f64 {
        self * self
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl FieldValue for Complex64 {
    fn modulus_sq(self) -> f64 {
        self.norm_sqr()
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone)]
pub struct Field<T> {
    grid: Arc<RadialGrid>,
    values: Vec<T>,
}

pub type RadialField = Field<f64>;
pub type ComplexField = Field<Complex64>;

impl<T: FieldValue> Field<T> {
    pub fn from_values(grid: Arc<RadialGrid>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Domain(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.n()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.n();
        Field {
            grid,
            values: vec![T::zero(); n],
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn scaled(&self, c: f64) -> Self {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }

    /// Recover the origin value from regularity and pin the outer node to zero.
    pub fn close_boundary(&mut self) {
        let n = self.values.len();
        self.values[0] = (self.values[1] * 4.0 - self.values[2]) * (1.0 / 3.0);
        self.values[n - 1] = T::zero();
    }

    /// `|u|₂² = Σ w_i |u_i|²`.
    pub fn mass_sq(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.grid.w)
            .map(|(v, w)| w * v.modulus_sq())
            .sum()
    }

    /// `|u|₂`.
    pub fn mass(&self) -> f64 {
        self.mass_sq().sqrt()
    }

    /// `|∇u|₂² = Σ c_{i+½}|u_{i+1} − u_i|²/h`.
    pub fn grad_sq(&self) -> f64 {
        let h = self.grid.h;
        self.values
            .windows(2)
            .zip(&self.grid.flux)
            .map(|(p, c)| c * (p[1] - p[0]).modulus_sq())
            .sum::<f64>()
            / h
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad_sq().sqrt()
    }

    pub fn h1_norm(&self) -> f64 {
        (self.mass_sq() + self.grad_sq()).sqrt()
    }

    /// `|u|_p`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
        }
        Ok(self.lp_pow(p).powf(1.0 / p))
    }

    /// `|u|_p^p`.
    pub fn lp_pow(&self, p: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.grid.w)
            .map(|(v, w)| w * v.modulus().powf(p))
            .sum()
    }

    /// `Σ w_i r_i² |u_i|²`; logs a warning if the field has not decayed by `r_max`.
    pub fn virial_weight(&self) -> f64 {
        if self.is_truncated() {
            log::warn!(
                "field has not decayed before r_max = {}; virial weight is truncated",
                self.grid.r_max
            );
        }
        self.values
            .iter()
            .zip(&self.grid.w)
            .zip(&self.grid.r)
            .map(|((v, w), r)| w * r * r * v.modulus_sq())
            .sum()
    }

    /// `|u|` at the last free node exceeds `1e−6·max|u|`.
    pub fn is_truncated(&self) -> bool {
        let n = self.values.len();
        let max = self.max_modulus();
        max > 0.0 && self.values[n - 2].modulus() > TRUNCATION_TOL * max
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    /// Discrete `Δu`; the origin uses `Δu ≈ N u''`, the Dirichlet node returns 0.
    pub fn laplacian(&self) -> Self {
        let g = &self.grid;
        let n = g.n();
        let h = g.h;
        let mut out = vec![T::zero(); n];
        for i in 1..n - 1 {
            let flux_r = (self.values[i + 1] - self.values[i]) * g.flux[i];
            let flux_l = (self.values[i] - self.values[i - 1]) * g.flux[i - 1];
            out[i] = (flux_r - flux_l) * (1.0 / (h * g.w[i]));
        }
        out[0] = (self.values[1] - self.values[0]) * (2.0 * g.dim as f64 / (h * h));
        Field {
            grid: g.clone(),
            values: out,
        }
    }

    /// Largest step so that the support still spans `min_nodes` nodes.
    fn support_nodes(&self, level: f64) -> usize {
        let max = self.max_modulus();
        self.values.iter().filter(|v| v.modulus() > level * max).count()
    }

    /// Fraction of `|u|₂²` located beyond radius `rc`.
    fn tail_fraction(&self, rc: f64) -> f64 {
        let total = self.mass_sq();
        if total == 0.0 {
            return 0.0;
        }
        let tail: f64 = self
            .values
            .iter()
            .zip(&self.grid.w)
            .zip(&self.grid.r)
            .filter(|(_, &r)| r > rc)
            .map(|((v, w), _)| w * v.modulus_sq())
            .sum();
        tail / total
    }
}

impl Field<f64> {
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, f: F) -> Self {
        let values = grid.r.iter().map(|&r| f(r)).collect();
        Field { grid, values }
    }

    /// `e^{−r²/(2σ²)}` scaled to mass `m`.
    pub fn gaussian(grid: Arc<RadialGrid>, sigma: f64, m: f64) -> Self {
        let u = Self::from_fn(grid, |r| (-(r * r) / (2.0 * sigma * sigma)).exp());
        let c = m / u.mass();
        u.scaled(c)
    }

    /// Sum of `k` Gaussian bumps with random centres, widths and amplitudes, scaled to mass `m`.
    pub fn random_smooth<R: Rng>(grid: Arc<RadialGrid>, rng: &mut R, k: usize, m: f64, positive: bool) -> Self {
        let span = (grid.r_max / 4.0).min(6.0);
        let bumps: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| {
                let c = rng.gen_range(0.0..span * 0.5);
                let s = rng.gen_range(0.3..1.5) * span / 6.0;
                let a = if positive { rng.gen_range(0.2..1.0) } else { rng.gen_range(-1.0..1.0) };
                (c, s, a)
            })
            .collect();
        let u = Self::from_fn(grid, |r| {
            bumps
                .iter()
                .map(|&(c, s, a)| a * ((-(r - c) * (r - c) / (2.0 * s * s)).exp() + (-(r + c) * (r + c) / (2.0 * s * s)).exp()))
                .sum()
        });
        let mass = u.mass();
        if mass == 0.0 {
            return u;
        }
        u.scaled(m / mass)
    }

    pub fn to_complex(&self) -> ComplexField {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Weighted inner product `Σ w u v`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.grid.w)
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    /// `Σ w_i g(u_i)`.
    pub fn integral_of<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.values
            .iter()
            .zip(&self.grid.w)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&v, w)| w * g(v))
            .sum()
    }

    fn spline(&self) -> CubicSpline {
        CubicSpline::new(&self.grid.r, &self.values, EndCondition::Clamped(0.0), EndCondition::Clamped(0.0))
    }

    /// Cubic interpolation of the field at `r`, zero beyond `r_max`.
    pub fn sample(&self, r: f64) -> f64 {
        if r > self.grid.r_max {
            0.0
        } else {
            self.spline().eval(r)
        }
    }

    /// Field `v(r) = c · u(k r)` on the same grid.
    fn resample(&self, k: f64, c: f64) -> Self {
        let sp = self.spline();
        let rm = self.grid.r_max;
        let values = self
            .grid
            .r
            .iter()
            .map(|&r| {
                let x = k * r;
                if x >= rm {
                    0.0
                } else {
                    c * sp.eval(x)
                }
            })
            .collect();
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    /// `s⋆u = s^{N/2} u(s·)`: preserves mass and multiplies `|∇u|₂` by `s`.
    pub fn scale_star(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("scaling factor s = {s} must be positive")));
        }
        if s == 1.0 {
            return Ok(self.clone());
        }
        if s < 1.0 {
            let tail = self.tail_fraction(s * self.grid.r_max);
            if tail > 1e-12 {
                return Err(Error::Resolution(format!(
                    "s = {s} stretches {tail:.2e} of the mass beyond r_max"
                )));
            }
        }
        let v = self.resample(s, s.powf(self.dim() as f64 / 2.0));
        if s > 1.0 && self.max_modulus() > 0.0 && v.support_nodes(1e-3) < 16 {
            return Err(Error::Resolution(format!(
                "s = {s} compresses the support below grid resolution (h = {})",
                self.grid.h
            )));
        }
        Ok(v)
    }

    /// `v = u(·/θ^{2/N})`, so that `|v|₂ = θ|u|₂`.
    pub fn dilate_mass(&self, theta: f64) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta = {theta} must be at least 1")));
        }
        if theta == 1.0 {
            return Ok(self.clone());
        }
        let c = theta.powf(2.0 / self.dim() as f64);
        let tail = self.tail_fraction(self.grid.r_max / c);
        if tail > 1e-12 {
            return Err(Error::Resolution(format!(
                "dilation by theta = {theta} pushes {tail:.2e} of the mass beyond r_max"
            )));
        }
        Ok(self.resample(1.0 / c, 1.0))
    }

    /// Dilation `u(k·)` without prefactor, used by projections onto level sets.
    pub fn dilate(&self, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("dilation factor {k} must be positive")));
        }
        if k < 1.0 {
            let tail = self.tail_fraction(k * self.grid.r_max);
            if tail > 1e-12 {
                return Err(Error::Resolution(format!("dilation {k} pushes mass beyond r_max")));
            }
        }
        Ok(self.resample(k, 1.0))
    }

    /// Volume-weighted decreasing rearrangement of `|u|`. Mass is preserved exactly.
    pub fn rearrange_decreasing(&self) -> Self {
        let g = &self.grid;
        let n = g.n();
        let mut pairs: Vec<(f64, f64)> = (1..n).map(|i| (self.values[i].abs(), g.w[i])).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut out = vec![0.0; n];
        let mut k = 0; // current sorted piece
        let mut used = 0.0; // volume of piece k already consumed
        for i in 1..n {
            let mut need = g.w[i];
            let mut acc = 0.0;
            while need > 0.0 && k < pairs.len() {
                let avail = pairs[k].1 - used;
                let take = avail.min(need);
                acc += take * pairs[k].0 * pairs[k].0;
                need -= take;
                used += take;
                if pairs[k].1 - used <= 1e-15 * pairs[k].1 {
                    k += 1;
                    used = 0.0;
                }
            }
            out[i] = if g.w[i] > 0.0 { (acc / g.w[i]).sqrt() } else { 0.0 };
            if i > 1 && out[i] > out[i - 1] {
                // rounding only
                out[i] = out[i - 1];
            }
        }
        out[0] = ((4.0 * out[1] - out[2]) / 3.0).max(out[1]);
        Field {
            grid: g.clone(),
            values: out,
        }
    }

    /// `J(u) = ½|∇u|₂² − ∫F(u)`.
    pub fn energy(&self, model: &NonlinearityModel) -> f64 {
        0.5 * self.grad_sq() - self.integral_of(|t| model.big_f(t))
    }
}

impl Field<Complex64> {
    pub fn from_real_imag(grid: Arc<RadialGrid>, re: &[f64], im: &[f64]) -> Result<Self> {
        let values = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        Self::from_values(grid, values)
    }

    pub fn modulus_field(&self) -> RadialField {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn real_part(&self) -> RadialField {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }

    /// `Σ w conj(a) b`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.grid.w)
            .map(|((a, b), w)| a.conj() * b * *w)
            .sum()
    }

    /// `⟨a, b⟩` in `H¹`: weighted `L²` plus the edge-flux Dirichlet form.
    pub fn h1_inner(&self, other: &Self) -> Complex64 {
        let h = self.grid.h;
        let dir: Complex64 = self
            .values
            .windows(2)
            .zip(other.values.windows(2))
            .zip(&self.grid.flux)
            .map(|((a, b), c)| (a[1] - a[0]).conj() * (b[1] - b[0]) * *c)
            .sum::<Complex64>()
            / h;
        self.inner(other) + dir
    }

    /// `J(ψ) = ½|∇ψ|₂² − ∫F(|ψ|)`.
    pub fn energy(&self, model: &NonlinearityModel) -> f64 {
        let f: f64 = self
            .values
            .iter()
            .zip(&self.grid.w)
            .filter(|(_, &w)| w != 0.0)
            .map(|(v, w)| w * model.big_f(v.norm()))
            .sum();
        0.5 * self.grad_sq() - f
    }
}

/// `J(u) = ½|∇u|₂² − ∫F(u)`.
pub fn energy_j(model: &NonlinearityModel, u: &RadialField) -> f64 {
    u.energy(model)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridMeta {
    #[serde(rename = "N")]
    pub dim: usize,
    pub r_max: f64,
    pub n: usize,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

/// Writes `r,re,im` rows plus a `<path>.json` sidecar with the grid metadata.
pub fn write_field_csv<T: FieldValue + Into<Complex64>>(path: &Path, u: &Field<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "r,re,im")?;
    for (r, v) in u.grid.r.iter().zip(&u.values) {
        let z: Complex64 = (*v).into();
        writeln!(f, "{:.17e},{:.17e},{:.17e}", r, z.re, z.im)?;
    }
    f.flush()?;
    let meta = GridMeta {
        dim: u.grid.dim,
        r_max: u.grid.r_max,
        n: u.grid.n(),
    };
    std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?)?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`].
pub fn read_field_csv(path: &Path) -> Result<ComplexField> {
    let meta_text = std::fs::read_to_string(sidecar(path))
        .map_err(|e| Error::Io(format!("missing grid sidecar for {}: {e}", path.display())))?;
    let meta: GridMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse(e.to_string()))?;
    let grid = RadialGrid::new(meta.dim, meta.n, meta.r_max)?;
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(meta.n);
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected r,re,im", ln + 1)));
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)));
        values.push(Complex64::new(p(cols[1])?, p(cols[2])?));
    }
    Field::from_values(grid, values)
}
