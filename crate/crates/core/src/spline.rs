//! Cubic interpolating spline on strictly increasing knots.

use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    Natural,
    /// Prescribed first derivative.
    Clamped(f64),
}

#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
    uniform: bool,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64], left: EndCondition, right: EndCondition) -> Self {
        let n = x.len();
        assert!(n >= 3 && y.len() == n, "spline needs at least three knots");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().all(|&d| d > 0.0), "knots must increase");
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            lower[i] = h[i - 1] / 6.0;
            diag[i] = (h[i - 1] + h[i]) / 3.0;
            upper[i] = h[i] / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];
        }
        match left {
            EndCondition::Natural => diag[0] = 1.0,
            EndCondition::Clamped(d) => {
                diag[0] = h[0] / 3.0;
                upper[0] = h[0] / 6.0;
                rhs[0] = (y[1] - y[0]) / h[0] - d;
            }
        }
        match right {
            EndCondition::Natural => diag[n - 1] = 1.0,
            EndCondition::Clamped(d) => {
                lower[n - 1] = h[n - 2] / 6.0;
                diag[n - 1] = h[n - 2] / 3.0;
                rhs[n - 1] = d - (y[n - 1] - y[n - 2]) / h[n - 2];
            }
        }
        let m = Tridiagonal { lower, diag, upper }.factor().solve(&rhs);
        let h0 = h[0];
        let uniform = h.iter().all(|&d| (d - h0).abs() <= 1e-12 * h0);
        CubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
            uniform,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        if self.uniform {
            let h = (self.x[n - 1] - self.x[0]) / (n - 1) as f64;
            let k = ((t - self.x[0]) / h).floor();
            return (k.max(0.0) as usize).min(n - 2);
        }
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value at `t`; `t` is clamped to the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.x_min(), self.x_max());
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let t = t.clamp(self.x_min(), self.x_max());
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0
            + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0
    }
}
