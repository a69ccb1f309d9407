//! Tridiagonal systems (Thomas algorithm), generic over real and complex scalars.

use num_traits::Zero;
use std::ops::{Add, Div, Mul, Sub};

pub trait Scalar:
    Copy + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
}

impl<T> Scalar for T where
    T: Copy + Zero + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Div<Output = T>
{
}

/// Matrix with `lower[i] = A[i][i-1]` (lower[0] unused) and `upper[i] = A[i][i+1]`
/// (upper[n-1] unused).
#[derive(Debug, Clone)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y = y + self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    y = y + self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// LU factorization without pivoting. Fine for the diagonally dominant
    /// and Hermitian-definite-shifted systems used here.
    pub fn factor(&self) -> TridiagonalLu<T> {
        let n = self.len();
        let mut c = vec![T::zero(); n];
        let mut d = vec![T::zero(); n];
        d[0] = self.diag[0];
        for i in 1..n {
            c[i] = self.lower[i] / d[i - 1];
            d[i] = self.diag[i] - c[i] * self.upper[i - 1];
        }
        TridiagonalLu {
            l: c,
            d,
            upper: self.upper.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalLu<T> {
    l: Vec<T>,
    d: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> TridiagonalLu<T> {
    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.d.len();
        for i in 1..n {
            x[i] = x[i] - self.l[i] * x[i - 1];
        }
        x[n - 1] = x[n - 1] / self.d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.d[i];
        }
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
