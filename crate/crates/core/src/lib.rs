//! Normalized solitary waves of `−Δu + λu = f(u)` with prescribed `L²` mass in
//! radial `ℝᴺ`, `N ≥ 3`: model checks, threshold geometry, fibering maps,
//! constrained minimizers and the associated Schrödinger flow.

pub mod dynamics;
pub mod error;
pub mod fibering;
pub mod field;
pub mod nonlinearity;
pub mod numeric;
pub mod scalar_bounds;
pub mod solver;
pub mod spline;
pub mod thresholds;
pub mod tridiag;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
