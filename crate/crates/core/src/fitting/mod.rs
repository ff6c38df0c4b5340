//! Parameter recovery: lifetime curve fits and recapture-model fits to
//! measured correlation surfaces.

mod lifetime;
pub mod simplex;
mod surface_fit;

use nalgebra::DMatrix;

pub use lifetime::{fit_lifetime, lifetime_model, LifetimeData, LifetimeGuess};
pub use simplex::{minimize, Minimum, SimplexOptions};
pub use surface_fit::{
    fit_g2_surface, FitTemplate, FreeParameter, ReservoirField, SurfaceFitOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// One standard deviation; NaN when the curvature matrix is singular.
    pub uncertainties: Vec<f64>,
    /// Weighted residual sum of squares at `values`.
    pub residual: f64,
    pub degrees_of_freedom: usize,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.values[k], self.uncertainties[k]))
    }

    pub fn report(&self) -> String {
        crate::io::write_fit_report(self, &crate::io::Metadata::new())
    }
}

/// Parameter standard deviations from the weighted Jacobian
/// (`rows` residual derivatives, already multiplied by sqrt(weight)),
/// scaled by the reduced residual.
pub(crate) fn covariance_sigmas(jacobian: &DMatrix<f64>, residual: f64) -> Vec<f64> {
    let (n, p) = jacobian.shape();
    if p == 0 {
        return Vec::new();
    }
    let dof = n.saturating_sub(p).max(1);
    let curvature = jacobian.transpose() * jacobian;
    match curvature.try_inverse() {
        Some(cov) => (0..p)
            .map(|k| (cov[(k, k)].max(0.0) * residual / dof as f64).sqrt())
            .collect(),
        None => vec![f64::NAN; p],
    }
}
