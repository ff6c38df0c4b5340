//! Small statistical helpers shared by the correlator and the tests.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Gamma, Normal};

/// Two-sided 95% quantile of the standard normal.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Exact (Garwood) central confidence interval for a Poisson mean given an
/// observed count `k`.
pub fn poisson_interval(k: u64, level: f64) -> (f64, f64) {
    let alpha = 1.0 - level;
    let lower = if k == 0 {
        0.0
    } else {
        Gamma::new(k as f64, 1.0)
            .expect("shape > 0")
            .inverse_cdf(alpha / 2.0)
    };
    let upper = Gamma::new(k as f64 + 1.0, 1.0)
        .expect("shape > 0")
        .inverse_cdf(1.0 - alpha / 2.0);
    (lower, upper)
}

/// Memoizes 95% Poisson intervals; surfaces repeat the same small counts
/// many times.
#[derive(Default)]
pub struct PoissonIntervals {
    cache: HashMap<u64, (f64, f64)>,
}

impl PoissonIntervals {
    pub fn ci95(&mut self, k: u64) -> (f64, f64) {
        *self
            .cache
            .entry(k)
            .or_insert_with(|| poisson_interval(k, 0.95))
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// FWHM to standard deviation for a Gaussian.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}
