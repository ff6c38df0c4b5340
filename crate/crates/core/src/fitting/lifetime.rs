//! Rise-and-decay fits of emission-time curves.

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use super::{covariance_sigmas, minimize, FitResult, SimplexOptions};
use crate::error::{Error, Result};
use crate::model::IntensityCurve;
use crate::stats::normal_cdf;

/// Minimum number of bins with a positive value.
const MIN_POPULATED: usize = 10;

/// Curve or histogram to fit; `sigmas` default to one.
///
/// With `counts` set the values are Poisson counts and the fit minimises the
/// Poisson deviance; `sigmas` are then ignored. With `bin_width` set, each value is compared with the model averaged over
/// `[t - w/2, t + w/2)` instead of the model at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeData {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub bin_width: Option<f64>,
    pub counts: bool,
}

impl LifetimeData {
    /// Counting histogram, fit by Poisson likelihood.
    pub fn from_histogram(centers: &[f64], counts: &[f64], bin_width: f64) -> Self {
        LifetimeData {
            times: centers.to_vec(),
            values: counts.to_vec(),
            sigmas: None,
            bin_width: Some(bin_width),
            counts: true,
        }
    }

    pub fn from_curve(curve: &IntensityCurve) -> Self {
        LifetimeData {
            times: curve.times.clone(),
            values: curve.values.clone(),
            sigmas: None,
            bin_width: None,
            counts: false,
        }
    }

    fn model(&self, rise: f64, decay: f64, amplitude: f64, irf_sigma: f64, k: usize) -> f64 {
        let t = self.times[k];
        match self.bin_width {
            None => lifetime_model(rise, decay, amplitude, irf_sigma, t),
            Some(w) => {
                let (a, b) = (t - 0.5 * w, t + 0.5 * w);
                let part = |rate: f64| {
                    smeared_integral(rate, irf_sigma, b) - smeared_integral(rate, irf_sigma, a)
                };
                amplitude * (part(decay) - part(rise + decay)) / w
            }
        }
    }

    fn weight(&self, k: usize) -> f64 {
        self.sigmas.as_ref().map_or(1.0, |s| 1.0 / (s[k] * s[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeGuess {
    pub rise: f64,
    pub decay: f64,
    /// Gaussian instrument response; zero fits the bare envelope.
    pub irf_sigma: f64,
}

/// `exp(-k t)` for `t >= 0`, convolved with a zero-mean Gaussian of width `sigma`.
fn smeared_exponential(k: f64, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return if t >= 0.0 { (-k * t).exp() } else { 0.0 };
    }
    let s2 = sigma * sigma;
    0.5 * (0.5 * k * k * s2 - k * t).exp() * erfc((k * s2 - t) / (sigma * std::f64::consts::SQRT_2))
}

/// Antiderivative of [`smeared_exponential`] in `t`, zero at `-inf`.
fn smeared_integral(k: f64, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return if t > 0.0 { -(-k * t).exp_m1() / k } else { 0.0 };
    }
    (normal_cdf(t / sigma) - smeared_exponential(k, sigma, t)) / k
}

/// `amplitude [1 - exp(-rise t)] exp(-decay t)`, optionally smeared by the IRF.
pub fn lifetime_model(rise: f64, decay: f64, amplitude: f64, irf_sigma: f64, t: f64) -> f64 {
    amplitude
        * (smeared_exponential(decay, irf_sigma, t)
            - smeared_exponential(rise + decay, irf_sigma, t))
}

/// Least-squares rise/decay fit. Rates are searched in log space with the
/// amplitude solved in closed form at every step.
pub fn fit_lifetime(
    data: &LifetimeData,
    guess: LifetimeGuess,
    options: &SimplexOptions,
) -> Result<FitResult> {
    let n = data.times.len();
    if data.values.len() != n || data.sigmas.as_ref().is_some_and(|s| s.len() != n) {
        return Err(Error::param(
            "times, values and sigmas must have equal length",
        ));
    }
    let populated = data.values.iter().filter(|v| **v > 0.0).count();
    if populated < MIN_POPULATED {
        return Err(Error::InsufficientData(format!(
            "{populated} populated bins, need at least {MIN_POPULATED}"
        )));
    }
    if !(guess.rise > 0.0 && guess.decay > 0.0 && guess.irf_sigma >= 0.0) {
        return Err(Error::param("initial rates must be positive"));
    }
    let sigma = guess.irf_sigma;

    // Best amplitude and residual (or deviance) for given rates.
    let profile = |rise: f64, decay: f64| -> (f64, f64) {
        let shape: Vec<f64> = (0..n)
            .map(|k| data.model(rise, decay, 1.0, sigma, k))
            .collect();
        if data.counts {
            return poisson_profile(&data.values, &shape);
        }
        let (mut fy, mut ff) = (0.0, 0.0);
        for k in 0..n {
            let w = data.weight(k);
            fy += w * shape[k] * data.values[k];
            ff += w * shape[k] * shape[k];
        }
        if ff <= 0.0 || fy <= 0.0 {
            return (0.0, f64::INFINITY);
        }
        let a = fy / ff;
        let r = (0..n)
            .map(|k| data.weight(k) * (data.values[k] - a * shape[k]).powi(2))
            .sum();
        (a, r)
    };

    let mut objective = |q: &[f64]| profile(q[0].exp(), q[1].exp()).1;
    let m = minimize(
        &mut objective,
        &[guess.rise.ln(), guess.decay.ln()],
        options,
    );
    let (rise, decay) = (m.x[0].exp(), m.x[1].exp());
    let (amplitude, residual) = profile(rise, decay);

    let params = [rise, decay, amplitude];
    let mut jac = DMatrix::zeros(n, 3);
    for p in 0..3 {
        let h = 1e-6 * params[p].abs().max(1e-12);
        let mut up = params;
        let mut down = params;
        up[p] += h;
        down[p] -= h;
        for k in 0..n {
            let d = (data.model(up[0], up[1], up[2], sigma, k)
                - data.model(down[0], down[1], down[2], sigma, k))
                / (2.0 * h);
            let w = if data.counts {
                1.0 / data.model(rise, decay, amplitude, sigma, k).max(1.0)
            } else {
                data.weight(k)
            };
            jac[(k, p)] = d * w.sqrt();
        }
    }
    let result = FitResult {
        names: vec!["rise".into(), "decay".into(), "amplitude".into()],
        values: params.to_vec(),
        uncertainties: covariance_sigmas(&jac, residual),
        residual,
        degrees_of_freedom: n.saturating_sub(3),
        iterations: m.iterations,
        converged: m.converged && residual.is_finite(),
        history: m.history,
    };
    if !result.converged {
        return Err(Error::NotConverged {
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Maximum-likelihood amplitude `sum y / sum f` and the Poisson deviance.
fn poisson_profile(values: &[f64], shape: &[f64]) -> (f64, f64) {
    let total: f64 = values.iter().sum();
    let norm: f64 = shape.iter().sum();
    if total <= 0.0 || norm <= 0.0 {
        return (0.0, f64::INFINITY);
    }
    let a = total / norm;
    let mut deviance = 0.0;
    for (&y, &f) in values.iter().zip(shape) {
        let m = a * f;
        if y > 0.0 {
            if m <= 0.0 {
                return (a, f64::INFINITY);
            }
            deviance += y * (y / m).ln() - (y - m);
        } else {
            deviance += m;
        }
    }
    (a, 2.0 * deviance)
}
