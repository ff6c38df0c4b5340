//! Emitter plus carrier-reservoir physics: lifetime envelope, Markov-chain
//! propagation and model correlation surfaces.

mod analytic;
mod convolve;
pub mod markov;

pub use analytic::{
    analytic_g2_hbt, intensity_curve, model_surfaces, occupation_curve, AnalyticGrid,
    IntensityCurve, ModelSurfaces,
};
pub use convolve::gaussian_kernel;
pub use markov::{photon_number_distribution, required_truncation, MarkovChain, MarkovState};

use crate::error::{Error, Result};
use crate::scenario::EmitterScenario;

/// Unnormalized lifetime envelope `[1 - exp(-rise t)] exp(-decay t)`.
///
/// An infinite `rise` gives the instantaneous-loading limit `exp(-decay t)`
/// for `t > 0`.
pub fn rise_decay_intensity(rise: f64, decay: f64, t: f64) -> Result<f64> {
    if !(rise > 0.0 && decay > 0.0 && decay.is_finite()) || rise.is_nan() {
        return Err(Error::Domain(format!(
            "rates must be positive (rise {rise}, decay {decay})"
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(-(-rise * t).exp_m1() * (-decay * t).exp())
}

/// Time of the envelope maximum, `ln(1 + rise/decay) / rise`.
pub fn rise_decay_peak(rise: f64, decay: f64) -> f64 {
    (rise / decay).ln_1p() / rise
}

/// Propagates `initial` under the scenario's reservoir dynamics for
/// `duration` ns with the default truncation.
///
/// `initial` is indexed by [`MarkovChain::index_of`] on the chain returned by
/// [`MarkovChain::for_scenario`].
pub fn propagate_markov(
    scenario: &EmitterScenario,
    initial: &[f64],
    duration: f64,
) -> Result<Vec<f64>> {
    MarkovChain::for_scenario(scenario)?.propagate(initial, duration)
}
