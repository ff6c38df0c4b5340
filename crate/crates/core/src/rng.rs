//! Counter-based random streams.
//!
//! Every random decision in the pipeline is drawn from a ChaCha stream keyed
//! by `(seed, domain)` and selected by an index (usually the cycle number), so
//! the result for a given cycle never depends on which thread produced it or
//! on how many cycles were processed before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separates the purposes a single user seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Carrier loading and jump-process events of one excitation cycle.
    Emission = 1,
    /// Arm selection at the input splitter of the interferometer.
    Routing = 2,
    /// Output port, efficiency and jitter draws for one output cycle.
    Detection = 3,
    /// Phase-diffusion trajectory of one photon.
    Phase = 4,
    /// Simplex restarts in the fitting module.
    Restart = 5,
    /// Synthetic noise for test and calibration data.
    Noise = 6,
}

pub fn keyed_stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate (Box-Muller, one output per call).
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
