//! Event-level simulation of excitation cycles.
//!
//! Each cycle is an exact jump process (competing exponential clocks for
//! carrier loss, capture and emission) driven by its own keyed random stream,
//! so cycles can be simulated in any order or in parallel and always give the
//! same photons.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{keyed_stream, open_unit, Domain};
use crate::scenario::EmitterScenario;

/// Cycles per parallel work item.
const CHUNK_CYCLES: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonRecord {
    pub cycle: u64,
    /// Time the exciton was loaded, ns after the pulse (0 for direct loading).
    pub capture_time: f64,
    /// Emission time, ns after the pulse.
    pub emission_time: f64,
    /// Seeds the phase-diffusion trajectory of this photon.
    pub phase_seed: u64,
}

/// Attenuated pulsed laser: Poisson photon number per cycle, emission times
/// drawn independently from an exponential envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentSource {
    pub mean_photons: f64,
    pub envelope_rate: f64,
    pub pulse_period: f64,
}

impl CoherentSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photons.is_finite() && self.mean_photons >= 0.0) {
            return Err(Error::param("mean_photons must be non-negative"));
        }
        if !(self.envelope_rate > 0.0 && self.pulse_period > 0.0) {
            return Err(Error::param(
                "envelope_rate and pulse_period must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Emitter(EmitterScenario),
    Coherent(CoherentSource),
}

impl Source {
    pub fn pulse_period(&self) -> f64 {
        match self {
            Source::Emitter(s) => s.pulse_period,
            Source::Coherent(c) => c.pulse_period,
        }
    }

    /// Radiative (envelope) rate and pure dephasing rate of the photons.
    pub fn wavepacket_rates(&self) -> (f64, f64) {
        match self {
            Source::Emitter(s) => (s.radiative_rate, s.pure_dephasing_rate),
            Source::Coherent(c) => (c.envelope_rate, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Source::Emitter(s) => s.validate(),
            Source::Coherent(c) => c.validate(),
        }
    }

    /// Appends the photons of one cycle, in emission order.
    pub fn simulate_cycle(&self, cycle: u64, master_seed: u64, out: &mut Vec<PhotonRecord>) {
        let mut rng = keyed_stream(master_seed, Domain::Emission, cycle);
        match self {
            Source::Emitter(s) => emitter_cycle(s, cycle, &mut rng, out),
            Source::Coherent(c) => coherent_cycle(c, cycle, &mut rng, out),
        }
    }
}

fn poisson_draw<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn emitter_cycle<R: Rng>(
    s: &EmitterScenario,
    cycle: u64,
    rng: &mut R,
    out: &mut Vec<PhotonRecord>,
) {
    let mut counts: Vec<u64> = s
        .reservoirs
        .iter()
        .map(|r| poisson_draw(r.mean_initial_carriers, rng))
        .collect();
    let mut occupied = rng.random::<f64>() < s.direct_excitation_prob;
    let mut capture_time = 0.0;
    let mut t = 0.0;
    loop {
        let loss: f64 = s
            .reservoirs
            .iter()
            .zip(&counts)
            .map(|(r, &n)| r.loss_rate * n as f64)
            .sum();
        let capture: f64 = if occupied {
            0.0
        } else {
            s.reservoirs
                .iter()
                .zip(&counts)
                .map(|(r, &n)| r.capture_rate * n as f64)
                .sum()
        };
        let emission = if occupied { s.radiative_rate } else { 0.0 };
        let total = loss + capture + emission;
        if total <= 0.0 {
            break;
        }
        t += -open_unit(rng).ln() / total;
        if t >= s.pulse_period {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        if pick < emission {
            out.push(PhotonRecord {
                cycle,
                capture_time,
                emission_time: t,
                phase_seed: rng.random(),
            });
            occupied = false;
            continue;
        }
        pick -= emission;
        let mut handled = false;
        for (r, n) in s.reservoirs.iter().zip(counts.iter_mut()) {
            let nf = *n as f64;
            let l = r.loss_rate * nf;
            if pick < l {
                *n -= 1;
                handled = true;
                break;
            }
            pick -= l;
            if !occupied {
                let c = r.capture_rate * nf;
                if pick < c {
                    *n -= 1;
                    occupied = true;
                    capture_time = t;
                    handled = true;
                    break;
                }
                pick -= c;
            }
        }
        if !handled {
            // Rounding put the pick past the last channel; take the last
            // non-empty reservoir's loss.
            if let Some(n) = counts.iter_mut().rev().find(|n| **n > 0) {
                *n -= 1;
            }
        }
    }
}

fn coherent_cycle<R: Rng>(
    c: &CoherentSource,
    cycle: u64,
    rng: &mut R,
    out: &mut Vec<PhotonRecord>,
) {
    let n = poisson_draw(c.mean_photons, rng);
    let start = out.len();
    for _ in 0..n {
        let t = -open_unit(rng).ln() / c.envelope_rate;
        let phase_seed = rng.random();
        if t < c.pulse_period {
            out.push(PhotonRecord {
                cycle,
                capture_time: 0.0,
                emission_time: t,
                phase_seed,
            });
        }
    }
    out[start..].sort_by(|a, b| a.emission_time.total_cmp(&b.emission_time));
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub source: Source,
    pub n_cycles: u64,
    pub master_seed: u64,
    /// Canonical order: by cycle, then emission time.
    pub photons: Vec<PhotonRecord>,
}

impl SimulationRun {
    pub fn pulse_period(&self) -> f64 {
        self.source.pulse_period()
    }

    /// Photons grouped by cycle: `(cycle, photons of that cycle)` for every
    /// cycle that emitted.
    pub fn cycles(&self) -> impl Iterator<Item = (u64, &[PhotonRecord])> {
        self.photons
            .chunk_by(|a, b| a.cycle == b.cycle)
            .map(|group| (group[0].cycle, group))
    }
}

/// Photons of the cycles in `range`, in canonical order.
pub fn simulate_cycles(
    source: &Source,
    range: std::ops::Range<u64>,
    master_seed: u64,
) -> Vec<PhotonRecord> {
    let chunks: Vec<(u64, u64)> = (range.start..range.end)
        .step_by(CHUNK_CYCLES as usize)
        .map(|a| (a, (a + CHUNK_CYCLES).min(range.end)))
        .collect();
    chunks
        .into_par_iter()
        .map(|(a, b)| {
            let mut out = Vec::new();
            for cycle in a..b {
                source.simulate_cycle(cycle, master_seed, &mut out);
            }
            out
        })
        .collect::<Vec<_>>()
        .concat()
}

pub fn simulate_source(source: Source, n_cycles: u64, master_seed: u64) -> Result<SimulationRun> {
    if n_cycles == 0 {
        return Err(Error::param("n_cycles must be at least 1"));
    }
    source.validate()?;
    let photons = simulate_cycles(&source, 0..n_cycles, master_seed);
    Ok(SimulationRun {
        source,
        n_cycles,
        master_seed,
        photons,
    })
}

pub fn simulate(
    scenario: &EmitterScenario,
    n_cycles: u64,
    master_seed: u64,
) -> Result<SimulationRun> {
    simulate_source(Source::Emitter(scenario.clone()), n_cycles, master_seed)
}

pub fn mean_photons_per_cycle(run: &SimulationRun) -> f64 {
    run.photons.len() as f64 / run.n_cycles as f64
}

/// Emission-time histogram of a run (photons per bin, all cycles).
pub fn emission_histogram(run: &SimulationRun, bin_width: f64) -> (Vec<f64>, Vec<f64>) {
    photon_histogram(&run.photons, run.pulse_period(), bin_width)
}

/// Emission-time histogram of photon records over `[0, period)`.
pub fn photon_histogram(
    photons: &[PhotonRecord],
    period: f64,
    bin_width: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = (period / bin_width).ceil() as usize;
    let mut counts = vec![0.0; n];
    for p in photons {
        let k = ((p.emission_time / bin_width) as usize).min(n - 1);
        counts[k] += 1.0;
    }
    let centers = (0..n).map(|k| (k as f64 + 0.5) * bin_width).collect();
    (centers, counts)
}
