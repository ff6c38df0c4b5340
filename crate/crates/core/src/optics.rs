//! Optical routing and detection: photon records to detector time tags.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherence::{port_distribution, WavepacketParams, MAX_INTERFERING_PHOTONS};
use crate::error::{Error, Result};
use crate::rng::{keyed_stream, standard_normal, Domain};
use crate::stats::fwhm_to_sigma;
use crate::stochastic::{PhotonRecord, SimulationRun};
use crate::surface::{ns_to_ps, Configuration};

/// Timing FWHM of the reference single-photon detectors, ns.
pub const DEFAULT_JITTER_FWHM: f64 = 0.56;
/// Extra pulse periods travelled by the long interferometer arm.
pub const DEFAULT_DELAY_PERIODS: u32 = 3;
/// Opening of the cycle-relative delay window before each pulse, ns.
pub const DEFAULT_WINDOW_START: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub jitter_fwhm: f64,
    pub efficiency: f64,
    pub dead_time: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            jitter_fwhm: DEFAULT_JITTER_FWHM,
            efficiency: 1.0,
            dead_time: 0.0,
        }
    }
}

impl DetectorSpec {
    pub fn ideal() -> Self {
        DetectorSpec {
            jitter_fwhm: 0.0,
            efficiency: 1.0,
            dead_time: 0.0,
        }
    }

    pub fn with_jitter(jitter_fwhm: f64) -> Self {
        DetectorSpec {
            jitter_fwhm,
            ..Self::ideal()
        }
    }

    pub fn sigma(&self) -> f64 {
        fwhm_to_sigma(self.jitter_fwhm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_fwhm >= 0.0 && self.jitter_fwhm.is_finite()) {
            return Err(Error::param(format!(
                "jitter_fwhm must be >= 0, got {}",
                self.jitter_fwhm
            )));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::param(format!(
                "efficiency must lie in [0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(Error::param(format!(
                "dead_time must be >= 0, got {}",
                self.dead_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferometerSpec {
    #[serde(with = "configuration_serde")]
    pub configuration: Configuration,
    pub delay_periods: u32,
    /// Power transmission of the final splitter: a short-arm photon alone
    /// leaves in port 1 with this probability, a long-arm photon with its
    /// complement.
    pub splitter_transmission: f64,
    /// Forces zero overlap between interfering photons.
    pub distinguishable: bool,
}

impl Default for InterferometerSpec {
    fn default() -> Self {
        InterferometerSpec {
            configuration: Configuration::Hom,
            delay_periods: DEFAULT_DELAY_PERIODS,
            splitter_transmission: 0.5,
            distinguishable: false,
        }
    }
}

impl InterferometerSpec {
    pub fn hbt() -> Self {
        InterferometerSpec {
            configuration: Configuration::Hbt,
            ..Self::default()
        }
    }

    pub fn hom() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.configuration == Configuration::Hom && self.delay_periods < 1 {
            return Err(Error::param("delay_periods must be at least 1 for HOM"));
        }
        if !(0.0..=1.0).contains(&self.splitter_transmission) {
            return Err(Error::param("splitter_transmission must lie in [0, 1]"));
        }
        Ok(())
    }
}

mod configuration_serde {
    use super::Configuration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &Configuration, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(c)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Configuration, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Optical configuration, the two detectors behind it and the tagger window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalSetup {
    pub interferometer: InterferometerSpec,
    pub detectors: [DetectorSpec; 2],
    /// Delays are reported in `[window_start, window_start + period)`, ns;
    /// must lie in `(-period, 0]`.
    pub window_start: f64,
}

impl Default for OpticalSetup {
    fn default() -> Self {
        OpticalSetup {
            interferometer: InterferometerSpec::default(),
            detectors: [DetectorSpec::default(); 2],
            window_start: DEFAULT_WINDOW_START,
        }
    }
}

impl OpticalSetup {
    pub fn new(interferometer: InterferometerSpec, detectors: [DetectorSpec; 2]) -> Self {
        OpticalSetup {
            interferometer,
            detectors,
            window_start: DEFAULT_WINDOW_START,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.interferometer.validate()?;
        if !(self.window_start.is_finite() && self.window_start <= 0.0) {
            return Err(Error::param(format!(
                "window_start must be <= 0, got {}",
                self.window_start
            )));
        }
        self.detectors.iter().try_for_each(DetectorSpec::validate)
    }

    /// Source cycles that can feed output cycle `k`: `k - lookback ..= k`.
    pub fn lookback(&self) -> u64 {
        match self.interferometer.configuration {
            Configuration::Hbt => 0,
            Configuration::Hom => self.interferometer.delay_periods as u64,
        }
    }
}

/// One detection. `channel` is 1 or 2; `delay_ps` lies in the stream window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub cycle: u64,
    pub delay_ps: i64,
    pub channel: u8,
}

/// Canonically ordered tags of one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    pub period_ps: i64,
    /// Window opening relative to the pulse; delays lie in
    /// `[start_ps, start_ps + period_ps)`.
    pub start_ps: i64,
    /// Number of sync cycles covered; tags have `cycle < n_cycles`.
    pub n_cycles: u64,
    pub configuration: Configuration,
    pub delay_periods: u32,
    pub tags: Vec<TimeTag>,
}

impl TagStream {
    pub fn period(&self) -> f64 {
        self.period_ps as f64 / 1000.0
    }

    pub fn count(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// Tags grouped by cycle.
    pub fn cycles(&self) -> impl Iterator<Item = (u64, &[TimeTag])> {
        self.tags
            .chunk_by(|a, b| a.cycle == b.cycle)
            .map(|g| (g[0].cycle, g))
    }

    pub fn validate(&self) -> Result<()> {
        if self.period_ps <= 0 {
            return Err(Error::param("period must be positive"));
        }
        if !(self.start_ps <= 0 && self.start_ps > -self.period_ps) {
            return Err(Error::param("window start must lie in (-period, 0]"));
        }
        let window = self.start_ps..self.start_ps + self.period_ps;
        for (k, t) in self.tags.iter().enumerate() {
            if !(1..=2).contains(&t.channel) {
                return Err(Error::param(format!("tag {k}: channel must be 1 or 2")));
            }
            if !window.contains(&t.delay_ps) || t.cycle >= self.n_cycles {
                return Err(Error::param(format!(
                    "tag {k}: delay or cycle out of range"
                )));
            }
        }
        if self.tags.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("tags are not in canonical order"));
        }
        Ok(())
    }
}

/// Non-paralyzable dead time per channel, applied to tags in time order.
#[derive(Debug, Clone)]
pub(crate) struct DeadTimeFilter {
    dead_ps: [i64; 2],
    period_ps: i64,
    last: [Option<i128>; 2],
}

impl DeadTimeFilter {
    pub(crate) fn new(detectors: &[DetectorSpec; 2], period_ps: i64) -> Self {
        DeadTimeFilter {
            dead_ps: [
                ns_to_ps(detectors[0].dead_time),
                ns_to_ps(detectors[1].dead_time),
            ],
            period_ps,
            last: [None, None],
        }
    }

    pub(crate) fn admit(&mut self, tag: &TimeTag) -> bool {
        let ch = (tag.channel - 1) as usize;
        if self.dead_ps[ch] == 0 {
            return true;
        }
        let now = tag.cycle as i128 * self.period_ps as i128 + tag.delay_ps as i128;
        match self.last[ch] {
            Some(prev) if now - prev < self.dead_ps[ch] as i128 => false,
            _ => {
                self.last[ch] = Some(now);
                true
            }
        }
    }
}

/// Per-cycle routing and detection shared by the batch and streaming paths.
#[derive(Debug, Clone)]
pub(crate) struct Detector {
    pub setup: OpticalSetup,
    pub seed: u64,
    pub period: f64,
    pub period_ps: i64,
    pub start_ps: i64,
    pub n_cycles: u64,
    pub radiative_rate: f64,
    pub pure_dephasing_rate: f64,
}

impl Detector {
    pub(crate) fn new(
        setup: OpticalSetup,
        seed: u64,
        period: f64,
        n_cycles: u64,
        rates: (f64, f64),
    ) -> Result<Self> {
        setup.validate()?;
        let period_ps = ns_to_ps(period);
        let start_ps = ns_to_ps(setup.window_start);
        if start_ps <= -period_ps {
            return Err(Error::param("window_start must be later than minus one period"));
        }
        Ok(Detector {
            setup,
            seed,
            period,
            period_ps,
            start_ps,
            n_cycles,
            radiative_rate: rates.0,
            pure_dephasing_rate: rates.1,
        })
    }

    /// Efficiency, jitter and window crediting for a photon reaching
    /// `channel` at `t` ns after the pulse of output cycle `cycle`.
    fn register(
        &self,
        channel: u8,
        t: f64,
        cycle: u64,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<TimeTag>,
    ) {
        let det = &self.setup.detectors[(channel - 1) as usize];
        if det.efficiency < 1.0 && rng.random::<f64>() >= det.efficiency {
            return;
        }
        let sigma = det.sigma();
        let jitter = if sigma > 0.0 {
            sigma * standard_normal(rng)
        } else {
            0.0
        };
        let shifted = ns_to_ps(t + jitter) - self.start_ps;
        let cycle = cycle as i64 + shifted.div_euclid(self.period_ps);
        if cycle < 0 || cycle as u64 >= self.n_cycles {
            return;
        }
        out.push(TimeTag {
            cycle: cycle as u64,
            delay_ps: shifted.rem_euclid(self.period_ps) + self.start_ps,
            channel,
        });
    }

    /// HBT: each photon of source cycle `cycle` picks a port with probability 1/2.
    pub(crate) fn hbt_cycle(&self, cycle: u64, photons: &[PhotonRecord], out: &mut Vec<TimeTag>) {
        let mut rng = keyed_stream(self.seed, Domain::Detection, cycle);
        for p in photons {
            let channel = if rng.random::<f64>() < 0.5 { 1 } else { 2 };
            self.register(channel, p.emission_time, cycle, &mut rng, out);
        }
    }

    /// Arm choice at the input splitter for the photons of one source cycle.
    pub(crate) fn split_arms(
        &self,
        cycle: u64,
        photons: &[PhotonRecord],
        short: &mut Vec<PhotonRecord>,
        long: &mut Vec<PhotonRecord>,
    ) {
        let mut rng = keyed_stream(self.seed, Domain::Routing, cycle);
        for p in photons {
            if rng.random::<f64>() < 0.5 {
                long.push(*p);
            } else {
                short.push(*p);
            }
        }
    }

    fn wavepacket(&self, p: &PhotonRecord) -> WavepacketParams {
        WavepacketParams {
            capture_time: p.capture_time,
            radiative_rate: self.radiative_rate,
            pure_dephasing_rate: self.pure_dephasing_rate,
            phase_seed: p.phase_seed,
            horizon: self.period,
        }
    }

    /// Final splitter and detection for output cycle `k`, fed by the short-arm
    /// photons of source cycle `k` (input 0) and the long-arm photons of
    /// `k - delay` (input 1). Photons from both arms interfere jointly; a
    /// group confined to one arm, or too large to sample exactly, splits
    /// photon by photon.
    pub(crate) fn hom_cycle(
        &self,
        k: u64,
        short: &[PhotonRecord],
        long: &[PhotonRecord],
        out: &mut Vec<TimeTag>,
    ) {
        let mut rng = keyed_stream(self.seed, Domain::Detection, k);
        let spec = &self.setup.interferometer;
        let photons: Vec<(&PhotonRecord, usize)> = short
            .iter()
            .map(|p| (p, 0))
            .chain(long.iter().map(|p| (p, 1)))
            .collect();
        let n = photons.len();
        let interfere = !spec.distinguishable
            && !short.is_empty()
            && !long.is_empty()
            && n <= MAX_INTERFERING_PHOTONS;
        if !interfere {
            for (p, input) in photons {
                let to_port_1 = if input == 0 {
                    spec.splitter_transmission
                } else {
                    1.0 - spec.splitter_transmission
                };
                let channel = if rng.random::<f64>() < to_port_1 {
                    1
                } else {
                    2
                };
                self.register(channel, p.emission_time, k, &mut rng, out);
            }
            return;
        }
        let packets: Vec<WavepacketParams> =
            photons.iter().map(|(p, _)| self.wavepacket(p)).collect();
        let inputs: Vec<usize> = photons.iter().map(|(_, i)| *i).collect();
        let times: Vec<f64> = photons.iter().map(|(p, _)| p.emission_time).collect();
        let weights = port_distribution(&packets, &inputs, &times, spec.splitter_transmission);
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut pattern = weights.len() - 1;
        for (s, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pattern = s;
                break;
            }
        }
        for (m, (p, _)) in photons.iter().enumerate() {
            let channel = if (pattern >> m) & 1 == 0 { 1 } else { 2 };
            self.register(channel, p.emission_time, k, &mut rng, out);
        }
    }

    /// Raw tags of output cycles in `outputs`, given every photon of source
    /// cycles `outputs.start - lookback .. outputs.end` in canonical order.
    pub(crate) fn tags_for(
        &self,
        photons: &[PhotonRecord],
        outputs: std::ops::Range<u64>,
        out: &mut Vec<TimeTag>,
    ) {
        match self.setup.interferometer.configuration {
            Configuration::Hbt => {
                for group in photons.chunk_by(|a, b| a.cycle == b.cycle) {
                    let c = group[0].cycle;
                    if outputs.contains(&c) {
                        self.hbt_cycle(c, group, out);
                    }
                }
            }
            Configuration::Hom => {
                let delay = self.setup.interferometer.delay_periods as u64;
                let (mut short, mut long) = (Vec::new(), Vec::new());
                for group in photons.chunk_by(|a, b| a.cycle == b.cycle) {
                    self.split_arms(group[0].cycle, group, &mut short, &mut long);
                }
                let (mut i, mut j) = (0, 0);
                loop {
                    let ks = short.get(i).map(|p| p.cycle);
                    let kl = long.get(j).map(|p| p.cycle + delay);
                    let k = match (ks, kl) {
                        (None, None) => break,
                        (Some(a), None) | (None, Some(a)) => a,
                        (Some(a), Some(b)) => a.min(b),
                    };
                    let i0 = i;
                    while short.get(i).is_some_and(|p| p.cycle == k) {
                        i += 1;
                    }
                    let j0 = j;
                    while long.get(j).is_some_and(|p| p.cycle + delay == k) {
                        j += 1;
                    }
                    if outputs.contains(&k) {
                        self.hom_cycle(k, &short[i0..i], &long[j0..j], out);
                    }
                }
            }
        }
    }

    /// Sorts raw tags and applies dead time.
    pub(crate) fn finalize(&self, mut tags: Vec<TimeTag>) -> Vec<TimeTag> {
        tags.sort_unstable();
        let mut filter = DeadTimeFilter::new(&self.setup.detectors, self.period_ps);
        tags.retain(|t| filter.admit(t));
        tags
    }

    pub(crate) fn stream(&self, tags: Vec<TimeTag>) -> TagStream {
        TagStream {
            period_ps: self.period_ps,
            start_ps: self.start_ps,
            n_cycles: self.n_cycles,
            configuration: self.setup.interferometer.configuration,
            delay_periods: self.setup.interferometer.delay_periods,
            tags,
        }
    }
}

/// Photons per parallel work item when detecting a materialized run.
const DETECT_CHUNK: usize = 1 << 16;

/// Routes a run through the given optical setup and records tags.
pub fn detect(run: &SimulationRun, setup: &OpticalSetup, seed: u64) -> Result<TagStream> {
    detect_photons(
        &run.photons,
        &PhotonStreamInfo {
            n_cycles: run.n_cycles,
            pulse_period: run.pulse_period(),
            radiative_rate: run.source.wavepacket_rates().0,
            pure_dephasing_rate: run.source.wavepacket_rates().1,
        },
        setup,
        seed,
    )
}

/// What detection needs to know about a photon stream besides the records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonStreamInfo {
    pub n_cycles: u64,
    pub pulse_period: f64,
    pub radiative_rate: f64,
    pub pure_dephasing_rate: f64,
}

/// [`detect`] for canonically ordered records outside a [`SimulationRun`].
pub fn detect_photons(
    photons: &[PhotonRecord],
    info: &PhotonStreamInfo,
    setup: &OpticalSetup,
    seed: u64,
) -> Result<TagStream> {
    let det = Detector::new(
        *setup,
        seed,
        info.pulse_period,
        info.n_cycles,
        (info.radiative_rate, info.pure_dephasing_rate),
    )?;
    let raw = match setup.interferometer.configuration {
        // Cycles are independent, so photon chunks split on cycle boundaries
        // can be processed in parallel.
        Configuration::Hbt => split_on_cycles(photons, DETECT_CHUNK)
            .into_par_iter()
            .map(|chunk| {
                let mut out = Vec::new();
                det.tags_for(chunk, 0..info.n_cycles, &mut out);
                out
            })
            .collect::<Vec<_>>()
            .concat(),
        Configuration::Hom => {
            let mut out = Vec::new();
            det.tags_for(photons, 0..info.n_cycles, &mut out);
            out
        }
    };
    Ok(det.stream(det.finalize(raw)))
}

fn split_on_cycles(photons: &[PhotonRecord], target: usize) -> Vec<&[PhotonRecord]> {
    let mut parts = Vec::new();
    let mut rest = photons;
    while rest.len() > target {
        let mut cut = target;
        while cut < rest.len() && rest[cut].cycle == rest[cut - 1].cycle {
            cut += 1;
        }
        let (head, tail) = rest.split_at(cut);
        parts.push(head);
        rest = tail;
    }
    if !rest.is_empty() {
        parts.push(rest);
    }
    parts
}

pub fn detect_hbt(
    run: &SimulationRun,
    detectors: [DetectorSpec; 2],
    seed: u64,
) -> Result<TagStream> {
    detect(
        run,
        &OpticalSetup::new(InterferometerSpec::hbt(), detectors),
        seed,
    )
}

pub fn detect_hom(
    run: &SimulationRun,
    interferometer: InterferometerSpec,
    detectors: [DetectorSpec; 2],
    seed: u64,
) -> Result<TagStream> {
    if interferometer.configuration != Configuration::Hom {
        return Err(Error::param("detect_hom requires the HOM configuration"));
    }
    detect(run, &OpticalSetup::new(interferometer, detectors), seed)
}
