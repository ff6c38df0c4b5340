//! First-order coherence, two-photon interference and coalescence.
//!
//! A photon loaded at capture time `s` has the temporal mode
//! `xi(t) = sqrt(G1) exp(-G1 (t - s) / 2) exp(i phi(t - s))` for `t >= s`,
//! where `phi` is a Wiener phase with variance `2 gd` per ns. Photons from
//! different excitation cycles carry independent phases.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{self, model_surfaces, AnalyticGrid, ModelSurfaces};
use crate::optics::DetectorSpec;
use crate::scenario::EmitterScenario;
use crate::stats::Z95;
use crate::surface::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};

/// Refinement depth of the phase trajectory (horizon / 2^depth resolution).
const PHASE_DEPTH: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavepacketParams {
    pub capture_time: f64,
    pub radiative_rate: f64,
    pub pure_dephasing_rate: f64,
    pub phase_seed: u64,
    /// Longest time after capture at which the phase is needed, ns.
    pub horizon: f64,
}

impl WavepacketParams {
    pub fn amplitude(&self, t: f64) -> Complex64 {
        let u = t - self.capture_time;
        if u < 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let magnitude = self.radiative_rate.sqrt() * (-0.5 * self.radiative_rate * u).exp();
        Complex64::from_polar(magnitude, self.phase(u))
    }

    /// Phase `u` ns after capture, realized deterministically from the seed.
    pub fn phase(&self, u: f64) -> f64 {
        let variance_rate = 2.0 * self.pure_dephasing_rate;
        if variance_rate == 0.0 {
            return 0.0;
        }
        let horizon = self.horizon.max(u).max(f64::MIN_POSITIVE);
        // Levy construction: endpoint first, then midpoint refinement down to
        // PHASE_DEPTH levels, linear (bridge mean) below that.
        let (mut a, mut b) = (0.0, horizon);
        let (mut wa, mut wb) = (
            0.0,
            (variance_rate * horizon).sqrt() * node_normal(self.phase_seed, 0),
        );
        let mut node = 1u64;
        for _ in 0..PHASE_DEPTH {
            let m = 0.5 * (a + b);
            let wm = 0.5 * (wa + wb)
                + (0.25 * variance_rate * (b - a)).sqrt() * node_normal(self.phase_seed, node);
            if u < m {
                b = m;
                wb = wm;
                node *= 2;
            } else {
                a = m;
                wa = wm;
                node = 2 * node + 1;
            }
        }
        wa + (wb - wa) * (u - a) / (b - a)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal keyed by `(seed, node)`.
fn node_normal(seed: u64, node: u64) -> f64 {
    let h1 = splitmix64(seed ^ splitmix64(node));
    let h2 = splitmix64(h1);
    let unit = |x: u64| ((x >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    (-2.0 * unit(h1).ln()).sqrt() * (std::f64::consts::TAU * unit(h2)).cos()
}

/// Joint density of one detection in output port 1 at `t1` and one in port 2
/// at `t2` when photon `a` and photon `b` enter a balanced splitter from
/// opposite inputs: `|xi_a(t1) xi_b(t2) - xi_a(t2) xi_b(t1)|^2 / 4`.
pub fn pair_coincidence(a: &WavepacketParams, b: &WavepacketParams, t1: f64, t2: f64) -> f64 {
    0.25 * (a.amplitude(t1) * b.amplitude(t2) - a.amplitude(t2) * b.amplitude(t1)).norm_sqr()
}

/// Output-port probabilities for a photon pair whose detection times are
/// `x` (photon `a`) and `y` (photon `b`), conditional on those times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    /// `x` in port 1, `y` in port 2.
    pub split_xy: f64,
    /// `y` in port 1, `x` in port 2.
    pub split_yx: f64,
    /// Both in port 1.
    pub bunch_1: f64,
    /// Both in port 2.
    pub bunch_2: f64,
}

impl PairOutcome {
    pub const DISTINGUISHABLE: PairOutcome = PairOutcome {
        split_xy: 0.25,
        split_yx: 0.25,
        bunch_1: 0.25,
        bunch_2: 0.25,
    };

    pub fn coincidence(&self) -> f64 {
        self.split_xy + self.split_yx
    }
}

/// Conditions the two-photon detection statistics on the detection times.
///
/// With `A = xi_a(x) xi_b(y)` and `B = xi_a(y) xi_b(x)`, the time pair is
/// drawn with density `|A|^2 + |B|^2` by independent emission, and the
/// port configuration then has weights `|A - B|^2 / 4` for each split
/// labeling and `|A + B|^2 / 4` for each bunched outcome.
pub fn pair_outcome(a: &WavepacketParams, b: &WavepacketParams, x: f64, y: f64) -> PairOutcome {
    let amp_a = a.amplitude(x) * b.amplitude(y);
    let amp_b = a.amplitude(y) * b.amplitude(x);
    let total = amp_a.norm_sqr() + amp_b.norm_sqr();
    if total <= 0.0 {
        return PairOutcome::DISTINGUISHABLE;
    }
    let split = 0.25 * (amp_a - amp_b).norm_sqr() / total;
    let bunch = 0.25 * (amp_a + amp_b).norm_sqr() / total;
    PairOutcome {
        split_xy: split,
        split_yx: split,
        bunch_1: bunch,
        bunch_2: bunch,
    }
}

/// Largest photon number whose port pattern is sampled from the full
/// multi-photon amplitude; larger groups split independently.
pub const MAX_INTERFERING_PHOTONS: usize = 8;

/// Amplitude of a photon entering `input` (0 or 1) to leave `port` (0 or 1)
/// of a lossless splitter with power transmission `t`.
fn splitter_amplitude(t: f64, input: usize, port: usize) -> f64 {
    match (input, port) {
        (0, 0) => t.sqrt(),
        (0, _) | (_, 0) => (1.0 - t).sqrt(),
        _ => -t.sqrt(),
    }
}

/// Permanent by Ryser's formula; `m` is row-major `n x n`.
fn permanent(m: &[Complex64], n: usize) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    let mut row_sums = vec![Complex64::new(0.0, 0.0); n];
    for subset in 1u32..(1 << n) {
        row_sums
            .iter_mut()
            .for_each(|r| *r = Complex64::new(0.0, 0.0));
        for j in (0..n).filter(|j| subset & (1 << j) != 0) {
            for (i, r) in row_sums.iter_mut().enumerate() {
                *r += m[i * n + j];
            }
        }
        let prod: Complex64 = row_sums.iter().product();
        if (n - subset.count_ones() as usize) % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

/// Port-pattern probabilities for photons meeting at a splitter, conditional
/// on their detection times.
///
/// Photon `p` has wavepacket `packets[p]`, enters input `inputs[p]` and is
/// detected at `times[p]`. Entry `s` of the result is the probability that
/// the detection at `times[m]` is in port 2 exactly for the bits `m` set in
/// `s`. The weight of a pattern is `|perm(B_s)|^2` with
/// `B_s[p][m] = xi_p(t_m) U[input_p][port_m]`, which for two photons reduces
/// to [`pair_outcome`].
pub fn port_distribution(
    packets: &[WavepacketParams],
    inputs: &[usize],
    times: &[f64],
    transmission: f64,
) -> Vec<f64> {
    let n = packets.len();
    assert!(n <= MAX_INTERFERING_PHOTONS && inputs.len() == n && times.len() == n);
    let field: Vec<Complex64> = (0..n)
        .flat_map(|p| times.iter().map(move |&t| packets[p].amplitude(t)))
        .collect();
    let mut weights = vec![0.0; 1 << n];
    let mut b = vec![Complex64::new(0.0, 0.0); n * n];
    for (pattern, w) in weights.iter_mut().enumerate() {
        for p in 0..n {
            for m in 0..n {
                let port = (pattern >> m) & 1;
                b[p * n + m] = field[p * n + m] * splitter_amplitude(transmission, inputs[p], port);
            }
        }
        *w = permanent(&b, n).norm_sqr();
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
        return weights;
    }
    // Every amplitude underflowed: fall back to independent splitting.
    independent_ports(inputs, transmission)
}

/// Port-pattern probabilities when every photon splits on its own.
pub fn independent_ports(inputs: &[usize], transmission: f64) -> Vec<f64> {
    (0..1usize << inputs.len())
        .map(|pattern| {
            inputs
                .iter()
                .enumerate()
                .map(|(m, &input)| {
                    splitter_amplitude(transmission, input, (pattern >> m) & 1).powi(2)
                })
                .product()
        })
        .collect()
}

/// `|g1(t1, t2)|` of the emitter field, or `None` where the intensity underflows.
///
/// Only the exciton that is present at the earlier time and survives to the
/// later one contributes, so
/// `|g1|^2 = exp(-2 gd tau) P(t_min) exp(-G1 tau) / P(t_max)`.
pub fn analytic_g1(scenario: &EmitterScenario, t1: f64, t2: f64) -> Result<Option<f64>> {
    let period = scenario.pulse_period;
    if !(0.0..period).contains(&t1) || !(0.0..period).contains(&t2) {
        return Err(Error::Domain(format!("times must lie in [0, {period})")));
    }
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let occ = model::occupation_curve(scenario, &[lo, hi])?;
    if occ[0] <= f64::MIN_POSITIVE || occ[1] <= f64::MIN_POSITIVE {
        return Ok(None);
    }
    let tau = hi - lo;
    let g1sq = (-2.0 * scenario.pure_dephasing_rate * tau).exp()
        * occ[0]
        * (-scenario.radiative_rate * tau).exp()
        / occ[1];
    Ok(Some(g1sq.sqrt()))
}

/// HOM surface for independent identical inputs at a balanced splitter:
/// `g2_hom = [g2_hbt + 1 - |g1|^2] / 2`, applied to the integrated numerators
/// so binning and detector convolution commute with it.
pub fn hom_from_model(
    hbt: &CorrelationSurface,
    g1_squared: &CorrelationSurface,
) -> Result<CorrelationSurface> {
    hbt.check_same_grid(g1_squared)?;
    if hbt.origin != Origin::Model || g1_squared.quantity != Quantity::G1Squared {
        return Err(Error::param(
            "expected a model g2 surface and a model |g1|^2 surface",
        ));
    }
    let n = hbt.n_bins();
    let mut numerator = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let product = hbt.marginal1[i] * hbt.marginal2[j] / hbt.n_events;
            numerator[k] = 0.5 * (hbt.numerator[k] + product - g1_squared.numerator[k]);
        }
    }
    CorrelationSurface::from_parts(
        hbt.axis,
        Configuration::Hom,
        Quantity::G2,
        Origin::Model,
        numerator,
        hbt.marginal1.clone(),
        hbt.marginal2.clone(),
        hbt.n_events,
    )
}

/// Unconvolved model HOM surface.
pub fn analytic_g2_hom(
    scenario: &EmitterScenario,
    grid: &AnalyticGrid,
) -> Result<CorrelationSurface> {
    let m = model_surfaces(scenario, grid, None)?;
    hom_from_model(&m.hbt, &m.g1_squared)
}

/// The four model surfaces, optionally seen through a detector pair.
#[derive(Debug, Clone)]
pub struct AnalyticSet {
    pub hbt: CorrelationSurface,
    pub hom: CorrelationSurface,
    pub g1_squared: CorrelationSurface,
    pub coalescence: CoalescenceSurface,
}

pub fn analytic_set(
    scenario: &EmitterScenario,
    grid: &AnalyticGrid,
    detectors: Option<&[DetectorSpec; 2]>,
) -> Result<AnalyticSet> {
    let ModelSurfaces { hbt, g1_squared } = model_surfaces(scenario, grid, detectors)?;
    let hom = hom_from_model(&hbt, &g1_squared)?;
    let coalescence = coalescence(&hbt, &hom)?;
    Ok(AnalyticSet {
        hbt,
        hom,
        g1_squared,
        coalescence,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalescenceSurface {
    pub axis: TimeAxis,
    pub values: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CoalescenceSurface {
    pub fn n_bins(&self) -> usize {
        self.axis.n_bins()
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_bins() + j;
        self.valid[k].then_some(self.values[k])
    }

    /// `(t, C, ci_low, ci_high)` along `t1 = t2` for valid bins.
    pub fn diagonal(&self) -> Vec<(f64, f64, f64, f64)> {
        let n = self.n_bins();
        (0..n)
            .filter(|&i| self.valid[i * n + i])
            .map(|i| {
                let k = i * n + i;
                (
                    self.axis.bin_center(i),
                    self.values[k],
                    self.ci_low[k],
                    self.ci_high[k],
                )
            })
            .collect()
    }
}

/// `C = 1 + g2_hbt - 2 g2_hom` bin by bin, intervals combined in quadrature.
pub fn coalescence(
    hbt: &CorrelationSurface,
    hom: &CorrelationSurface,
) -> Result<CoalescenceSurface> {
    hbt.check_same_grid(hom)?;
    let len = hbt.g2.len();
    let mut out = CoalescenceSurface {
        axis: hbt.axis,
        values: vec![f64::NAN; len],
        ci_low: vec![f64::NAN; len],
        ci_high: vec![f64::NAN; len],
        valid: vec![false; len],
    };
    for k in 0..len {
        if !(hbt.valid[k] && hom.valid[k]) {
            continue;
        }
        let c = 1.0 + hbt.g2[k] - 2.0 * hom.g2[k];
        let down = (hbt.g2[k] - hbt.ci_low[k]).hypot(2.0 * (hom.ci_high[k] - hom.g2[k]));
        let up = (hbt.ci_high[k] - hbt.g2[k]).hypot(2.0 * (hom.g2[k] - hom.ci_low[k]));
        out.values[k] = c;
        out.ci_low[k] = c - down;
        out.ci_high[k] = c + up;
        out.valid[k] = true;
    }
    Ok(out)
}

/// Coalescence from sums over a set of bins: `1 + sum(hbt) - 2 sum(hom)`
/// where each sum is the pooled ratio `n_events * sum(C) / sum(N1 N2)`.
/// Returns `(C, half-width of the 95% interval)`.
pub fn pooled_coalescence(
    hbt: &CorrelationSurface,
    hom: &CorrelationSurface,
    include: impl Fn(usize, usize) -> bool,
) -> Result<(f64, f64)> {
    hbt.check_same_grid(hom)?;
    let n = hbt.n_bins();
    let pooled = |s: &CorrelationSurface| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if s.valid[k] && include(i, j) {
                    num += s.numerator[k];
                    den += s.marginal1[i] * s.marginal2[j];
                }
            }
        }
        (num, den)
    };
    let (nh, dh) = pooled(hbt);
    let (no, d_o) = pooled(hom);
    if dh <= 0.0 || d_o <= 0.0 {
        return Err(Error::NoValidBins);
    }
    let gh = nh * hbt.n_events / dh;
    let go = no * hom.n_events / d_o;
    // Poisson numerators dominate the uncertainty of pooled ratios.
    let sh = if nh > 0.0 {
        gh / nh.sqrt()
    } else {
        hbt.n_events / dh
    };
    let so = if no > 0.0 {
        go / no.sqrt()
    } else {
        hom.n_events / d_o
    };
    Ok((1.0 + gh - 2.0 * go, Z95 * sh.hypot(2.0 * so)))
}
