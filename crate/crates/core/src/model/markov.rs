//! Finite-state realization of the recapture model.
//!
//! A state is the carrier count of every reservoir plus the occupation of the
//! exciton. Carriers are lost at `loss_rate` each, captured at `capture_rate`
//! each while the exciton is empty, and the exciton emits at the radiative
//! rate. Carrier counts never increase after the pulse, so the chain truncated
//! at `m_max` carriers per reservoir is exact once the initial distribution
//! fits inside it.

use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::scenario::{EmitterScenario, ReservoirSpec};

pub const DEFAULT_TRUNCATION: usize = 12;
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;

/// Fraction of the largest single rate used as the integration step bound.
const STEPS_PER_INVERSE_RATE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovState {
    pub reservoir_counts: Vec<usize>,
    pub exciton_occupied: bool,
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    from: u32,
    to: u32,
    rate: f64,
}

#[derive(Debug, Clone)]
pub struct MarkovChain {
    radiative_rate: f64,
    reservoirs: Vec<ReservoirSpec>,
    m_max: usize,
    n_states: usize,
    transitions: Vec<Transition>,
    exit: Vec<f64>,
    max_step: f64,
}

/// Smallest truncation for which a Poisson(`mean`) load leaves at most
/// `BOUNDARY_MASS_LIMIT` probability at or beyond the boundary.
pub fn required_truncation(mean: f64) -> usize {
    if mean <= 0.0 {
        return 1;
    }
    let dist = Poisson::new(mean).expect("positive mean");
    let mut m = 1usize;
    // P(N >= m) = 1 - P(N <= m - 1)
    while dist.sf(m as u64 - 1) > BOUNDARY_MASS_LIMIT {
        m += 1;
    }
    m
}

impl MarkovChain {
    pub fn new(radiative_rate: f64, reservoirs: &[ReservoirSpec], m_max: usize) -> Result<Self> {
        if !(radiative_rate.is_finite() && radiative_rate > 0.0) {
            return Err(Error::param("radiative rate must be positive"));
        }
        if m_max == 0 {
            return Err(Error::param("m_max must be at least 1"));
        }
        reservoirs.iter().try_for_each(ReservoirSpec::validate)?;
        let base = m_max + 1;
        let n_states = base
            .checked_pow(reservoirs.len() as u32)
            .and_then(|c| c.checked_mul(2))
            .filter(|&c| c <= u32::MAX as usize)
            .ok_or_else(|| Error::param("state space too large"))?;

        let mut chain = MarkovChain {
            radiative_rate,
            reservoirs: reservoirs.to_vec(),
            m_max,
            n_states,
            transitions: Vec::new(),
            exit: vec![0.0; n_states],
            max_step: 0.0,
        };

        let mut max_exit: f64 = 0.0;
        for index in 0..n_states {
            let state = chain.state(index);
            let mut push = |to: usize, rate: f64, exit: &mut f64| {
                if rate > 0.0 {
                    chain.transitions.push(Transition {
                        from: index as u32,
                        to: to as u32,
                        rate,
                    });
                    *exit += rate;
                }
            };
            let mut exit = 0.0;
            let mut stride = 2;
            for (r, &count) in reservoirs.iter().zip(&state.reservoir_counts) {
                if count > 0 {
                    let n = count as f64;
                    push(index - stride, r.loss_rate * n, &mut exit);
                    if !state.exciton_occupied {
                        push(index - stride + 1, r.capture_rate * n, &mut exit);
                    }
                }
                stride *= base;
            }
            if state.exciton_occupied {
                push(index - 1, radiative_rate, &mut exit);
            }
            chain.exit[index] = exit;
            max_exit = max_exit.max(exit);
        }

        let max_rate = reservoirs
            .iter()
            .flat_map(|r| [r.loss_rate, r.capture_rate])
            .fold(radiative_rate, f64::max);
        chain.max_step =
            (1.0 / (STEPS_PER_INVERSE_RATE * max_rate)).min(1.0 / max_exit.max(1e-300));
        Ok(chain)
    }

    /// Chain over the reservoirs of `scenario` that carry any load, with the
    /// truncation raised above the default when the loads require it.
    pub fn for_scenario(scenario: &EmitterScenario) -> Result<Self> {
        scenario.validate()?;
        let active = scenario.active_reservoirs();
        let m = active
            .iter()
            .map(|r| required_truncation(r.mean_initial_carriers))
            .fold(DEFAULT_TRUNCATION, usize::max);
        MarkovChain::new(scenario.radiative_rate, &active, m)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn radiative_rate(&self) -> f64 {
        self.radiative_rate
    }

    pub fn reservoirs(&self) -> &[ReservoirSpec] {
        &self.reservoirs
    }

    /// Upper bound on the fixed integration step, ns.
    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    pub fn state(&self, index: usize) -> MarkovState {
        let base = self.m_max + 1;
        let mut rest = index / 2;
        let reservoir_counts = (0..self.reservoirs.len())
            .map(|_| {
                let c = rest % base;
                rest /= base;
                c
            })
            .collect();
        MarkovState {
            reservoir_counts,
            exciton_occupied: index % 2 == 1,
        }
    }

    pub fn index_of(&self, state: &MarkovState) -> Result<usize> {
        if state.reservoir_counts.len() != self.reservoirs.len() {
            return Err(Error::param("state has the wrong number of reservoirs"));
        }
        let base = self.m_max + 1;
        let mut index = 0;
        for &c in state.reservoir_counts.iter().rev() {
            if c > self.m_max {
                return Err(Error::param(format!(
                    "carrier count {c} exceeds m_max {}",
                    self.m_max
                )));
            }
            index = index * base + c;
        }
        Ok(index * 2 + usize::from(state.exciton_occupied))
    }

    #[inline]
    pub fn is_occupied(index: usize) -> bool {
        index % 2 == 1
    }

    /// Product of per-reservoir Poisson loads (tail lumped into the boundary
    /// state) and direct exciton loading with probability `p0`.
    pub fn initial_distribution(&self, direct_excitation_prob: f64) -> Result<Vec<f64>> {
        let base = self.m_max + 1;
        let mut per_reservoir = Vec::with_capacity(self.reservoirs.len());
        for r in &self.reservoirs {
            let mut probs = vec![0.0; base];
            if r.mean_initial_carriers > 0.0 {
                let dist = Poisson::new(r.mean_initial_carriers).expect("positive mean");
                let mut acc = 0.0;
                for (n, p) in probs.iter_mut().enumerate().take(self.m_max) {
                    *p = statrs::distribution::Discrete::pmf(&dist, n as u64);
                    acc += *p;
                }
                probs[self.m_max] = (1.0 - acc).max(0.0);
            } else {
                probs[0] = 1.0;
            }
            per_reservoir.push(probs);
        }
        let mut p = vec![0.0; self.n_states];
        for (index, slot) in p.iter_mut().enumerate() {
            let state = self.state(index);
            let load: f64 = state
                .reservoir_counts
                .iter()
                .zip(&per_reservoir)
                .map(|(&c, probs)| probs[c])
                .product();
            let exciton = if state.exciton_occupied {
                direct_excitation_prob
            } else {
                1.0 - direct_excitation_prob
            };
            *slot = load * exciton;
        }
        self.check_boundary(&p)?;
        Ok(p)
    }

    /// Probability on states where some reservoir sits at `m_max`.
    pub fn boundary_mass(&self, p: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .filter(|(i, _)| self.state(*i).reservoir_counts.contains(&self.m_max))
            .map(|(_, v)| *v)
            .sum()
    }

    fn check_boundary(&self, p: &[f64]) -> Result<()> {
        let mass = self.boundary_mass(p);
        if mass > BOUNDARY_MASS_LIMIT {
            let required = self
                .reservoirs
                .iter()
                .map(|r| required_truncation(r.mean_initial_carriers))
                .fold(self.m_max + 1, usize::max);
            return Err(Error::TruncationOverflow {
                mass,
                threshold: BOUNDARY_MASS_LIMIT,
                m_max: self.m_max,
                required,
            });
        }
        Ok(())
    }

    /// Evolves a normalized distribution forward by `duration` ns.
    pub fn propagate(&self, initial: &[f64], duration: f64) -> Result<Vec<f64>> {
        if initial.len() != self.n_states {
            return Err(Error::param(format!(
                "distribution has {} entries, chain has {} states",
                initial.len(),
                self.n_states
            )));
        }
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::Domain(format!(
                "duration must be non-negative, got {duration}"
            )));
        }
        let total: f64 = initial.iter().sum();
        if (total - 1.0).abs() > 1e-9 || initial.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::param(format!(
                "initial distribution not normalized (sum {total})"
            )));
        }
        self.check_boundary(initial)?;
        let mut p = initial.to_vec();
        let mut integrator = Integrator::new(self.n_states);
        integrator.advance(self, &mut p, duration, Direction::Forward);
        Ok(p)
    }

    /// `out = Q p` for the forward master equation.
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        for ((o, &e), &v) in out.iter_mut().zip(&self.exit).zip(p) {
            *o = -e * v;
        }
        for t in &self.transitions {
            out[t.to as usize] += t.rate * p[t.from as usize];
        }
    }

    /// `out = Q^T w` for backward (expectation) propagation.
    fn apply_transpose(&self, w: &[f64], out: &mut [f64]) {
        for ((o, &e), &v) in out.iter_mut().zip(&self.exit).zip(w) {
            *o = -e * v;
        }
        for t in &self.transitions {
            out[t.from as usize] += t.rate * w[t.to as usize];
        }
    }

    /// Rate at which the exciton is loaded from the reservoirs in `index`.
    pub fn loading_rate(&self, index: usize) -> f64 {
        if Self::is_occupied(index) {
            return 0.0;
        }
        let state = self.state(index);
        state
            .reservoir_counts
            .iter()
            .zip(&self.reservoirs)
            .map(|(&c, r)| c as f64 * r.capture_rate)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Adjoint,
}

/// Classical fixed-step RK4 with reusable stage buffers.
pub(crate) struct Integrator {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Integrator {
    pub(crate) fn new(n: usize) -> Self {
        Integrator {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn advance(
        &mut self,
        chain: &MarkovChain,
        x: &mut [f64],
        duration: f64,
        dir: Direction,
    ) {
        if duration <= 0.0 {
            return;
        }
        let steps = (duration / chain.max_step).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        for _ in 0..steps {
            self.step(chain, x, h, dir);
        }
    }

    fn step(&mut self, chain: &MarkovChain, x: &mut [f64], h: f64, dir: Direction) {
        let f = |c: &MarkovChain, v: &[f64], out: &mut [f64]| match dir {
            Direction::Forward => c.apply(v, out),
            Direction::Adjoint => c.apply_transpose(v, out),
        };
        f(chain, x, &mut self.k1);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k1) {
            *t = xi + 0.5 * h * k;
        }
        f(chain, &self.tmp, &mut self.k2);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k2) {
            *t = xi + 0.5 * h * k;
        }
        f(chain, &self.tmp, &mut self.k3);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k3) {
            *t = xi + h * k;
        }
        f(chain, &self.tmp, &mut self.k4);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Emitted-photon-number distribution per cycle, obtained by augmenting the
/// chain with an emission counter and integrating over one full period.
///
/// Entry `k` is the probability of exactly `k` emissions before the period
/// ends; emissions pending at the period end are discarded.
pub fn photon_number_distribution(scenario: &EmitterScenario) -> Result<Vec<f64>> {
    let chain = MarkovChain::for_scenario(scenario)?;
    let max_photons = 1 + chain.m_max * chain.reservoirs.len();
    let levels = max_photons + 1;
    let n = chain.n_states;
    let p0 = chain.initial_distribution(scenario.direct_excitation_prob)?;

    // Augmented index: level * n + state.
    let mut p = vec![0.0; n * levels];
    p[..n].copy_from_slice(&p0);
    let mut k = [
        vec![0.0; n * levels],
        vec![0.0; n * levels],
        vec![0.0; n * levels],
        vec![0.0; n * levels],
    ];
    let mut tmp = vec![0.0; n * levels];

    let apply = |v: &[f64], out: &mut [f64]| {
        for level in 0..levels {
            let (src, dst) = (&v[level * n..(level + 1) * n], level * n);
            for s in 0..n {
                out[dst + s] = -chain.exit[s] * src[s];
            }
        }
        for level in 0..levels {
            let base = level * n;
            for t in &chain.transitions {
                let flow = t.rate * v[base + t.from as usize];
                let emission = MarkovChain::is_occupied(t.from as usize) && t.to + 1 == t.from;
                if emission {
                    let next = (level + 1).min(levels - 1);
                    out[next * n + t.to as usize] += flow;
                } else {
                    out[base + t.to as usize] += flow;
                }
            }
        }
    };

    let period = scenario.pulse_period;
    let steps = (period / chain.max_step).ceil().max(1.0) as usize;
    let h = period / steps as f64;
    for _ in 0..steps {
        apply(&p, &mut k[0]);
        for i in 0..p.len() {
            tmp[i] = p[i] + 0.5 * h * k[0][i];
        }
        apply(&tmp, &mut k[1]);
        for i in 0..p.len() {
            tmp[i] = p[i] + 0.5 * h * k[1][i];
        }
        apply(&tmp, &mut k[2]);
        for i in 0..p.len() {
            tmp[i] = p[i] + h * k[2][i];
        }
        apply(&tmp, &mut k[3]);
        for i in 0..p.len() {
            p[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
    Ok((0..levels)
        .map(|l| p[l * n..(l + 1) * n].iter().sum())
        .collect())
}
