//! Model surfaces from the Markov chain.
//!
//! For `t2 >= t1` the two-photon density is
//! `G(t1, t2) = G1^2 * w(t2 - t1) . J p(t1)`, where `p(t1)` is the forward
//! distribution, `J` resets the exciton after an emission and `w(tau)` is the
//! backward-propagated occupation indicator. One forward and one backward
//! sweep therefore give the whole surface on a uniform sub-grid.

use crate::error::{Error, Result};
use crate::model::convolve::{credit_to_window, ExtendedSurface};
use crate::model::markov::{Direction, Integrator, MarkovChain};
use crate::optics::DetectorSpec;
use crate::scenario::EmitterScenario;
use crate::surface::{CorrelationSurface, Quantity, TimeAxis};

/// Bin layout plus the number of midpoint quadrature nodes per bin and axis.
///
/// `subsamples = 1` evaluates the densities at bin centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGrid {
    pub axis: TimeAxis,
    pub subsamples: usize,
}

impl AnalyticGrid {
    pub fn new(bin_width: f64, period: f64, subsamples: usize) -> Result<Self> {
        if subsamples == 0 {
            return Err(Error::InvalidGrid("subsamples must be at least 1".into()));
        }
        Ok(AnalyticGrid {
            axis: TimeAxis::new(bin_width, period)?,
            subsamples,
        })
    }

    pub fn for_axis(axis: TimeAxis, subsamples: usize) -> Result<Self> {
        if subsamples == 0 {
            return Err(Error::InvalidGrid("subsamples must be at least 1".into()));
        }
        Ok(AnalyticGrid { axis, subsamples })
    }

    fn node_spacing(&self) -> f64 {
        self.axis.bin_width() / self.subsamples as f64
    }

    /// Quadrature nodes `(time, extended bin)` from the window start up to
    /// the next pulse, in increasing time. Nodes past the window end belong
    /// to the following window (see `ExtendedSurface`).
    fn nodes(&self) -> Vec<(f64, usize)> {
        let delta = self.node_spacing();
        let (start, period) = (self.axis.start(), self.axis.period());
        let n = self.axis.n_bins();
        (0..)
            .map(|k| {
                let u = (k as f64 + 0.5) * delta;
                let t = start + u;
                let e = if u < period {
                    n + k / self.subsamples
                } else {
                    2 * n + (((u - period) / self.axis.bin_width()) as usize).min(n - 1)
                };
                (t, e)
            })
            .take_while(|(t, _)| *t < period)
            .collect()
    }
}

/// Emission rate per pulse on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `I(t) = radiative_rate * P(exciton occupied at t)` on increasing `times`.
pub fn intensity_curve(scenario: &EmitterScenario, times: &[f64]) -> Result<IntensityCurve> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidGrid(
            "times must be non-negative and increasing".into(),
        ));
    }
    let chain = MarkovChain::for_scenario(scenario)?;
    let mut p = chain.initial_distribution(scenario.direct_excitation_prob)?;
    let mut integrator = Integrator::new(chain.n_states());
    let mut now = 0.0;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        integrator.advance(&chain, &mut p, t - now, Direction::Forward);
        now = t;
        values.push(scenario.radiative_rate * occupation(&p));
    }
    Ok(IntensityCurve {
        times: times.to_vec(),
        values,
    })
}

fn occupation(p: &[f64]) -> f64 {
    p.iter().skip(1).step_by(2).sum()
}

/// Forward/backward sweep results on the quadrature nodes.
struct Sweep {
    nodes: Vec<(f64, usize)>,
    /// Occupation probability at each node.
    occupied: Vec<f64>,
    /// Post-emission distribution `J p(t)`, empty-exciton states only.
    emitted: Vec<Vec<f64>>,
    /// Backward occupation weight at lag `l * delta`, empty-exciton states only.
    lag_weight: Vec<Vec<f64>>,
}

fn sweep(scenario: &EmitterScenario, grid: &AnalyticGrid) -> Result<Sweep> {
    check_grid(scenario, grid)?;
    let chain = MarkovChain::for_scenario(scenario)?;
    let n = chain.n_states();
    let nodes = grid.nodes();
    let delta = grid.node_spacing();
    let mut integrator = Integrator::new(n);

    let mut p = chain.initial_distribution(scenario.direct_excitation_prob)?;
    let mut occupied = Vec::with_capacity(nodes.len());
    let mut emitted = Vec::with_capacity(nodes.len());
    let mut now = 0.0;
    for &(t, _) in &nodes {
        if t < 0.0 {
            occupied.push(0.0);
            emitted.push(vec![0.0; n / 2]);
            continue;
        }
        integrator.advance(&chain, &mut p, t - now, Direction::Forward);
        now = t;
        occupied.push(occupation(&p));
        // Occupied state 2k+1 jumps to empty state 2k on emission.
        emitted.push((0..n / 2).map(|k| p[2 * k + 1]).collect());
    }

    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            if MarkovChain::is_occupied(i) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut lag_weight = Vec::with_capacity(nodes.len());
    for l in 0..nodes.len() {
        if l > 0 {
            integrator.advance(&chain, &mut w, delta, Direction::Adjoint);
        }
        lag_weight.push((0..n / 2).map(|k| w[2 * k]).collect());
    }

    Ok(Sweep {
        nodes,
        occupied,
        emitted,
        lag_weight,
    })
}

fn check_grid(scenario: &EmitterScenario, grid: &AnalyticGrid) -> Result<()> {
    let period_ps = crate::surface::ns_to_ps(scenario.pulse_period);
    if grid.axis.period_ps() != period_ps {
        return Err(Error::InvalidGrid(format!(
            "grid period {} ns does not match the pulse period {} ns",
            grid.axis.period(),
            scenario.pulse_period
        )));
    }
    Ok(())
}

/// Model HBT surface and the squared first-order coherence surface, binned
/// as ratios of integrated densities so they compare directly with counted
/// surfaces.
pub struct ModelSurfaces {
    pub hbt: CorrelationSurface,
    pub g1_squared: CorrelationSurface,
}

/// Model surfaces on the grid's window, seen through `detectors` (timing
/// jitter) or ideal detectors when `None`.
pub fn model_surfaces(
    scenario: &EmitterScenario,
    grid: &AnalyticGrid,
    detectors: Option<&[DetectorSpec; 2]>,
) -> Result<ModelSurfaces> {
    let sweep = sweep(scenario, grid)?;
    let len = 3 * grid.axis.n_bins();
    let delta = grid.node_spacing();
    let rate = scenario.radiative_rate;
    let coherence_decay = rate + 2.0 * scenario.pure_dephasing_rate;
    let m = sweep.nodes.len();

    let mut marginal = vec![0.0; len];
    for (&(_, bin), &occ) in sweep.nodes.iter().zip(&sweep.occupied) {
        marginal[bin] += rate * occ * delta;
    }

    let mut hbt = vec![0.0; len * len];
    let mut g1 = vec![0.0; len * len];
    let decay: Vec<f64> = (0..m)
        .map(|l| (-coherence_decay * l as f64 * delta).exp())
        .collect();
    let weight = rate * rate * delta * delta;
    for a in 0..m {
        let occ_a = sweep.occupied[a];
        if occ_a == 0.0 {
            continue;
        }
        let (bin_a, v) = (sweep.nodes[a].1, &sweep.emitted[a]);
        for b in a..m {
            let bin_b = sweep.nodes[b].1;
            let l = b - a;
            let g2 = weight * dot(&sweep.lag_weight[l], v);
            // |G1(t_a, t_b)|^2 = G1^2 P(t_a)^2 exp(-(G1 + 2 gd) tau)
            let g1sq = weight * occ_a * occ_a * decay[l];
            hbt[bin_a * len + bin_b] += g2;
            g1[bin_a * len + bin_b] += g1sq;
            if b != a {
                hbt[bin_b * len + bin_a] += g2;
                g1[bin_b * len + bin_a] += g1sq;
            }
        }
    }

    let build = |numerator, quantity| {
        credit_to_window(
            &ExtendedSurface {
                axis: grid.axis,
                quantity,
                numerator,
                marginal: marginal.clone(),
            },
            detectors,
        )
    };
    Ok(ModelSurfaces {
        hbt: build(hbt, Quantity::G2)?,
        g1_squared: build(g1, Quantity::G1Squared)?,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unconvolved model g2 surface in the HBT configuration.
pub fn analytic_g2_hbt(
    scenario: &EmitterScenario,
    grid: &AnalyticGrid,
) -> Result<CorrelationSurface> {
    Ok(model_surfaces(scenario, grid, None)?.hbt)
}

/// Exciton occupation probability at increasing `times`.
pub fn occupation_curve(scenario: &EmitterScenario, times: &[f64]) -> Result<Vec<f64>> {
    let curve = intensity_curve(scenario, times)?;
    Ok(curve
        .values
        .iter()
        .map(|v| v / scenario.radiative_rate)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{EmitterScenario, ReservoirSpec};

    fn single_reservoir() -> EmitterScenario {
        EmitterScenario {
            label: "single".into(),
            radiative_rate: 1.56,
            pure_dephasing_rate: 0.0,
            direct_excitation_prob: 0.5,
            reservoirs: vec![ReservoirSpec::new("r", 0.5, 1.0, 3.0)],
            pulse_period: 13.14,
        }
    }

    #[test]
    fn ideal_emitter_never_pairs() {
        let s = EmitterScenario::ideal_single_photon(1.56);
        let grid = AnalyticGrid::new(0.2, 13.14, 2).unwrap();
        let surf = analytic_g2_hbt(&s, &grid).unwrap();
        assert!(surf.valid_count() > 0);
        for k in 0..surf.g2.len() {
            if surf.valid[k] {
                assert_eq!(surf.g2[k], 0.0);
            }
        }
    }

    #[test]
    fn surface_is_exactly_symmetric() {
        let grid = AnalyticGrid::new(0.4, 13.14, 3).unwrap();
        let surf = analytic_g2_hbt(&single_reservoir(), &grid).unwrap();
        let n = surf.n_bins();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(surf.value(i, j), surf.value(j, i));
            }
        }
    }

    #[test]
    fn empty_reservoir_is_inert() {
        let grid = AnalyticGrid::new(0.4, 13.14, 2).unwrap();
        let mut with = single_reservoir();
        with.reservoirs
            .push(ReservoirSpec::new("ghost", 0.0, 5.0, 5.0));
        let a = analytic_g2_hbt(&single_reservoir(), &grid).unwrap();
        let b = analytic_g2_hbt(&with, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn intensity_starts_at_direct_loading() {
        let s = single_reservoir();
        let curve = intensity_curve(&s, &[0.0, 0.5, 1.0]).unwrap();
        assert!((curve.values[0] - 1.56 * 0.5).abs() < 1e-12);
        assert!(curve.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn grid_period_must_match() {
        let grid = AnalyticGrid::new(0.2, 12.5, 1).unwrap();
        assert!(matches!(
            analytic_g2_hbt(&single_reservoir(), &grid),
            Err(Error::InvalidGrid(_))
        ));
    }
}
