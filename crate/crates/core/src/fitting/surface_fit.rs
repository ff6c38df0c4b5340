//! Recapture-model fits to correlation surfaces.

use nalgebra::DMatrix;

use super::{covariance_sigmas, minimize, FitResult, SimplexOptions};
use crate::coherence::analytic_set;
use crate::error::{Error, Result};
use crate::model::AnalyticGrid;
use crate::optics::DetectorSpec;
use crate::scenario::EmitterScenario;
use crate::stats::Z95;
use crate::surface::{Configuration, CorrelationSurface, Origin};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReservoirField {
    MeanCarriers,
    LossRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParameter {
    pub reservoir: usize,
    pub field: ReservoirField,
}

impl FreeParameter {
    pub fn mean(reservoir: usize) -> Self {
        FreeParameter {
            reservoir,
            field: ReservoirField::MeanCarriers,
        }
    }

    pub fn loss(reservoir: usize) -> Self {
        FreeParameter {
            reservoir,
            field: ReservoirField::LossRate,
        }
    }
}

/// Scenario whose listed reservoir fields are fitted; everything else,
/// including the radiative and capture rates, stays fixed. The template
/// values of the free fields are the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTemplate {
    pub scenario: EmitterScenario,
    pub free: Vec<FreeParameter>,
}

impl FitTemplate {
    fn get(&self, p: FreeParameter) -> f64 {
        let r = &self.scenario.reservoirs[p.reservoir];
        match p.field {
            ReservoirField::MeanCarriers => r.mean_initial_carriers,
            ReservoirField::LossRate => r.loss_rate,
        }
    }

    fn name(&self, p: FreeParameter) -> String {
        let label = &self.scenario.reservoirs[p.reservoir].label;
        match p.field {
            ReservoirField::MeanCarriers => format!("mean_carriers[{label}]"),
            ReservoirField::LossRate => format!("loss_rate[{label}]"),
        }
    }

    /// Scenario with the free fields set to `values`.
    pub fn instantiate(&self, values: &[f64]) -> EmitterScenario {
        let mut s = self.scenario.clone();
        for (p, v) in self.free.iter().zip(values) {
            let r = &mut s.reservoirs[p.reservoir];
            match p.field {
                ReservoirField::MeanCarriers => r.mean_initial_carriers = *v,
                ReservoirField::LossRate => r.loss_rate = *v,
            }
        }
        s
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        for (k, p) in self.free.iter().enumerate() {
            if p.reservoir >= self.scenario.reservoirs.len() {
                return Err(Error::param(format!(
                    "free parameter {k} names a missing reservoir"
                )));
            }
            if self.free[..k].contains(p) {
                return Err(Error::param(format!("free parameter {k} is listed twice")));
            }
            if !(self.get(*p) > 0.0) {
                return Err(Error::param(format!(
                    "{} must start strictly positive (fitted in log space)",
                    self.name(*p)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFitOptions {
    /// Quadrature nodes per bin and axis for the model surface.
    pub subsamples: usize,
    pub simplex: SimplexOptions,
}

impl Default for SurfaceFitOptions {
    fn default() -> Self {
        SurfaceFitOptions {
            subsamples: 2,
            simplex: SimplexOptions {
                diameter_tol: 1e-5,
                max_iterations: 2000,
                ..SimplexOptions::default()
            },
        }
    }
}

/// Usable bins of the measured surface: `(index, value, weight)`.
/// Measured bins are weighted by the inverse square of the 95% half-width
/// converted to one standard deviation; model surfaces get unit weights.
fn targets(measured: &CorrelationSurface) -> Vec<(usize, f64, f64)> {
    (0..measured.g2.len())
        .filter(|&k| measured.valid[k])
        .filter_map(|k| match measured.origin {
            Origin::Model => Some((k, measured.g2[k], 1.0)),
            Origin::Measured => {
                let sd = (measured.ci_high[k] - measured.ci_low[k]) / (2.0 * Z95);
                (sd > 0.0).then(|| (k, measured.g2[k], 1.0 / (sd * sd)))
            }
        })
        .collect()
}

/// Minimizes the weighted squared difference between the detector-convolved
/// model surface and `measured` over the template's free parameters.
pub fn fit_g2_surface(
    measured: &CorrelationSurface,
    template: &FitTemplate,
    detector: DetectorSpec,
    options: &SurfaceFitOptions,
) -> Result<FitResult> {
    template.validate()?;
    detector.validate()?;
    let grid = AnalyticGrid::for_axis(measured.axis, options.subsamples)?;
    let targets = targets(measured);
    if targets.is_empty() {
        return Err(Error::NoValidBins);
    }
    let detectors = [detector, detector];
    let configuration = measured.configuration;
    let model = |values: &[f64]| -> Result<CorrelationSurface> {
        let scenario = template.instantiate(values);
        scenario.validate()?;
        let set = analytic_set(&scenario, &grid, Some(&detectors))?;
        Ok(match configuration {
            Configuration::Hbt => set.hbt,
            Configuration::Hom => set.hom,
        })
    };
    let residual_of = |surface: &CorrelationSurface| -> f64 {
        targets
            .iter()
            .map(|&(k, y, w)| {
                if surface.valid[k] {
                    w * (surface.g2[k] - y).powi(2)
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    };

    let start: Vec<f64> = template
        .free
        .iter()
        .map(|p| template.get(*p).ln())
        .collect();
    let mut objective = |q: &[f64]| {
        let values: Vec<f64> = q.iter().map(|v| v.exp()).collect();
        model(&values).map_or(f64::INFINITY, |s| residual_of(&s))
    };
    let m = minimize(&mut objective, &start, &options.simplex);
    let values: Vec<f64> = m.x.iter().map(|v| v.exp()).collect();
    let best = model(&values)?;
    let residual = residual_of(&best);

    let p = values.len();
    let mut jac = DMatrix::zeros(targets.len(), p);
    for c in 0..p {
        let h = 1e-4 * values[c];
        let mut up = values.clone();
        let mut down = values.clone();
        up[c] += h;
        down[c] -= h;
        let (su, sd) = (model(&up)?, model(&down)?);
        for (r, &(k, _, w)) in targets.iter().enumerate() {
            jac[(r, c)] = (su.g2[k] - sd.g2[k]) / (2.0 * h) * w.sqrt();
        }
    }
    let result = FitResult {
        names: template.free.iter().map(|p| template.name(*p)).collect(),
        values,
        uncertainties: covariance_sigmas(&jac, residual),
        residual,
        degrees_of_freedom: targets.len().saturating_sub(p),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{analytic_g2_hbt, AnalyticGrid};
    use crate::scenario::ReservoirSpec;

    fn truth() -> EmitterScenario {
        EmitterScenario {
            label: "truth".into(),
            radiative_rate: 1.56,
            pure_dephasing_rate: 0.0,
            direct_excitation_prob: 0.5,
            reservoirs: vec![ReservoirSpec::new("r", 0.5, 1.0, 3.0)],
            pulse_period: 13.14,
        }
    }

    #[test]
    fn noiseless_round_trip_within_one_percent() {
        let grid = AnalyticGrid::new(0.4, 13.14, 2).unwrap();
        let target = analytic_g2_hbt(&truth(), &grid).unwrap();
        let mut start = truth();
        start.reservoirs[0].mean_initial_carriers = 0.3;
        start.reservoirs[0].loss_rate = 1.6;
        let template = FitTemplate {
            scenario: start,
            free: vec![FreeParameter::mean(0), FreeParameter::loss(0)],
        };
        let fit = fit_g2_surface(
            &target,
            &template,
            DetectorSpec::ideal(),
            &SurfaceFitOptions::default(),
        )
        .unwrap();
        assert!((fit.values[0] / 0.5 - 1.0).abs() < 0.01, "{:?}", fit.values);
        assert!((fit.values[1] / 1.0 - 1.0).abs() < 0.01, "{:?}", fit.values);
    }

    #[test]
    fn zero_free_parameters_report_residual_only() {
        let grid = AnalyticGrid::new(0.4, 13.14, 1).unwrap();
        let target = analytic_g2_hbt(&truth(), &grid).unwrap();
        let template = FitTemplate {
            scenario: truth(),
            free: vec![],
        };
        let fit = fit_g2_surface(
            &target,
            &template,
            DetectorSpec::ideal(),
            &SurfaceFitOptions {
                subsamples: 1,
                ..SurfaceFitOptions::default()
            },
        )
        .unwrap();
        assert!(fit.values.is_empty());
        assert!(fit.residual < 1e-20);
    }

    #[test]
    fn non_positive_start_is_rejected() {
        let grid = AnalyticGrid::new(0.4, 13.14, 1).unwrap();
        let target = analytic_g2_hbt(&truth(), &grid).unwrap();
        let mut s = truth();
        s.reservoirs[0].loss_rate = 0.0;
        let template = FitTemplate {
            scenario: s,
            free: vec![FreeParameter::loss(0)],
        };
        assert!(fit_g2_surface(
            &target,
            &template,
            DetectorSpec::ideal(),
            &SurfaceFitOptions::default()
        )
        .is_err());
    }
}
