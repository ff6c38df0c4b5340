//! Binned two-time correlation surfaces.
//!
//! A surface keeps the raw ingredients of the normalized correlation (the
//! coincidence numerator, both singles marginals and the number of pairing
//! opportunities) next to the derived ratio, so that surfaces can be rebinned,
//! convolved, merged and re-normalized without loss.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::stats::{PoissonIntervals, Z95};

/// Marginal intensities below this fraction of their peak make a bin invalid.
pub const INVALID_MARGINAL_FRACTION: f64 = 1e-12;

/// Uniform delay axis over one excitation period, stored in whole picoseconds.
///
/// The window is `[start, start + period)` with `-period < start <= 0`:
/// a detection up to `-start` before a pulse is credited to that pulse.
/// Bins are half-open `[left, right)`. When the bin width does not divide the
/// period the last bin is truncated at the window end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeAxis {
    bin_ps: i64,
    period_ps: i64,
    start_ps: i64,
}

impl TimeAxis {
    pub fn new(bin_width_ns: f64, period_ns: f64) -> Result<Self> {
        if !(bin_width_ns.is_finite() && period_ns.is_finite()) {
            return Err(Error::InvalidGrid("non-finite bin width or period".into()));
        }
        Self::from_ps(ns_to_ps(bin_width_ns), ns_to_ps(period_ns))
    }

    pub fn from_ps(bin_ps: i64, period_ps: i64) -> Result<Self> {
        if period_ps <= 0 {
            return Err(Error::InvalidGrid(format!(
                "period must be positive, got {period_ps} ps"
            )));
        }
        if bin_ps <= 0 || bin_ps > period_ps {
            return Err(Error::InvalidGrid(format!(
                "bin width {bin_ps} ps must be positive and at most the period {period_ps} ps"
            )));
        }
        Ok(TimeAxis {
            bin_ps,
            period_ps,
            start_ps: 0,
        })
    }

    /// Same bins over a window opening `start_ns` (<= 0) relative to the pulse.
    pub fn with_start(self, start_ns: f64) -> Result<Self> {
        if !start_ns.is_finite() {
            return Err(Error::InvalidGrid("non-finite window start".into()));
        }
        self.with_start_ps(ns_to_ps(start_ns))
    }

    pub fn with_start_ps(self, start_ps: i64) -> Result<Self> {
        if !(start_ps <= 0 && start_ps > -self.period_ps) {
            return Err(Error::InvalidGrid(format!(
                "window start {start_ps} ps must lie in (-period, 0]"
            )));
        }
        Ok(TimeAxis { start_ps, ..self })
    }

    pub fn bin_ps(&self) -> i64 {
        self.bin_ps
    }

    pub fn period_ps(&self) -> i64 {
        self.period_ps
    }

    pub fn start_ps(&self) -> i64 {
        self.start_ps
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_ps as f64 / 1000.0
    }

    pub fn period(&self) -> f64 {
        self.period_ps as f64 / 1000.0
    }

    pub fn start(&self) -> f64 {
        self.start_ps as f64 / 1000.0
    }

    pub fn end(&self) -> f64 {
        (self.start_ps + self.period_ps) as f64 / 1000.0
    }

    pub fn n_bins(&self) -> usize {
        ((self.period_ps + self.bin_ps - 1) / self.bin_ps) as usize
    }

    /// Bin holding a delay in `[start, start + period)`.
    pub fn bin_of_ps(&self, delay_ps: i64) -> usize {
        debug_assert!((self.start_ps..self.start_ps + self.period_ps).contains(&delay_ps));
        ((delay_ps - self.start_ps) / self.bin_ps) as usize
    }

    /// Bin holding a delay in ns, or `None` outside the window.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        if !(self.start()..self.end()).contains(&t) {
            return None;
        }
        Some((((t - self.start()) / self.bin_width()) as usize).min(self.n_bins() - 1))
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        (self.start_ps + i as i64 * self.bin_ps) as f64 / 1000.0
    }

    pub fn bin_end(&self, i: usize) -> f64 {
        ((self.start_ps + (i as i64 + 1) * self.bin_ps).min(self.start_ps + self.period_ps)) as f64 / 1000.0
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.bin_start(i) + self.bin_end(i))
    }
}

pub(crate) fn ns_to_ps(ns: f64) -> i64 {
    (ns * 1000.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Configuration {
    Hbt,
    Hom,
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Configuration::Hbt => "HBT",
            Configuration::Hom => "HOM",
        })
    }
}

impl FromStr for Configuration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HBT" => Ok(Configuration::Hbt),
            "HOM" => Ok(Configuration::Hom),
            other => Err(Error::param(format!("unknown configuration '{other}'"))),
        }
    }
}

/// What the normalized ratio of a surface represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Second-order correlation g2.
    G2,
    /// Squared first-order coherence |g1|^2 (model surfaces only).
    G1Squared,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::G2 => "g2",
            Quantity::G1Squared => "g1sq",
        })
    }
}

impl FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g2" => Ok(Quantity::G2),
            "g1sq" => Ok(Quantity::G1Squared),
            other => Err(Error::param(format!("unknown quantity '{other}'"))),
        }
    }
}

/// Whether a surface holds detector counts or model expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Measured,
    Model,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Measured => "measured",
            Origin::Model => "model",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(Origin::Measured),
            "model" => Ok(Origin::Model),
            other => Err(Error::param(format!("unknown origin '{other}'"))),
        }
    }
}

/// Row-major `n x n` grid; index `(i, j)` is channel-1 bin `i`, channel-2 bin `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    pub axis: TimeAxis,
    pub configuration: Configuration,
    pub quantity: Quantity,
    pub origin: Origin,
    pub numerator: Vec<f64>,
    pub marginal1: Vec<f64>,
    pub marginal2: Vec<f64>,
    pub n_events: f64,
    pub g2: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CorrelationSurface {
    /// Builds a surface from raw ingredients and derives ratio, intervals and
    /// validity according to `origin`.
    pub fn from_parts(
        axis: TimeAxis,
        configuration: Configuration,
        quantity: Quantity,
        origin: Origin,
        numerator: Vec<f64>,
        marginal1: Vec<f64>,
        marginal2: Vec<f64>,
        n_events: f64,
    ) -> Result<Self> {
        let n = axis.n_bins();
        if numerator.len() != n * n || marginal1.len() != n || marginal2.len() != n {
            return Err(Error::GridMismatch(format!(
                "expected {n}x{n} numerator and {n}-bin marginals"
            )));
        }
        let mut s = CorrelationSurface {
            axis,
            configuration,
            quantity,
            origin,
            numerator,
            marginal1,
            marginal2,
            n_events,
            g2: vec![f64::NAN; n * n],
            ci_low: vec![f64::NAN; n * n],
            ci_high: vec![f64::NAN; n * n],
            valid: vec![false; n * n],
        };
        s.renormalize();
        Ok(s)
    }

    pub fn n_bins(&self) -> usize {
        self.axis.n_bins()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_bins() + j
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.index(i, j);
        self.valid[k].then_some(self.g2[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Recomputes ratio, intervals and validity from the raw ingredients.
    pub fn renormalize(&mut self) {
        match self.origin {
            Origin::Model => self.normalize_expectation(),
            Origin::Measured => self.normalize_counts(),
        }
    }

    fn normalize_expectation(&mut self) {
        let n = self.n_bins();
        let ok1 = marginal_mask(&self.marginal1);
        let ok2 = marginal_mask(&self.marginal2);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let valid = ok1[i] && ok2[j];
                self.valid[k] = valid;
                let v = if valid {
                    self.numerator[k] * self.n_events / (self.marginal1[i] * self.marginal2[j])
                } else {
                    f64::NAN
                };
                self.g2[k] = v;
                self.ci_low[k] = v;
                self.ci_high[k] = v;
            }
        }
    }

    fn normalize_counts(&mut self) {
        let n = self.n_bins();
        let mut intervals = PoissonIntervals::default();
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let (n1, n2) = (self.marginal1[i], self.marginal2[j]);
                let valid = n1 > 0.0 && n2 > 0.0;
                self.valid[k] = valid;
                if !valid {
                    self.g2[k] = f64::NAN;
                    self.ci_low[k] = f64::NAN;
                    self.ci_high[k] = f64::NAN;
                    continue;
                }
                let scale = self.n_events / (n1 * n2);
                let g = self.numerator[k] * scale;
                let (lo, hi) = intervals.ci95(self.numerator[k].round() as u64);
                let marginal = g * Z95 * (1.0 / n1 + 1.0 / n2).sqrt();
                self.g2[k] = g;
                self.ci_low[k] = (g - (g - lo * scale).hypot(marginal)).max(0.0);
                self.ci_high[k] = g + (hi * scale - g).hypot(marginal);
            }
        }
    }

    /// Merges groups of `factor` adjacent bins on both axes.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidGrid("rebin factor must be at least 1".into()));
        }
        let axis = TimeAxis::from_ps(self.axis.bin_ps * factor as i64, self.axis.period_ps)?.with_start_ps(self.axis.start_ps)?;
        let (n_old, n_new) = (self.n_bins(), axis.n_bins());
        let mut numerator = vec![0.0; n_new * n_new];
        let mut m1 = vec![0.0; n_new];
        let mut m2 = vec![0.0; n_new];
        for i in 0..n_old {
            m1[i / factor] += self.marginal1[i];
            m2[i / factor] += self.marginal2[i];
            for j in 0..n_old {
                numerator[(i / factor) * n_new + j / factor] += self.numerator[i * n_old + j];
            }
        }
        CorrelationSurface::from_parts(
            axis,
            self.configuration,
            self.quantity,
            self.origin,
            numerator,
            m1,
            m2,
            self.n_events,
        )
    }

    pub fn check_same_grid(&self, other: &CorrelationSurface) -> Result<()> {
        if self.axis != other.axis {
            return Err(Error::GridMismatch(format!(
                "axes differ: {} ns / {} ns bins vs {} ns / {} ns bins",
                self.axis.period(),
                self.axis.bin_width(),
                other.axis.period(),
                other.axis.bin_width()
            )));
        }
        Ok(())
    }
}

fn marginal_mask(m: &[f64]) -> Vec<bool> {
    let peak = m.iter().cloned().fold(0.0, f64::max);
    m.iter()
        .map(|&v| peak > 0.0 && v > INVALID_MARGINAL_FRACTION * peak)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_with_partial_last_bin() {
        let axis = TimeAxis::new(0.2, 13.14).unwrap();
        assert_eq!(axis.n_bins(), 66);
        assert_eq!(axis.bin_of_ps(0), 0);
        assert_eq!(axis.bin_of_ps(199), 0);
        assert_eq!(axis.bin_of_ps(200), 1);
        assert_eq!(axis.bin_of_ps(13_139), 65);
        assert!((axis.bin_end(65) - 13.14).abs() < 1e-12);
        assert!(TimeAxis::new(0.0, 13.14).is_err());
        assert!(TimeAxis::new(20.0, 13.14).is_err());
    }

    #[test]
    fn shifted_window_keeps_bins() {
        let axis = TimeAxis::new(0.2, 13.14).unwrap().with_start(-2.0).unwrap();
        assert_eq!(axis.n_bins(), 66);
        assert_eq!(axis.bin_of_ps(-2000), 0);
        assert_eq!(axis.bin_of_ps(-1), 9);
        assert_eq!(axis.bin_of_ps(0), 10);
        assert_eq!(axis.bin_of(-2.1), None);
        assert_eq!(axis.bin_of(11.14), None);
        assert_eq!(axis.bin_of(11.139), Some(65));
        assert!((axis.bin_center(10) - 0.1).abs() < 1e-12);
        assert!((axis.bin_end(65) - 11.14).abs() < 1e-12);
        assert!(axis.with_start(0.5).is_err());
        assert!(axis.with_start(-13.14).is_err());
        assert_eq!(axis.with_start(-0.0004).unwrap().start_ps(), 0);
    }

    #[test]
    fn count_normalization_and_intervals() {
        let axis = TimeAxis::new(1.0, 2.0).unwrap();
        let s = CorrelationSurface::from_parts(
            axis,
            Configuration::Hbt,
            Quantity::G2,
            Origin::Measured,
            vec![1.0, 0.0, 0.0, 4.0],
            vec![2.0, 0.0],
            vec![2.0, 4.0],
            4.0,
        )
        .unwrap();
        assert_eq!(s.value(0, 0), Some(1.0));
        assert_eq!(s.value(1, 1), None);
        assert_eq!(s.value(0, 1), Some(0.0));
        let k = s.index(0, 1);
        assert_eq!(s.ci_low[k], 0.0);
        assert!(s.ci_high[k] > 0.0);
        for k in 0..4 {
            if s.valid[k] {
                assert!(s.ci_low[k] <= s.g2[k] && s.g2[k] <= s.ci_high[k]);
            }
        }
    }

    #[test]
    fn rebin_preserves_totals() {
        let axis = TimeAxis::new(1.0, 4.0).unwrap();
        let num: Vec<f64> = (0..16).map(|k| k as f64).collect();
        let s = CorrelationSurface::from_parts(
            axis,
            Configuration::Hbt,
            Quantity::G2,
            Origin::Measured,
            num,
            vec![5.0; 4],
            vec![7.0; 4],
            100.0,
        )
        .unwrap();
        let r = s.rebin(2).unwrap();
        assert_eq!(r.n_bins(), 2);
        assert_eq!(
            r.numerator.iter().sum::<f64>(),
            s.numerator.iter().sum::<f64>()
        );
        assert_eq!(r.numerator[0], 0.0 + 1.0 + 4.0 + 5.0);
        assert_eq!(r.marginal1, vec![10.0, 10.0]);
    }
}
