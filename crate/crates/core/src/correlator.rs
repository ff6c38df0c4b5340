//! Two-time correlation estimators over time-tag streams.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::coherence::CoalescenceSurface;
use crate::error::{Error, Result};
use crate::optics::{TagStream, TimeTag};
use crate::stats::poisson_interval;
use crate::surface::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};

/// Integer coincidence and singles counts; a commutative monoid under
/// [`CountGrid::merge`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    pub axis: TimeAxis,
    pub configuration: Configuration,
    pub counts: Vec<u64>,
    pub singles1: Vec<u64>,
    pub singles2: Vec<u64>,
    pub n_events: u64,
}

impl CountGrid {
    pub fn new(axis: TimeAxis, configuration: Configuration) -> Self {
        let n = axis.n_bins();
        CountGrid {
            axis,
            configuration,
            counts: vec![0; n * n],
            singles1: vec![0; n],
            singles2: vec![0; n],
            n_events: 0,
        }
    }

    /// Adds the tags of one cycle (does not touch `n_events`).
    pub fn accumulate_cycle(&mut self, tags: &[TimeTag]) {
        let n = self.axis.n_bins();
        for a in tags {
            let i = self.axis.bin_of_ps(a.delay_ps);
            if a.channel == 1 {
                self.singles1[i] += 1;
                for b in tags.iter().filter(|b| b.channel == 2) {
                    self.counts[i * n + self.axis.bin_of_ps(b.delay_ps)] += 1;
                }
            } else {
                self.singles2[i] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CountGrid) -> Result<()> {
        if self.axis != other.axis || self.configuration != other.configuration {
            return Err(Error::GridMismatch(
                "count grids differ in axis or configuration".into(),
            ));
        }
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.counts, &other.counts);
        add(&mut self.singles1, &other.singles1);
        add(&mut self.singles2, &other.singles2);
        self.n_events += other.n_events;
        Ok(())
    }

    pub fn to_surface(&self) -> Result<CorrelationSurface> {
        let f = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        CorrelationSurface::from_parts(
            self.axis,
            self.configuration,
            Quantity::G2,
            Origin::Measured,
            f(&self.counts),
            f(&self.singles1),
            f(&self.singles2),
            self.n_events as f64,
        )
    }
}

/// Tags per parallel work item.
const CORRELATE_CHUNK: usize = 1 << 16;

/// Count grid of a whole tag stream; `n_events` is the number of cycles covered.
pub fn count_stream(stream: &TagStream, bin_width: f64) -> Result<CountGrid> {
    let axis = TimeAxis::from_ps(crate::surface::ns_to_ps(bin_width), stream.period_ps)?.with_start_ps(stream.start_ps)?;
    if stream.tags.is_empty() {
        return Err(Error::EmptyStream("no tags".into()));
    }
    for ch in [1u8, 2] {
        if stream.tags.iter().all(|t| t.channel != ch) {
            return Err(Error::EmptyStream(format!("channel {ch} has no tags")));
        }
    }
    let mut chunks = Vec::new();
    let mut rest = stream.tags.as_slice();
    while !rest.is_empty() {
        let mut cut = CORRELATE_CHUNK.min(rest.len());
        while cut < rest.len() && rest[cut].cycle == rest[cut - 1].cycle {
            cut += 1;
        }
        let (head, tail) = rest.split_at(cut);
        chunks.push(head);
        rest = tail;
    }
    let parts: Vec<CountGrid> = chunks
        .into_par_iter()
        .map(|chunk| {
            let mut g = CountGrid::new(axis, stream.configuration);
            for group in chunk.chunk_by(|a, b| a.cycle == b.cycle) {
                g.accumulate_cycle(group);
            }
            g
        })
        .collect();
    let mut total = CountGrid::new(axis, stream.configuration);
    for p in &parts {
        total.merge(p)?;
    }
    total.n_events = stream.n_cycles;
    Ok(total)
}

/// Same-cycle channel-1/channel-2 correlation of an HBT stream.
pub fn correlate_hbt(stream: &TagStream, bin_width: f64) -> Result<CorrelationSurface> {
    if stream.configuration != Configuration::Hbt {
        return Err(Error::param("expected an HBT tag stream"));
    }
    count_stream(stream, bin_width)?.to_surface()
}

/// Same-output-cycle correlation of an HOM stream; long-arm photons already
/// carry their output cycle, so the estimator matches the HBT one.
pub fn correlate_hom(stream: &TagStream, bin_width: f64) -> Result<CorrelationSurface> {
    if stream.configuration != Configuration::Hom {
        return Err(Error::param("expected an HOM tag stream"));
    }
    count_stream(stream, bin_width)?.to_surface()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAverage {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Pooled ratio `n_events * sum C / sum N1 N2` over valid bins.
pub fn time_average(surface: &CorrelationSurface) -> Result<TimeAverage> {
    let n = surface.n_bins();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if surface.valid[k] {
                num += surface.numerator[k];
                den += surface.marginal1[i] * surface.marginal2[j];
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::NoValidBins);
    }
    let scale = surface.n_events / den;
    let value = num * scale;
    Ok(match surface.origin {
        Origin::Model => TimeAverage {
            value,
            ci_low: value,
            ci_high: value,
        },
        Origin::Measured => {
            let (lo, hi) = poisson_interval(num.round() as u64, 0.95);
            TimeAverage {
                value,
                ci_low: lo * scale,
                ci_high: hi * scale,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    /// `t1 + t2 = parameter`, sampled against `(t1 - t2) / 2`.
    Antidiagonal,
    /// `t2 - t1 = parameter`, sampled against `t1`.
    Diagonal,
}

impl fmt::Display for CutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CutKind::Antidiagonal => "antidiagonal",
            CutKind::Diagonal => "diagonal",
        })
    }
}

impl FromStr for CutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "antidiagonal" | "anti" => Ok(CutKind::Antidiagonal),
            "diagonal" | "diag" => Ok(CutKind::Diagonal),
            other => Err(Error::param(format!("unknown cut kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutSample {
    pub coordinate: f64,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCut {
    pub kind: CutKind,
    pub parameter: f64,
    pub samples: Vec<CutSample>,
}

/// Valid bins crossed by a line, one per channel-1 bin: for row `i` the line
/// is evaluated at the bin center and the column containing that point is taken.
pub fn cut(surface: &CorrelationSurface, kind: CutKind, parameter: f64) -> Result<SurfaceCut> {
    let values = GridValues {
        axis: surface.axis,
        values: &surface.g2,
        ci_low: &surface.ci_low,
        ci_high: &surface.ci_high,
        valid: &surface.valid,
    };
    cut_grid(&values, kind, parameter)
}

/// [`cut`] through a coalescence surface.
pub fn cut_coalescence(
    surface: &CoalescenceSurface,
    kind: CutKind,
    parameter: f64,
) -> Result<SurfaceCut> {
    let values = GridValues {
        axis: surface.axis,
        values: &surface.values,
        ci_low: &surface.ci_low,
        ci_high: &surface.ci_high,
        valid: &surface.valid,
    };
    cut_grid(&values, kind, parameter)
}

struct GridValues<'a> {
    axis: TimeAxis,
    values: &'a [f64],
    ci_low: &'a [f64],
    ci_high: &'a [f64],
    valid: &'a [bool],
}

fn cut_grid(surface: &GridValues<'_>, kind: CutKind, parameter: f64) -> Result<SurfaceCut> {
    let axis = surface.axis;
    let n = axis.n_bins();
    let period = axis.period();
    let in_range = match kind {
        CutKind::Antidiagonal => (0.0..2.0 * period).contains(&parameter),
        CutKind::Diagonal => parameter.abs() < period,
    };
    if !in_range {
        return Err(Error::Domain(format!(
            "{kind} cut at {parameter} ns lies outside the grid"
        )));
    }
    let mut samples = Vec::new();
    for i in 0..n {
        let t1 = axis.bin_center(i);
        let (t2, coordinate) = match kind {
            CutKind::Antidiagonal => (parameter - t1, t1 - 0.5 * parameter),
            CutKind::Diagonal => (t1 + parameter, t1),
        };
        let Some(j) = axis.bin_of(t2) else { continue };
        let k = i * n + j;
        if surface.valid[k] {
            samples.push(CutSample {
                coordinate,
                i,
                j,
                value: surface.values[k],
                ci_low: surface.ci_low[k],
                ci_high: surface.ci_high[k],
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Domain(format!(
            "{kind} cut at {parameter} ns crosses no valid bins"
        )));
    }
    Ok(SurfaceCut {
        kind,
        parameter,
        samples,
    })
}

/// Pooled g2 over bins with `j - i = lag` for each lag in `-max_lag..=max_lag`,
/// restricted to bins whose centers both satisfy `window`.
/// Returns `(lag_ns, g2, ci_low, ci_high)`; lags without valid bins are skipped.
pub fn lag_profile(
    surface: &CorrelationSurface,
    max_lag: usize,
    window: impl Fn(f64, f64) -> bool,
) -> Vec<(f64, f64, f64, f64)> {
    let n = surface.n_bins();
    let width = surface.axis.bin_width();
    let mut out = Vec::new();
    for lag in -(max_lag as i64)..=max_lag as i64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let j = i as i64 + lag;
            if j < 0 || j >= n as i64 {
                continue;
            }
            let j = j as usize;
            let k = i * n + j;
            if surface.valid[k] && window(surface.axis.bin_center(i), surface.axis.bin_center(j)) {
                num += surface.numerator[k];
                den += surface.marginal1[i] * surface.marginal2[j];
            }
        }
        if den <= 0.0 {
            continue;
        }
        let scale = surface.n_events / den;
        let g = num * scale;
        let (lo, hi) = match surface.origin {
            Origin::Model => (g, g),
            Origin::Measured => {
                let (lo, hi) = poisson_interval(num.round() as u64, 0.95);
                (lo * scale, hi * scale)
            }
        };
        out.push((lag as f64 * width, g, lo, hi));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag(cycle: u64, delay_ps: i64, channel: u8) -> TimeTag {
        TimeTag {
            cycle,
            delay_ps,
            channel,
        }
    }

    fn stream(tags: Vec<TimeTag>, n_cycles: u64) -> TagStream {
        let mut tags = tags;
        tags.sort_unstable();
        TagStream {
            period_ps: 13_140,
            start_ps: 0,
            n_cycles,
            configuration: Configuration::Hbt,
            delay_periods: 3,
            tags,
        }
    }

    #[test]
    fn hand_enumerated_four_cycles() {
        // Bin 3 of a 0.2 ns axis is [600, 800) ps.
        let s = stream(
            vec![
                tag(1, 700, 1),
                tag(2, 650, 1),
                tag(1, 610, 2),
                tag(3, 799, 2),
            ],
            4,
        );
        let surf = correlate_hbt(&s, 0.2).unwrap();
        let k = surf.index(3, 3);
        assert_eq!(surf.numerator[k], 1.0);
        assert_eq!(surf.marginal1[3], 2.0);
        assert_eq!(surf.marginal2[3], 2.0);
        assert_eq!(surf.g2[k], 1.0);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(
            correlate_hbt(&stream(vec![], 4), 0.2),
            Err(Error::EmptyStream(_))
        ));
        let one_channel = stream(vec![tag(0, 10, 1), tag(1, 10, 1)], 4);
        assert!(matches!(
            correlate_hbt(&one_channel, 0.2),
            Err(Error::EmptyStream(_))
        ));
        let mut hom = stream(vec![tag(0, 10, 1), tag(1, 10, 2)], 4);
        assert!(correlate_hom(&hom, 0.2).is_err());
        hom.configuration = Configuration::Hom;
        assert!(correlate_hom(&hom, 0.2).is_ok());
    }

    #[test]
    fn time_average_of_constant_surface() {
        let axis = TimeAxis::new(1.0, 3.0).unwrap();
        let s = CorrelationSurface::from_parts(
            axis,
            Configuration::Hbt,
            Quantity::G2,
            Origin::Model,
            vec![1.0; 9],
            vec![1.0; 3],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        assert_eq!(time_average(&s).unwrap().value, 1.0);
        let c = cut(&s, CutKind::Diagonal, 0.0).unwrap();
        assert_eq!(c.samples.len(), 3);
        assert!(c.samples.iter().all(|x| x.value == 1.0));
        let a = cut(&s, CutKind::Antidiagonal, 3.0).unwrap();
        assert!(a.samples.iter().all(|x| x.i + x.j == 2));
        assert!(cut(&s, CutKind::Antidiagonal, 7.0).is_err());
        assert!(cut(&s, CutKind::Diagonal, -3.5).is_err());
    }

    #[test]
    fn no_valid_bins_is_an_error() {
        let axis = TimeAxis::new(1.0, 2.0).unwrap();
        let s = CorrelationSurface::from_parts(
            axis,
            Configuration::Hbt,
            Quantity::G2,
            Origin::Measured,
            vec![0.0; 4],
            vec![0.0; 2],
            vec![3.0; 2],
            5.0,
        )
        .unwrap();
        assert!(matches!(time_average(&s), Err(Error::NoValidBins)));
    }

    fn arb_tags() -> impl Strategy<Value = Vec<TimeTag>> {
        prop::collection::vec((0u64..40, 0i64..13_140, 1u8..=2), 1..300)
            .prop_map(|v| v.into_iter().map(|(c, d, ch)| tag(c, d, ch)).collect())
    }

    proptest! {
        #[test]
        fn chunked_counts_merge_exactly(tags in arb_tags(), split in 0u64..40) {
            let mut tags = tags;
            tags.push(tag(0, 0, 1));
            tags.push(tag(0, 0, 2));
            let whole = stream(tags.clone(), 40);
            let full = count_stream(&whole, 0.2).unwrap();

            let axis = full.axis;
            let mut a = CountGrid::new(axis, Configuration::Hbt);
            let mut b = CountGrid::new(axis, Configuration::Hbt);
            for (c, group) in whole.cycles() {
                if c < split { a.accumulate_cycle(group) } else { b.accumulate_cycle(group) }
            }
            a.n_events = split;
            b.n_events = 40 - split;
            b.merge(&a).unwrap();
            prop_assert_eq!(b, full);
        }

        #[test]
        fn intervals_bracket_estimate(tags in arb_tags()) {
            let mut tags = tags;
            tags.push(tag(0, 0, 1));
            tags.push(tag(0, 0, 2));
            let surf = correlate_hbt(&stream(tags, 40), 0.5).unwrap();
            for k in 0..surf.g2.len() {
                if surf.valid[k] {
                    prop_assert!(surf.ci_low[k] <= surf.g2[k] && surf.g2[k] <= surf.ci_high[k]);
                    let expected = surf.numerator[k] * surf.n_events
                        / (surf.marginal1[k / surf.n_bins()] * surf.marginal2[k % surf.n_bins()]);
                    prop_assert!((surf.g2[k] - expected).abs() <= 1e-12 * expected.abs());
                }
            }
        }

        #[test]
        fn diagonal_cut_of_symmetric_surface_is_its_reflection(vals in prop::collection::vec(0.0f64..5.0, 16)) {
            let axis = TimeAxis::new(1.0, 4.0).unwrap();
            let mut num = vec![0.0; 16];
            for i in 0..4 { for j in 0..4 { num[i * 4 + j] = vals[i * 4 + j] + vals[j * 4 + i]; } }
            let s = CorrelationSurface::from_parts(axis, Configuration::Hbt, Quantity::G2, Origin::Model, num, vec![1.0; 4], vec![1.0; 4], 1.0).unwrap();
            let up = cut(&s, CutKind::Diagonal, 1.0).unwrap();
            let down = cut(&s, CutKind::Diagonal, -1.0).unwrap();
            let a: Vec<f64> = up.samples.iter().map(|x| x.value).collect();
            let b: Vec<f64> = down.samples.iter().map(|x| x.value).collect();
            prop_assert_eq!(a, b);
        }
    }
}
