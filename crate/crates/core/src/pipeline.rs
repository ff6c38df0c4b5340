//! Streaming source -> optics -> correlator pipeline.
//!
//! Cycles are processed in chunks that are simulated and detected in
//! parallel and then folded in order into one [`CountGrid`]. The result is
//! identical to materializing the run, detecting it and correlating the tags.

use rayon::prelude::*;

use crate::correlator::CountGrid;
use crate::error::{Error, Result};
use crate::optics::{DeadTimeFilter, Detector, OpticalSetup, TimeTag};
use crate::stochastic::Source;
use crate::surface::{ns_to_ps, TimeAxis};

/// Output cycles per work item.
const STREAM_CHUNK: u64 = 1 << 15;

/// Simulates `n_cycles` of `source`, routes them through `setup` and
/// accumulates coincidences on a `bin_width` axis.
pub fn stream_counts(
    source: &Source,
    n_cycles: u64,
    master_seed: u64,
    detect_seed: u64,
    setup: &OpticalSetup,
    bin_width: f64,
) -> Result<CountGrid> {
    if n_cycles == 0 {
        return Err(Error::param("n_cycles must be at least 1"));
    }
    source.validate()?;
    let det = Detector::new(
        *setup,
        detect_seed,
        source.pulse_period(),
        n_cycles,
        source.wavepacket_rates(),
    )?;
    let axis = TimeAxis::from_ps(ns_to_ps(bin_width), det.period_ps)?.with_start_ps(det.start_ps)?;
    let lookback = setup.lookback();

    let chunks: Vec<(u64, u64)> = (0..n_cycles)
        .step_by(STREAM_CHUNK as usize)
        .map(|a| (a, (a + STREAM_CHUNK).min(n_cycles)))
        .collect();
    let batch = 4 * rayon::current_num_threads().max(1);

    let mut grid = CountGrid::new(axis, setup.interferometer.configuration);
    let mut filter = DeadTimeFilter::new(&setup.detectors, det.period_ps);
    let mut pending: Vec<TimeTag> = Vec::new();
    for group in chunks.chunks(batch) {
        let raw: Vec<(u64, Vec<TimeTag>)> = group
            .par_iter()
            .map(|&(a, b)| {
                let mut photons = Vec::new();
                for c in a.saturating_sub(lookback)..b {
                    source.simulate_cycle(c, master_seed, &mut photons);
                }
                let mut tags = Vec::new();
                det.tags_for(&photons, a..b, &mut tags);
                (b, tags)
            })
            .collect();
        for (end, tags) in raw {
            pending.extend(tags);
            pending.sort_unstable();
            // Jitter moves a tag by less than one period, so later chunks
            // only add tags to cycles >= end - 1.
            let split = pending.partition_point(|t| t.cycle + 1 < end);
            fold(&mut grid, &mut filter, &pending[..split]);
            pending.drain(..split);
        }
    }
    fold(&mut grid, &mut filter, &pending);
    grid.n_events = n_cycles;
    Ok(grid)
}

fn fold(grid: &mut CountGrid, filter: &mut DeadTimeFilter, tags: &[TimeTag]) {
    let kept: Vec<TimeTag> = tags.iter().filter(|t| filter.admit(t)).copied().collect();
    for cycle in kept.chunk_by(|a, b| a.cycle == b.cycle) {
        grid.accumulate_cycle(cycle);
    }
}
