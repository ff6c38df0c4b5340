//! Detector response and window crediting of model densities.

use crate::error::{Error, Result};
use crate::optics::DetectorSpec;
use crate::stats::normal_cdf;
use crate::surface::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};

/// Kernel half-width in standard deviations.
const KERNEL_SIGMAS: f64 = 6.0;

/// Bin-integrated Gaussian weights at offsets `-h..=h`, normalized to one.
pub fn gaussian_kernel(sigma: f64, bin_width: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (KERNEL_SIGMAS * sigma / bin_width).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|o| {
            let o = o as f64;
            normal_cdf((o + 0.5) * bin_width / sigma) - normal_cdf((o - 0.5) * bin_width / sigma)
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Model densities laid out over three consecutive windows of `axis`
/// (pulse offsets -1, 0, +1), before detections are credited to windows.
/// Index `e = (o + 1) n + i` is bin `i` of the window `o` periods later.
#[derive(Debug, Clone)]
pub(crate) struct ExtendedSurface {
    pub axis: TimeAxis,
    pub quantity: Quantity,
    /// Same-pulse pair density, `3n x 3n`.
    pub numerator: Vec<f64>,
    /// Single-photon density, `3n`; both channels see the same shape.
    pub marginal: Vec<f64>,
}

/// Applies the detector timing response and credits every detection to the
/// window it falls in.
///
/// Marginals fold over the three windows. A same-pulse pair stays a
/// coincidence only when both detections land in the same window; for g2
/// surfaces the windows then also pair detections from neighbouring pulses,
/// which are uncorrelated (`N1 N2` per pulse). |g1|^2 surfaces keep only
/// the same-window part, since interference needs both photons in one cycle.
pub(crate) fn credit_to_window(
    ext: &ExtendedSurface,
    detectors: Option<&[DetectorSpec; 2]>,
) -> Result<CorrelationSurface> {
    let n = ext.axis.n_bins();
    let len = 3 * n;
    let width = ext.axis.bin_width();
    let (k1, k2) = match detectors {
        Some(d) => (gaussian_kernel(d[0].sigma(), width), gaussian_kernel(d[1].sigma(), width)),
        None => (vec![1.0], vec![1.0]),
    };
    for k in [&k1, &k2] {
        if k.len() > n {
            return Err(Error::KernelTooWide {
                kernel_ns: k.len() as f64 * width,
                extent_ns: ext.axis.period(),
            });
        }
    }

    let mut rows = vec![0.0; len * len];
    for a in 0..len {
        linear(&ext.numerator[a * len..(a + 1) * len], &k2, &mut rows[a * len..(a + 1) * len]);
    }
    let mut joint = vec![0.0; len * len];
    let mut column = vec![0.0; len];
    let mut out = vec![0.0; len];
    for b in 0..len {
        for a in 0..len {
            column[a] = rows[a * len + b];
        }
        linear(&column, &k1, &mut out);
        for a in 0..len {
            joint[a * len + b] = out[a];
        }
    }
    let mut e1 = vec![0.0; len];
    let mut e2 = vec![0.0; len];
    linear(&ext.marginal, &k1, &mut e1);
    linear(&ext.marginal, &k2, &mut e2);

    let cross_window = ext.quantity == Quantity::G2;
    let mut numerator = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for o1 in 0..3 {
                let a = o1 * n + i;
                for o2 in 0..3 {
                    let b = o2 * n + j;
                    if o1 == o2 {
                        v += joint[a * len + b];
                    } else if cross_window {
                        v += e1[a] * e2[b];
                    }
                }
            }
            numerator[i * n + j] = v;
        }
    }
    let fold = |e: &[f64]| -> Vec<f64> { (0..n).map(|i| e[i] + e[n + i] + e[2 * n + i]).collect() };

    CorrelationSurface::from_parts(
        ext.axis,
        Configuration::Hbt,
        ext.quantity,
        Origin::Model,
        numerator,
        fold(&e1),
        fold(&e2),
        1.0,
    )
}

/// Same-length convolution with zero padding outside `input`.
fn linear(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = input.len() as i64;
    let half = (kernel.len() / 2) as i64;
    for (a, o) in out.iter_mut().enumerate() {
        *o = kernel
            .iter()
            .enumerate()
            .filter_map(|(k, w)| {
                let src = a as i64 - (k as i64 - half);
                (0..n).contains(&src).then(|| w * input[src as usize])
            })
            .sum();
    }
}
