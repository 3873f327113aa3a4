//! Repeat-period estimation from row and column projections.
//!
//! Each axis is reduced to its projection (mean of every row, mean of every
//! column), autocorrelated, and the spacing between successive
//! autocorrelation peaks gives the period. The median spacing is reported.

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Default prominence gate on the a\[0\]-normalized autocorrelation.
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.05;

/// Peaks lower than this fraction of the tallest peak on the same axis are
/// ignored when measuring spacings. Heights are compared after undoing the
/// `(n - lag) / n` decay of the biased autocorrelation.
pub const DEFAULT_DOMINANCE: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodOptions {
    pub min_prominence: f64,
    pub dominance: f64,
}

impl Default for PeriodOptions {
    fn default() -> Self {
        PeriodOptions {
            min_prominence: DEFAULT_MIN_PROMINENCE,
            dominance: DEFAULT_DOMINANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodEstimate {
    /// Period of the row projection, i.e. vertical repeat distance.
    pub row_period: usize,
    /// Period of the column projection, i.e. horizontal repeat distance.
    pub col_period: usize,
    pub row_peaks: Vec<usize>,
    pub col_peaks: Vec<usize>,
}

/// Per-axis intermediate series, kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTrace {
    pub projection: Vec<f64>,
    pub autocorrelation: Vec<f64>,
    pub peaks: Vec<usize>,
}

/// Mean of every row (length H) and of every column (length W).
pub fn projection_means(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let row_means = (0..h)
        .map(|r| img.row(r).iter().sum::<f64>() / w as f64)
        .collect();
    let mut col_sums = vec![0.0; w];
    for r in 0..h {
        for (acc, v) in col_sums.iter_mut().zip(img.row(r)) {
            *acc += v;
        }
    }
    let col_means = col_sums.into_iter().map(|s| s / h as f64).collect();
    (row_means, col_means)
}

/// Mean-removed biased autocorrelation `a[tau] = sum_t (v[t]-m)(v[t+tau]-m)`,
/// divided by `a[0]` when that is positive. A constant input yields zeros.
pub fn autocorrelate(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|lag| {
            centred[..n - lag]
                .iter()
                .zip(&centred[lag..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let zero = out[0];
    if zero > 0.0 {
        out.iter_mut().for_each(|x| *x /= zero);
    } else {
        out.iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

/// Prominence of the interior local maximum at `i`: its height above the
/// higher of the two minima found walking outwards on each side until a
/// strictly higher sample or the end of the vector.
pub fn prominence(a: &[f64], i: usize) -> f64 {
    let peak = a[i];
    let mut left_min = peak;
    for &v in a[..i].iter().rev() {
        if v > peak {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = peak;
    for &v in &a[i + 1..] {
        if v > peak {
            break;
        }
        right_min = right_min.min(v);
    }
    peak - left_min.max(right_min)
}

/// Strict interior local maxima with prominence at least `min_prominence`,
/// in increasing index order.
pub fn detect_peaks(a: &[f64], min_prominence: f64) -> Vec<usize> {
    if a.len() < 3 {
        return Vec::new();
    }
    (1..a.len() - 1)
        .filter(|&i| a[i] > a[i - 1] && a[i] > a[i + 1])
        .filter(|&i| prominence(a, i) >= min_prominence)
        .collect()
}

fn lower_median(values: &mut [usize]) -> usize {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Peaks used for spacing: restricted to lags `2..=len/2` and filtered by the
/// dominance rule.
fn axis_peaks(autocorr: &[f64], options: &PeriodOptions) -> Vec<usize> {
    let n = autocorr.len() as f64;
    let hi = autocorr.len() / 2;
    let candidates: Vec<(usize, f64)> = detect_peaks(autocorr, options.min_prominence)
        .into_iter()
        .filter(|&i| (2..=hi).contains(&i))
        .map(|i| (i, autocorr[i] * n / (n - i as f64)))
        .collect();
    let tallest = candidates.iter().map(|&(_, h)| h).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .into_iter()
        .filter(|&(_, h)| h >= options.dominance * tallest)
        .map(|(i, _)| i)
        .collect()
}

fn axis_period(name: &str, peaks: &[usize]) -> Result<usize> {
    if peaks.len() < 2 {
        return Err(Error::PeriodEstimation(format!(
            "found {} autocorrelation peak(s) along the {name} axis, need at least 2",
            peaks.len()
        )));
    }
    let mut gaps: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(lower_median(&mut gaps))
}

/// Returns the estimate together with the per-axis series (rows first).
pub fn trace_period(
    img: &GrayImage,
    options: &PeriodOptions,
) -> Result<(PeriodEstimate, AxisTrace, AxisTrace)> {
    if options.min_prominence < 0.0 || !options.min_prominence.is_finite() {
        return Err(Error::Parameter("min_prominence must be a finite value >= 0".into()));
    }
    let (row_means, col_means) = projection_means(img);
    let row_ac = autocorrelate(&row_means);
    let col_ac = autocorrelate(&col_means);
    let row_peaks = axis_peaks(&row_ac, options);
    let col_peaks = axis_peaks(&col_ac, options);
    let row_period = axis_period("row", &row_peaks)?;
    let col_period = axis_period("column", &col_peaks)?;
    let estimate = PeriodEstimate {
        row_period,
        col_period,
        row_peaks: row_peaks.clone(),
        col_peaks: col_peaks.clone(),
    };
    Ok((
        estimate,
        AxisTrace {
            projection: row_means,
            autocorrelation: row_ac,
            peaks: row_peaks,
        },
        AxisTrace {
            projection: col_means,
            autocorrelation: col_ac,
            peaks: col_peaks,
        },
    ))
}

pub fn estimate_period(img: &GrayImage, min_prominence: f64) -> Result<PeriodEstimate> {
    let options = PeriodOptions {
        min_prominence,
        ..PeriodOptions::default()
    };
    trace_period(img, &options).map(|(e, _, _)| e)
}

/// Square filter side: the larger period, bumped to the next odd number.
pub fn derive_filter_size(estimate: &PeriodEstimate) -> usize {
    let p = estimate.row_period.max(estimate.col_period);
    if p.is_multiple_of(2) {
        p + 1
    } else {
        p
    }
}
