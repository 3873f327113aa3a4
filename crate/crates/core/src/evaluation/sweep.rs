use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::{confusion, fmt_metric, metrics, ConfusionCounts};
use crate::anomaly::{score_image, ImageScores};
use crate::error::{Error, Result};
use crate::feature_bank::Model;
use crate::imaging::GrayImage;
use crate::segmentation::{segment, threshold_fixed, BinaryMask, SegmentParams};

/// A raw test image with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub image: GrayImage,
    pub truth: BinaryMask,
}

/// How a probability map becomes a mask during a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binarization {
    /// Full segmentation: 2D maximum entropy plus opening.
    Entropy(SegmentParams),
    /// Pixels strictly above a fixed map level.
    Fixed(f64),
}

impl Binarization {
    pub fn apply(&self, map: &crate::anomaly::ProbabilityMap) -> Result<BinaryMask> {
        match self {
            Binarization::Entropy(params) => segment(map, params),
            Binarization::Fixed(level) => Ok(threshold_fixed(map, *level)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
}

/// For every anomaly threshold, detects and binarizes every image and pools
/// the confusion counts by summation.
///
/// Patch distances do not depend on the threshold, so each image is scored
/// once and only the map accumulation is repeated.
pub fn sweep_curves(
    model: &Model,
    items: &[LabeledImage],
    thresholds: &[f64],
    sigma: Option<f64>,
    binarization: Binarization,
) -> Result<Vec<CurveRow>> {
    if items.is_empty() {
        return Err(Error::Parameter("a sweep needs at least one labeled image".into()));
    }
    let scores: Vec<ImageScores> = items
        .par_iter()
        .map(|item| {
            model
                .preprocess(&item.image)
                .and_then(|pre| score_image(model, &pre))
                .map_err(|e| tag(&item.id, e))
        })
        .collect::<Result<_>>()?;

    thresholds
        .iter()
        .map(|&threshold| {
            let per_image: Vec<ConfusionCounts> = items
                .par_iter()
                .zip(&scores)
                .map(|(item, s)| {
                    let map = s.probability_map(threshold, sigma)?;
                    let pred = binarization.apply(&map)?;
                    confusion(&pred, &item.truth)
                })
                .collect::<Result<_>>()?;
            let counts: ConfusionCounts = per_image.into_iter().sum();
            let m = metrics(&counts);
            Ok(CurveRow {
                threshold,
                counts,
                tpr: m.tpr,
                fpr: m.fpr,
                ppv: m.ppv,
                f1: m.f1,
            })
        })
        .collect()
}

fn tag(id: &str, e: Error) -> Error {
    match e {
        Error::Io { path, reason } => Error::Io {
            path,
            reason: format!("{id}: {reason}"),
        },
        Error::Degenerate(m) => Error::Degenerate(format!("{id}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("{id}: {m}")),
        Error::Parameter(m) => Error::Parameter(format!("{id}: {m}")),
        other => other,
    }
}

/// Parses `start:stop:step` (inclusive of `stop`) into a list of values.
pub fn parse_threshold_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Parameter(format!("threshold range must be start:stop:step, got '{spec}'"));
    if parts.len() == 1 {
        return parts[0].trim().parse().map(|v| vec![v]).map_err(|_| bad());
    }
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    // Snap to 12 decimals so 0.1 steps print as 0.3, not 0.30000000000000004.
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub const CURVE_CSV_HEADER: &str = "threshold,tp,tn,fp,fn,tpr,fpr,ppv,f1";

pub fn write_curve_csv(rows: &[CurveRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.threshold,
            r.counts.tp,
            r.counts.tn,
            r.counts.fp,
            r.counts.fn_,
            fmt_metric(r.tpr),
            fmt_metric(r.fpr),
            fmt_metric(r.ppv),
            fmt_metric(r.f1)
        )?;
    }
    Ok(())
}

pub fn save_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    crate::imaging::write_atomic(path, |tmp| {
        let file = std::fs::File::create(tmp).map_err(|e| Error::io(path, e))?;
        write_curve_csv(rows, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    })
}
