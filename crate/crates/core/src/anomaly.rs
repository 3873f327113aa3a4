//! Patch scoring against a trained bank and defect-probability accumulation.
//!
//! Distances are Manhattan distances between min-max normalized vectors,
//! divided by the vector length so they fall in `[0, 1]`. A patch whose
//! nearest-feature distance exceeds the anomaly threshold deposits
//! `distance * G` over its footprint, where `G` is a normalized Gaussian
//! window. Every patch, anomalous or not, deposits `G` into a weight
//! accumulator; the final pixel value is deposit / weight.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_bank::{Layer, Model};
use crate::imaging::{self, GrayImage, Kernel};
use crate::patching::{copy_window, positions_along};

/// Min-max scales `v` into `out`; a constant vector maps to all 0.5.
pub fn normalize_range(v: &[f64], out: &mut [f64]) {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if span > 0.0 {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = (x - lo) / span;
        }
    } else {
        out.iter_mut().for_each(|o| *o = 0.5);
    }
}

/// Normalized Manhattan distance in `[0, 1]`.
pub fn manhattan_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "distance between vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut na = vec![0.0; a.len()];
    let mut nb = vec![0.0; b.len()];
    normalize_range(a, &mut na);
    normalize_range(b, &mut nb);
    let sum: f64 = na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// A layer's features, pre-normalized for repeated nearest-neighbour scans.
#[derive(Debug, Clone)]
pub struct LayerScorer {
    len: usize,
    count: usize,
    normalized: Vec<f64>,
}

impl LayerScorer {
    pub fn new(layer: &Layer) -> Result<Self> {
        if layer.features.is_empty() {
            return Err(Error::Model("layer has no features".into()));
        }
        let len = layer.filter_size * layer.filter_size;
        let mut normalized = vec![0.0; len * layer.features.len()];
        for (feature, out) in layer.features.iter().zip(normalized.chunks_exact_mut(len)) {
            if feature.weights.len() != len {
                return Err(Error::Dimension("feature length does not match filter size".into()));
            }
            normalize_range(&feature.weights, out);
        }
        Ok(LayerScorer {
            len,
            count: layer.features.len(),
            normalized,
        })
    }

    /// Nearest feature for an already normalized patch.
    ///
    /// A candidate's partial sum is abandoned once it exceeds the best full
    /// sum so far; partial sums of non-negative terms never decrease, so the
    /// result is identical to an exhaustive scan.
    pub fn nearest_normalized(&self, patch: &[f64]) -> (f64, usize) {
        let mut best_sum = f64::INFINITY;
        let mut best = 0;
        for (j, feature) in self.normalized.chunks_exact(self.len).enumerate() {
            let mut acc = 0.0;
            let mut abandoned = false;
            for (chunk_p, chunk_f) in patch.chunks(32).zip(feature.chunks(32)) {
                for (x, y) in chunk_p.iter().zip(chunk_f) {
                    acc += (x - y).abs();
                }
                if acc > best_sum {
                    abandoned = true;
                    break;
                }
            }
            if !abandoned && acc < best_sum {
                best_sum = acc;
                best = j;
            }
        }
        (best_sum / self.len as f64, best)
    }

    pub fn feature_count(&self) -> usize {
        self.count
    }
}

/// Minimum distance from `patch` to the layer's features and its index
/// (lowest index on ties).
pub fn nearest_distance(patch: &[f64], layer: &Layer) -> Result<(f64, usize)> {
    let scorer = LayerScorer::new(layer)?;
    if patch.len() != scorer.len {
        return Err(Error::Dimension(format!(
            "patch of length {} against {}x{} features",
            patch.len(),
            layer.filter_size,
            layer.filter_size
        )));
    }
    let mut normalized = vec![0.0; patch.len()];
    normalize_range(patch, &mut normalized);
    Ok(scorer.nearest_normalized(&normalized))
}

/// Nearest-feature distances of every patch of one layer's input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerResponse {
    /// Cumulative downsampling back to the original image grid.
    pub scale: usize,
    pub filter_size: usize,
    pub patch_stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major over the patch grid.
    pub distances: Vec<f64>,
    pub nearest: Vec<usize>,
}

impl LayerResponse {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }
}

/// Raw per-patch scores of one image; maps at any threshold derive from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub width: usize,
    pub height: usize,
    pub layers: Vec<LayerResponse>,
}

impl ImageScores {
    pub fn max_distance(&self) -> f64 {
        self.layers.iter().map(LayerResponse::max_distance).fold(0.0, f64::max)
    }

    /// Accumulates the probability map for `threshold`. `sigma` defaults to
    /// `p / 6` in each layer's own pixel units.
    pub fn probability_map(&self, threshold: f64, sigma: Option<f64>) -> Result<ProbabilityMap> {
        let (w, h) = (self.width, self.height);
        let mut deposit = vec![0.0; w * h];
        let mut weight = vec![0.0; w * h];
        for layer in &self.layers {
            let p = layer.filter_size;
            let kernel = imaging::gaussian_kernel(p, sigma.unwrap_or(p as f64 / 6.0))?;
            deposit
                .par_chunks_mut(w)
                .zip(weight.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, (dep_row, wt_row))| {
                    gather_row(layer, &kernel, threshold, y, dep_row, wt_row);
                });
        }
        let values = deposit
            .iter()
            .zip(&weight)
            .map(|(&d, &wt)| if wt > 0.0 { (d / wt).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Ok(ProbabilityMap {
            width: w,
            height: h,
            values,
            weights: weight,
        })
    }
}

/// Origins `k*o` (k in grid) with `k*o <= pos < k*o + p`.
#[inline]
fn covering(pos: usize, p: usize, o: usize, grid: usize) -> std::ops::Range<usize> {
    let lo = (pos + 1).saturating_sub(p).div_ceil(o);
    let hi = (pos / o + 1).min(grid);
    lo..hi.max(lo)
}

/// Accumulates, for output row `y`, the contributions of every patch whose
/// (stride-replicated) footprint covers each pixel of that row.
fn gather_row(
    layer: &LayerResponse,
    kernel: &Kernel,
    threshold: f64,
    y: usize,
    dep_row: &mut [f64],
    wt_row: &mut [f64],
) {
    let (p, o, s) = (layer.filter_size, layer.patch_stride, layer.scale);
    let ly = y / s;
    let rows = covering(ly, p, o, layer.grid_rows);
    for (x, (dep, wt)) in dep_row.iter_mut().zip(wt_row.iter_mut()).enumerate() {
        let lx = x / s;
        let cols = covering(lx, p, o, layer.grid_cols);
        for a in rows.clone() {
            let ki = ly - a * o;
            let base = a * layer.grid_cols;
            for b in cols.clone() {
                let g = kernel.get(ki, lx - b * o);
                *wt += g;
                let d = layer.distances[base + b];
                if d > threshold {
                    *dep += d * g;
                }
            }
        }
    }
}

/// Scores every patch of every layer of a preprocessed image.
pub fn score_image(model: &Model, preprocessed: &GrayImage) -> Result<ImageScores> {
    let inputs = model.layer_inputs(preprocessed)?;
    let mut layers = Vec::with_capacity(inputs.len());
    for (layer, (input, scale)) in model.layers.iter().zip(inputs) {
        layers.push(score_layer(layer, &input, scale, model.preprocessing.patch_stride)?);
    }
    Ok(ImageScores {
        width: preprocessed.width(),
        height: preprocessed.height(),
        layers,
    })
}

fn score_layer(layer: &Layer, input: &GrayImage, scale: usize, stride: usize) -> Result<LayerResponse> {
    let p = layer.filter_size;
    if p > input.width().min(input.height()) {
        return Err(Error::Dimension(format!(
            "{p}x{p} filters exceed the {}x{} input",
            input.width(),
            input.height()
        )));
    }
    let scorer = LayerScorer::new(layer)?;
    let rows = positions_along(input.height(), p, stride);
    let cols = positions_along(input.width(), p, stride);
    let per_row: Vec<Vec<(f64, usize)>> = (0..rows)
        .into_par_iter()
        .map(|a| {
            let mut raw = vec![0.0; p * p];
            let mut norm = vec![0.0; p * p];
            (0..cols)
                .map(|b| {
                    copy_window(input, (a * stride, b * stride), p, &mut raw);
                    normalize_range(&raw, &mut norm);
                    scorer.nearest_normalized(&norm)
                })
                .collect()
        })
        .collect();
    let (distances, nearest) = per_row.into_iter().flatten().unzip();
    Ok(LayerResponse {
        scale,
        filter_size: p,
        patch_stride: stride,
        grid_rows: rows,
        grid_cols: cols,
        distances,
        nearest,
    })
}

/// Worst-case nearest distance over the training image's patches; stored in
/// the model and returned.
pub fn calibrate_threshold(model: &mut Model, preprocessed_train: &GrayImage) -> Result<f64> {
    let scores = score_image(model, preprocessed_train)?;
    let threshold = scores.max_distance();
    model.anomaly_threshold = Some(threshold);
    Ok(threshold)
}

/// Per-pixel defect certainty with its accumulated Gaussian weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ProbabilityMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() || width == 0 || height == 0 {
            return Err(Error::Dimension("probability map size mismatch".into()));
        }
        Ok(ProbabilityMap {
            width,
            height,
            weights: vec![1.0; values.len()],
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// 16-bit PNG, `round(v * 65535)`.
    pub fn save_png16(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        imaging::save_unit_png16(self.width, self.height, &self.values, path)
    }

    pub fn load_png(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (w, h, values) = imaging::load_unit_image(path)?;
        Self::from_values(w, h, values)
    }
}

/// Builds the map for a preprocessed test image. Uses the model's calibrated
/// threshold unless `threshold_override` is given.
pub fn defect_probability_map(
    model: &Model,
    preprocessed: &GrayImage,
    threshold_override: Option<f64>,
    sigma: Option<f64>,
) -> Result<ProbabilityMap> {
    let threshold = resolve_threshold(model, threshold_override)?;
    score_image(model, preprocessed)?.probability_map(threshold, sigma)
}

pub fn resolve_threshold(model: &Model, threshold_override: Option<f64>) -> Result<f64> {
    match threshold_override.or(model.anomaly_threshold) {
        Some(t) if t.is_finite() && t >= 0.0 => Ok(t),
        Some(t) => Err(Error::Parameter(format!("anomaly threshold must be >= 0, got {t}"))),
        None => Err(Error::Model(
            "model has no calibrated anomaly threshold; calibrate or pass an override".into(),
        )),
    }
}
