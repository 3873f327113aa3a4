//! Similarity-gated filter discovery and layer stacking.
//!
//! A layer is trained in a single pass over its (shuffled) patches. The
//! first patch founds feature 0. Every later patch is compared with all
//! features by clamped cosine similarity; below the threshold it founds a
//! new feature, otherwise it is folded into the best match as a running
//! mean: `F += (P - F) / (C + 1)`, `C += 1`. Weights are never revisited.
//!
//! Deeper layers train on the previous layer's response: every feature is
//! cross-correlated with the previous input, the maps are merged per pixel
//! and the result is downsampled by the layer stride.

use std::path::Path;

use rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage, Kernel};
use crate::patching::{self, PatchSource};
use crate::periodicity::{self, PeriodEstimate, PeriodOptions};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub supporters: u64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub filter_size: usize,
    /// Downsampling applied to the previous layer's response to form this
    /// layer's input. Always 1 for the first layer.
    pub stride: usize,
    pub features: Vec<Feature>,
}

impl Layer {
    pub fn parameter_count(&self) -> usize {
        self.features.len() * self.filter_size * self.filter_size
    }
}

/// How per-feature response maps merge into the next layer's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Parameter(format!("unknown aggregation '{other}' (max|mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub equalize: bool,
    pub seed: u64,
    pub contrast_threshold: f64,
    pub patch_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format_version: u32,
    pub fabric_id: String,
    pub preprocessing: Preprocessing,
    pub similarity_threshold: f64,
    /// `None` until calibrated.
    pub anomaly_threshold: Option<f64>,
    #[serde(default)]
    pub aggregation: Aggregation,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn feature_count(&self) -> usize {
        self.layers.iter().map(|l| l.features.len()).sum()
    }

    /// Total stored weights: features x p^2, summed over layers.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn filter_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.filter_size)
    }

    /// Applies the preprocessing recorded in the model to a raw image.
    pub fn preprocess(&self, raw: &GrayImage) -> Result<GrayImage> {
        imaging::preprocess(raw, self.preprocessing.equalize)
    }

    /// Input image of every layer for an already preprocessed image, with
    /// the cumulative downsampling factor back to the original grid.
    pub fn layer_inputs(&self, preprocessed: &GrayImage) -> Result<Vec<(GrayImage, usize)>> {
        let mut out: Vec<(GrayImage, usize)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (input, scale) = match out.last() {
                None => (preprocessed.clone(), 1),
                Some((prev_input, prev_scale)) => {
                    let prev = &self.layers[i - 1];
                    let next = propagate(prev_input, prev, layer.stride, self.aggregation)?;
                    (next, prev_scale * layer.stride)
                }
            };
            if layer.filter_size > input.width().min(input.height()) {
                return Err(Error::Dimension(format!(
                    "layer {} uses {}x{} filters but its input is only {}x{}",
                    i + 1,
                    layer.filter_size,
                    layer.filter_size,
                    input.width(),
                    input.height()
                )));
            }
            out.push((input, scale));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        load_model(path)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {} (this build reads {})",
                self.format_version, MODEL_FORMAT_VERSION
            )));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(Error::ModelFormat("similarity_threshold must lie in (0, 1)".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::ModelFormat("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let len = layer.filter_size * layer.filter_size;
            if layer.filter_size == 0 || layer.stride == 0 || layer.features.is_empty() {
                return Err(Error::ModelFormat(format!("layer {} is malformed", i + 1)));
            }
            if layer
                .features
                .iter()
                .any(|f| f.supporters == 0 || f.weights.len() != len)
            {
                return Err(Error::ModelFormat(format!(
                    "layer {} has a feature with bad supporters or weight length",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// `max(0, <a,b> / (|a| |b|))`, capped at 1.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("similarity with a zero vector".into()));
    }
    Ok(clamped_cosine(dot(a, b), na, nb))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn clamped_cosine(dot: f64, na: f64, nb: f64) -> f64 {
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// What happened to one patch during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub feature: usize,
    /// Best similarity against the bank before this patch was applied;
    /// `None` for the very first patch.
    pub similarity: Option<f64>,
    pub created: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub assignments: Vec<Assignment>,
    /// Number of patches consumed; equals the input length for one epoch.
    pub visits: usize,
}

pub fn train_layer<S: PatchSource + ?Sized>(patches: &S, threshold: f64) -> Result<Vec<Feature>> {
    train_layer_traced(patches, threshold).map(|(f, _)| f)
}

/// Single-epoch feature discovery, recording every patch's assignment.
///
/// Ties on the best similarity go to the lowest feature index.
pub fn train_layer_traced<S: PatchSource + ?Sized>(
    patches: &S,
    threshold: f64,
) -> Result<(Vec<Feature>, TrainingTrace)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "similarity threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if patches.is_empty() {
        return Err(Error::Training("no patches to train on".into()));
    }
    let len = patches.patch_len();
    let mut features: Vec<Feature> = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    let mut trace = TrainingTrace {
        assignments: Vec::with_capacity(patches.len()),
        visits: 0,
    };
    let mut buf = vec![0.0; len];

    for i in 0..patches.len() {
        patches.copy_patch(i, &mut buf);
        trace.visits += 1;
        let patch_norm = norm(&buf);
        if patch_norm == 0.0 {
            return Err(Error::Degenerate(format!(
                "patch {i} is all zeros; filter patches by variance before training"
            )));
        }
        if features.is_empty() {
            features.push(Feature {
                supporters: 1,
                weights: buf.clone(),
            });
            norms.push(patch_norm);
            trace.assignments.push(Assignment {
                feature: 0,
                similarity: None,
                created: true,
            });
            continue;
        }

        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, (feature, &fnorm)) in features.iter().zip(&norms).enumerate() {
            let s = if fnorm == 0.0 {
                0.0
            } else {
                clamped_cosine(dot(&buf, &feature.weights), patch_norm, fnorm)
            };
            if s > best_sim {
                best_sim = s;
                best = j;
            }
        }

        if best_sim < threshold {
            features.push(Feature {
                supporters: 1,
                weights: buf.clone(),
            });
            norms.push(patch_norm);
            trace.assignments.push(Assignment {
                feature: features.len() - 1,
                similarity: Some(best_sim),
                created: true,
            });
        } else {
            let feature = &mut features[best];
            let divisor = (feature.supporters + 1) as f64;
            for (w, p) in feature.weights.iter_mut().zip(&buf) {
                *w += (p - *w) / divisor;
            }
            feature.supporters += 1;
            norms[best] = norm(&feature.weights);
            trace.assignments.push(Assignment {
                feature: best,
                similarity: Some(best_sim),
                created: false,
            });
        }
    }
    Ok((features, trace))
}

/// Correlates every feature with `input`, merges the responses per pixel and
/// downsamples the merged map by `stride`.
pub fn propagate(
    input: &GrayImage,
    layer: &Layer,
    stride: usize,
    aggregation: Aggregation,
) -> Result<GrayImage> {
    let mut merged: Option<Vec<f64>> = None;
    for feature in &layer.features {
        let kernel = Kernel::new(layer.filter_size, feature.weights.clone())?;
        let response = imaging::cross_correlate(input, &kernel)?.into_data();
        merged = Some(match merged {
            None => response,
            Some(mut acc) => {
                match aggregation {
                    Aggregation::Max => acc
                        .iter_mut()
                        .zip(&response)
                        .for_each(|(a, r)| *a = a.max(*r)),
                    Aggregation::Mean => acc.iter_mut().zip(&response).for_each(|(a, r)| *a += r),
                }
                acc
            }
        });
    }
    let mut merged = merged.ok_or_else(|| Error::Model("cannot propagate through an empty layer".into()))?;
    if aggregation == Aggregation::Mean {
        let n = layer.features.len() as f64;
        merged.iter_mut().for_each(|v| *v /= n);
    }
    let merged = GrayImage::new(input.width(), input.height(), merged)?;
    imaging::downsample(&merged, stride)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterSize {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for FilterSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(FilterSize::Auto);
        }
        let n: usize = s
            .parse()
            .map_err(|_| Error::Parameter(format!("filter size must be 'auto' or an odd integer, got '{s}'")))?;
        if n.is_multiple_of(2) {
            return Err(Error::Parameter(format!("filter size must be odd, got {n}")));
        }
        Ok(FilterSize::Fixed(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub fabric_id: String,
    pub filter_size: FilterSize,
    pub num_layers: usize,
    /// Spacing between patch origins (pixel overlap control).
    pub patch_stride: usize,
    /// Downsampling between consecutive layers.
    pub layer_stride: usize,
    pub similarity_threshold: f64,
    pub seed: u64,
    pub contrast_threshold: f64,
    pub equalize: bool,
    pub aggregation: Aggregation,
    pub period: PeriodOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            fabric_id: "fabric".into(),
            filter_size: FilterSize::Auto,
            num_layers: 1,
            patch_stride: 1,
            layer_stride: 2,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            seed: 42,
            contrast_threshold: 0.0,
            equalize: true,
            aggregation: Aggregation::Max,
            period: PeriodOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub candidate_patches: usize,
    pub kept_patches: usize,
    pub visits: usize,
    pub features: usize,
    /// Receptive field of this layer's filters on the original image.
    pub effective_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub period: Option<PeriodEstimate>,
    pub filter_size: usize,
    pub layers: Vec<LayerReport>,
}

/// Trains a model from one raw (unpreprocessed) defect-free image.
///
/// The anomaly threshold is left unset; see `anomaly::calibrate_threshold`.
pub fn build_model(raw: &GrayImage, cfg: &TrainConfig) -> Result<(Model, BuildReport)> {
    if cfg.num_layers < 1 {
        return Err(Error::Parameter("a model needs at least one layer".into()));
    }
    if cfg.layer_stride < 1 || cfg.patch_stride < 1 {
        return Err(Error::Parameter("strides must be at least 1".into()));
    }
    let preprocessed = imaging::preprocess(raw, cfg.equalize)?;

    let (filter_size, period) = match cfg.filter_size {
        FilterSize::Fixed(p) => (p, None),
        FilterSize::Auto => {
            let (estimate, _, _) = periodicity::trace_period(&preprocessed, &cfg.period)?;
            (periodicity::derive_filter_size(&estimate), Some(estimate))
        }
    };
    if filter_size % 2 == 0 {
        return Err(Error::Parameter(format!("filter size must be odd, got {filter_size}")));
    }

    let mut rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut layers: Vec<Layer> = Vec::with_capacity(cfg.num_layers);
    let mut reports = Vec::with_capacity(cfg.num_layers);
    let mut input = preprocessed;
    let mut window = filter_size;

    for depth in 0..cfg.num_layers {
        let stride = if depth == 0 { 1 } else { cfg.layer_stride };
        if let Some(prev) = layers.last() {
            input = propagate(&input, prev, stride, cfg.aggregation)?;
            window *= stride;
        }
        let candidates = patching::extract_patches(&input, filter_size, cfg.patch_stride)?;
        let kept = patching::filter_by_variance(&candidates, cfg.contrast_threshold)?;
        let shuffled = patching::shuffle_patches_with(&kept, &mut rng);
        let (features, trace) = train_layer_traced(&shuffled, cfg.similarity_threshold)
            .map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("layer {}: {msg}", depth + 1)),
                other => other,
            })?;
        reports.push(LayerReport {
            candidate_patches: candidates.len(),
            kept_patches: kept.len(),
            visits: trace.visits,
            features: features.len(),
            effective_window: window,
        });
        layers.push(Layer {
            filter_size,
            stride,
            features,
        });
    }

    let model = Model {
        format_version: MODEL_FORMAT_VERSION,
        fabric_id: cfg.fabric_id.clone(),
        preprocessing: Preprocessing {
            equalize: cfg.equalize,
            seed: cfg.seed,
            contrast_threshold: cfg.contrast_threshold,
            patch_stride: cfg.patch_stride,
        },
        similarity_threshold: cfg.similarity_threshold,
        anomaly_threshold: None,
        aggregation: cfg.aggregation,
        layers,
    };
    Ok((
        model,
        BuildReport {
            period,
            filter_size,
            layers: reports,
        },
    ))
}

/// Writes the model as a JSON document. Floats use the shortest decimal
/// form that parses back to the same bits.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(model)
        .map_err(|e| Error::ModelFormat(format!("cannot encode model: {e}")))?;
    imaging::write_atomic(path, |tmp| std::fs::write(tmp, text).map_err(|e| Error::io(path, e)))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<Model> {
    if text.trim().is_empty() {
        return Err(Error::ModelFormat("model file is empty".into()));
    }
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(format!("not a model document: {e}")))?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {v} (this build reads {MODEL_FORMAT_VERSION})"
            )))
        }
        None => return Err(Error::ModelFormat("missing format_version".into())),
    }
    let model: Model =
        serde_json::from_value(value).map_err(|e| Error::ModelFormat(format!("malformed model: {e}")))?;
    model.validate()?;
    Ok(model)
}
