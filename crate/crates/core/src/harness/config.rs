use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_bank::{Aggregation, FilterSize, TrainConfig};
use crate::segmentation::SegmentParams;

/// Every tunable of a train → calibrate → detect → segment run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// `None` calibrates on the reference image.
    pub anomaly_threshold: Option<f64>,
    /// Gaussian spread of a patch deposit; `None` means `p / 6`.
    pub sigma: Option<f64>,
    pub segment: SegmentParams,
}

/// Keys accepted by [`PipelineConfig::set`] and in config files.
pub const CONFIG_KEYS: &[&str] = &[
    "filter_size",
    "stride",
    "layer_stride",
    "layers",
    "similarity_threshold",
    "anomaly_threshold",
    "contrast_threshold",
    "seed",
    "sigma",
    "levels",
    "neighborhood",
    "se",
    "equalize",
    "aggregation",
    "min_prominence",
    "dominance",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("{key}: cannot parse '{value}'")))
}

fn auto_or<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl PipelineConfig {
    /// Sets one field from its textual form. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "filter_size" => self.train.filter_size = value.parse::<FilterSize>()?,
            "stride" => self.train.patch_stride = parse(k, value)?,
            "layer_stride" => self.train.layer_stride = parse(k, value)?,
            "layers" => self.train.num_layers = parse(k, value)?,
            "similarity_threshold" => self.train.similarity_threshold = parse(k, value)?,
            "anomaly_threshold" => self.anomaly_threshold = auto_or(k, value)?,
            "contrast_threshold" => self.train.contrast_threshold = parse(k, value)?,
            "seed" => self.train.seed = parse(k, value)?,
            "sigma" => self.sigma = auto_or(k, value)?,
            "levels" => self.segment.levels = parse(k, value)?,
            "neighborhood" => self.segment.neighborhood = parse(k, value)?,
            "se" => self.segment.se = parse(k, value)?,
            "equalize" => self.train.equalize = parse(k, value)?,
            "aggregation" => self.train.aggregation = value.parse::<Aggregation>()?,
            "min_prominence" => self.train.period.min_prominence = parse(k, value)?,
            "dominance" => self.train.period.dominance = parse(k, value)?,
            _ => {
                return Err(Error::Parameter(format!(
                    "unknown config key '{key}' (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key, value)
                .map_err(|e| Error::Parameter(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Checks the ranges each stage would otherwise reject mid-run.
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let bad = |m: String| Err(Error::Parameter(m));
        if !(t.similarity_threshold > 0.0 && t.similarity_threshold < 1.0) {
            return bad(format!("similarity_threshold must be in (0, 1), got {}", t.similarity_threshold));
        }
        if t.num_layers < 1 {
            return bad("layers must be at least 1".into());
        }
        if t.patch_stride < 1 || t.layer_stride < 1 {
            return bad("stride and layer_stride must be at least 1".into());
        }
        if !(t.contrast_threshold >= 0.0) {
            return bad("contrast_threshold must be >= 0".into());
        }
        if !(t.period.min_prominence >= 0.0) {
            return bad("min_prominence must be >= 0".into());
        }
        if !(t.period.dominance >= 0.0 && t.period.dominance <= 1.0) {
            return bad("dominance must be in [0, 1]".into());
        }
        if let Some(a) = self.anomaly_threshold {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("anomaly_threshold must be >= 0, got {a}"));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma must be > 0, got {s}"));
            }
        }
        let s = &self.segment;
        if s.levels < 2 {
            return bad("levels must be at least 2".into());
        }
        if s.neighborhood.is_multiple_of(2) || s.se.is_multiple_of(2) {
            return bad("neighborhood and se must be odd".into());
        }
        Ok(())
    }

    /// `key = value` lines that [`apply_text`](Self::apply_text) reads back
    /// to an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let auto = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let filter = match t.filter_size {
            FilterSize::Auto => "auto".to_string(),
            FilterSize::Fixed(n) => n.to_string(),
        };
        let aggregation = match t.aggregation {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        };
        format!(
            "filter_size = {filter}\nstride = {}\nlayer_stride = {}\nlayers = {}\n\
             similarity_threshold = {}\nanomaly_threshold = {}\ncontrast_threshold = {}\n\
             seed = {}\nsigma = {}\nlevels = {}\nneighborhood = {}\nse = {}\n\
             equalize = {}\naggregation = {aggregation}\nmin_prominence = {}\ndominance = {}\n",
            t.patch_stride,
            t.layer_stride,
            t.num_layers,
            t.similarity_threshold,
            auto(self.anomaly_threshold),
            t.contrast_threshold,
            t.seed,
            auto(self.sigma),
            self.segment.levels,
            self.segment.neighborhood,
            self.segment.se,
            t.equalize,
            t.period.min_prominence,
            t.period.dominance,
        )
    }
}
