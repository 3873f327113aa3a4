//! Overlapping patch extraction, variance trimming and seeded shuffling.

use std::sync::Arc;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// A `p x p` window flattened row-major, with its top-left source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub values: Vec<f64>,
}

/// Anything training can iterate over: a sequence of equally sized vectors.
pub trait PatchSource {
    /// Length of every patch vector (`p * p`).
    fn patch_len(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Copies patch `index` into `out` (`out.len() == patch_len()`).
    fn copy_patch(&self, index: usize, out: &mut [f64]);
}

/// Ordered patch windows over a shared source image.
///
/// Patches are materialized on access; the set itself only stores origins.
#[derive(Debug, Clone)]
pub struct PatchSet {
    size: usize,
    stride: usize,
    image: Arc<GrayImage>,
    origins: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn get(&self, index: usize) -> Patch {
        let mut values = vec![0.0; self.size * self.size];
        self.copy_patch(index, &mut values);
        Patch {
            origin: self.origins[index],
            values,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Patch> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    fn with_origins(&self, origins: Vec<(usize, usize)>) -> PatchSet {
        PatchSet {
            size: self.size,
            stride: self.stride,
            image: Arc::clone(&self.image),
            origins,
        }
    }
}

impl PatchSource for PatchSet {
    fn patch_len(&self) -> usize {
        self.size * self.size
    }

    fn len(&self) -> usize {
        self.origins.len()
    }

    fn copy_patch(&self, index: usize, out: &mut [f64]) {
        copy_window(&self.image, self.origins[index], self.size, out);
    }
}

impl PatchSource for [Patch] {
    fn patch_len(&self) -> usize {
        self.first().map_or(0, |p| p.values.len())
    }

    fn len(&self) -> usize {
        <[Patch]>::len(self)
    }

    fn copy_patch(&self, index: usize, out: &mut [f64]) {
        out.copy_from_slice(&self[index].values);
    }
}

impl PatchSource for [Vec<f64>] {
    fn patch_len(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn len(&self) -> usize {
        <[Vec<f64>]>::len(self)
    }

    fn copy_patch(&self, index: usize, out: &mut [f64]) {
        out.copy_from_slice(&self[index]);
    }
}

#[inline]
pub(crate) fn copy_window(img: &GrayImage, origin: (usize, usize), size: usize, out: &mut [f64]) {
    let (r0, c0) = origin;
    for (dr, dst) in out.chunks_exact_mut(size).enumerate() {
        dst.copy_from_slice(&img.row(r0 + dr)[c0..c0 + size]);
    }
}

/// Number of valid window origins along an axis of length `len`.
pub fn positions_along(len: usize, size: usize, stride: usize) -> usize {
    if size > len || stride == 0 {
        0
    } else {
        (len - size) / stride + 1
    }
}

/// Row-by-row overlapping windows at origins `(r*o, c*o)`.
pub fn extract_patches(img: &GrayImage, size: usize, stride: usize) -> Result<PatchSet> {
    extract_patches_shared(Arc::new(img.clone()), size, stride)
}

pub fn extract_patches_shared(image: Arc<GrayImage>, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || size > image.width().min(image.height()) {
        return Err(Error::Dimension(format!(
            "{size}x{size} patches do not fit a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    if stride < 1 {
        return Err(Error::Parameter("patch stride must be at least 1".into()));
    }
    let rows = positions_along(image.height(), size, stride);
    let cols = positions_along(image.width(), size, stride);
    let origins = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect();
    Ok(PatchSet {
        size,
        stride,
        image,
        origins,
    })
}

/// Population variance of a vector.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Keeps patches whose variance is strictly above `contrast_threshold`.
pub fn filter_by_variance(patches: &PatchSet, contrast_threshold: f64) -> Result<PatchSet> {
    if contrast_threshold.is_nan() || contrast_threshold < 0.0 {
        return Err(Error::Parameter("contrast threshold must be >= 0".into()));
    }
    let mut buf = vec![0.0; patches.patch_len()];
    let kept = patches
        .origins
        .iter()
        .enumerate()
        .filter_map(|(i, &origin)| {
            patches.copy_patch(i, &mut buf);
            (variance(&buf) > contrast_threshold).then_some(origin)
        })
        .collect();
    Ok(patches.with_origins(kept))
}

/// Uniform draw in `0..bound` by Lemire's multiply-shift (no rejection step).
#[inline]
fn bounded(rng: &mut SplitMix64, bound: usize) -> usize {
    ((u128::from(rng.next_u64()) * bound as u128) >> 64) as usize
}

/// Fisher-Yates shuffle of `items` driven by SplitMix64.
///
/// For `i` from `n-1` down to 1, swap `i` with `j = (next_u64() * (i+1)) >> 64`.
pub fn shuffle_in_place<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, i + 1);
        items.swap(i, j);
    }
}

pub fn shuffle_patches(patches: &PatchSet, seed: u64) -> PatchSet {
    let mut rng = SplitMix64::seed_from_u64(seed);
    shuffle_patches_with(patches, &mut rng)
}

pub(crate) fn shuffle_patches_with(patches: &PatchSet, rng: &mut SplitMix64) -> PatchSet {
    let mut origins = patches.origins.clone();
    shuffle_in_place(&mut origins, rng);
    patches.with_origins(origins)
}
