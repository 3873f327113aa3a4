//! Binarization of a probability map by maximum two-dimensional entropy,
//! followed by morphological opening.

use crate::anomaly::ProbabilityMap;
use crate::error::{Error, Result};
use crate::imaging::{reflect_index, GrayImage};

pub const DEFAULT_LEVELS: usize = 256;
pub const DEFAULT_NEIGHBORHOOD: usize = 3;
pub const DEFAULT_SE: usize = 3;

/// Candidates closer than this count as ties (lowest `(s, t)` wins).
const ENTROPY_TIE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            values,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            values: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Reads a mask from an 8-bit image; pixels above 127 are set.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let img = crate::imaging::load_gray(path)?;
        Ok(Self::from_image(&img, 127.0))
    }

    pub fn from_image(img: &GrayImage, cut: f64) -> Self {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            values: img.data().iter().map(|&v| v > cut).collect(),
        }
    }

    /// Set pixels become 255, clear pixels 0.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| if v { 255.0 } else { 0.0 }).collect(),
        )
        .expect("mask dimensions are valid")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::imaging::save_gray(&self.to_image(), path)
    }
}

/// `v -> floor(v (L-1) + 0.5)`, giving integer levels `0..L`.
pub fn quantize_map(map: &ProbabilityMap, levels: usize) -> Result<GrayImage> {
    check_levels(levels)?;
    let top = (levels - 1) as f64;
    GrayImage::new(
        map.width,
        map.height,
        map.values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * top + 0.5).floor())
            .collect(),
    )
}

fn check_levels(levels: usize) -> Result<()> {
    if !(2..=256).contains(&levels) {
        return Err(Error::Parameter(format!("level count must be in [2, 256], got {levels}")));
    }
    Ok(())
}

/// Mean level over the `n x n` window (symmetric borders), rounded half up.
pub fn neighborhood_mean(img: &GrayImage, n: usize) -> Result<GrayImage> {
    if n.is_multiple_of(2) {
        return Err(Error::Parameter(format!("neighbourhood size must be odd, got {n}")));
    }
    if n > img.width().min(img.height()) {
        return Err(Error::Dimension(format!(
            "{n}x{n} neighbourhood does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let half = (n / 2) as isize;
    let area = (n * n) as i64;
    let levels: Vec<i64> = img.data().iter().map(|&v| v.round() as i64).collect();
    let (w, h) = (img.width(), img.height());
    GrayImage::from_fn(w, h, |r, c| {
        let mut sum = 0i64;
        for dr in -half..=half {
            let rr = reflect_index(r as isize + dr, h);
            for dc in -half..=half {
                let cc = reflect_index(c as isize + dc, w);
                sum += levels[rr * w + cc];
            }
        }
        // round(sum / area) with halves going up, in integer arithmetic.
        ((2 * sum + area).div_euclid(2 * area)) as f64
    })
}

/// Joint histogram of (level, neighbourhood level) counts, `L x L` row-major.
pub fn joint_histogram(img: &GrayImage, mean_img: &GrayImage, levels: usize) -> Result<Vec<u64>> {
    check_levels(levels)?;
    if img.width() != mean_img.width() || img.height() != mean_img.height() {
        return Err(Error::Dimension("image and mean image differ in size".into()));
    }
    let mut hist = vec![0u64; levels * levels];
    for (&a, &b) in img.data().iter().zip(mean_img.data()) {
        let (i, j) = (a as usize, b as usize);
        if a < 0.0 || b < 0.0 || i >= levels || j >= levels {
            return Err(Error::Parameter(format!(
                "pixel levels ({a}, {b}) fall outside 0..{levels}"
            )));
        }
        hist[i * levels + j] += 1;
    }
    Ok(hist)
}

#[inline]
fn c_log_c(c: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

/// Threshold pair `(s*, t*)` maximizing `H_B + H_A`, where the background is
/// cells `i < s, j < t` and the anomaly is cells `i >= s, j >= t`, each
/// entropy taken over its own renormalized mass. Candidates with an empty
/// region are skipped.
///
/// Uses `H = ln n - (sum c ln c) / n` for a region holding `n` pixels with
/// cell counts `c`, and 2D prefix sums, so the scan is `O(L^2)`.
pub fn entropy_threshold_2d(img: &GrayImage, mean_img: &GrayImage, levels: usize) -> Result<(usize, usize)> {
    let hist = joint_histogram(img, mean_img, levels)?;
    let l = levels;
    // Prefix over the lower-left block [0, s) x [0, t).
    let stride = l + 1;
    let mut pre_n = vec![0u64; stride * stride];
    let mut pre_e = vec![0.0f64; stride * stride];
    for i in 0..l {
        let mut row_n = 0u64;
        let mut row_e = 0.0f64;
        for j in 0..l {
            let c = hist[i * l + j];
            row_n += c;
            row_e += c_log_c(c);
            pre_n[(i + 1) * stride + j + 1] = pre_n[i * stride + j + 1] + row_n;
            pre_e[(i + 1) * stride + j + 1] = pre_e[i * stride + j + 1] + row_e;
        }
    }
    // Suffix over the upper-right block [s, L) x [t, L).
    let mut suf_n = vec![0u64; stride * stride];
    let mut suf_e = vec![0.0f64; stride * stride];
    for i in (0..l).rev() {
        let mut row_n = 0u64;
        let mut row_e = 0.0f64;
        for j in (0..l).rev() {
            let c = hist[i * l + j];
            row_n += c;
            row_e += c_log_c(c);
            suf_n[i * stride + j] = suf_n[(i + 1) * stride + j] + row_n;
            suf_e[i * stride + j] = suf_e[(i + 1) * stride + j] + row_e;
        }
    }

    let mut best: Option<(f64, usize, usize)> = None;
    for s in 0..=l {
        for t in 0..=l {
            let n_b = pre_n[s * stride + t];
            let n_a = suf_n[s * stride + t];
            if n_b == 0 || n_a == 0 {
                continue;
            }
            let h_b = region_entropy(n_b, pre_e[s * stride + t]);
            let h_a = region_entropy(n_a, suf_e[s * stride + t]);
            let total = h_b + h_a;
            if best.is_none_or(|(b, _, _)| total > b + ENTROPY_TIE_EPS) {
                best = Some((total, s, t));
            }
        }
    }
    best.map(|(_, s, t)| (s, t)).ok_or_else(|| {
        Error::Degenerate("no threshold pair separates the map into two non-empty regions".into())
    })
}

#[inline]
fn region_entropy(n: u64, sum_c_log_c: f64) -> f64 {
    let n = n as f64;
    n.ln() - sum_c_log_c / n
}

/// Sets pixels with `I >= s*` and `mean >= t*`.
pub fn binarize(img: &GrayImage, s: usize, t: usize, mean_img: &GrayImage) -> Result<BinaryMask> {
    if img.width() != mean_img.width() || img.height() != mean_img.height() {
        return Err(Error::Dimension("image and mean image differ in size".into()));
    }
    let (s, t) = (s as f64, t as f64);
    BinaryMask::new(
        img.width(),
        img.height(),
        img.data()
            .iter()
            .zip(mean_img.data())
            .map(|(&i, &m)| i >= s && m >= t)
            .collect(),
    )
}

fn min_max_filter(mask: &BinaryMask, se: usize, erode: bool) -> BinaryMask {
    let half = se / 2;
    let (w, h) = (mask.width, mask.height);
    // Separable square window; out-of-image samples are ignored.
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let (pos, len) = if horizontal { (c, w) } else { (r, h) };
                let lo = pos.saturating_sub(half);
                let hi = (pos + half).min(len - 1);
                let mut it = (lo..=hi).map(|k| {
                    if horizontal {
                        src[r * w + k]
                    } else {
                        src[k * w + c]
                    }
                });
                out[r * w + c] = if erode { it.all(|v| v) } else { it.any(|v| v) };
            }
        }
        out
    };
    let rows = pass(&mask.values, true);
    BinaryMask {
        width: w,
        height: h,
        values: pass(&rows, false),
    }
}

pub fn erode(mask: &BinaryMask, se: usize) -> BinaryMask {
    min_max_filter(mask, se, true)
}

pub fn dilate(mask: &BinaryMask, se: usize) -> BinaryMask {
    min_max_filter(mask, se, false)
}

/// Erosion then dilation with an `se x se` square.
pub fn opening(mask: &BinaryMask, se: usize) -> Result<BinaryMask> {
    if se.is_multiple_of(2) {
        return Err(Error::Parameter(format!("structuring element size must be odd, got {se}")));
    }
    Ok(dilate(&erode(mask, se), se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentParams {
    pub levels: usize,
    pub neighborhood: usize,
    pub se: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            levels: DEFAULT_LEVELS,
            neighborhood: DEFAULT_NEIGHBORHOOD,
            se: DEFAULT_SE,
        }
    }
}

/// Quantize, threshold by 2D maximum entropy, binarize and open. A map with
/// no separable threshold pair (e.g. all zero) yields an empty mask.
pub fn segment(map: &ProbabilityMap, params: &SegmentParams) -> Result<BinaryMask> {
    let levels = quantize_map(map, params.levels)?;
    let means = neighborhood_mean(&levels, params.neighborhood)?;
    let mask = match entropy_threshold_2d(&levels, &means, params.levels) {
        Ok((s, t)) => binarize(&levels, s, t, &means)?,
        Err(Error::Degenerate(_)) => BinaryMask::empty(map.width, map.height),
        Err(e) => return Err(e),
    };
    opening(&mask, params.se)
}

/// Fixed-level binarization: pixels strictly above `level`.
pub fn threshold_fixed(map: &ProbabilityMap, level: f64) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        values: map.values.iter().map(|&v| v > level).collect(),
    }
}
