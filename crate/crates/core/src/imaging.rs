//! Grayscale image carrier, file I/O, preprocessing and the correlation
//! primitives shared by training and detection.
//!
//! Pixels are addressed as `(row, col)` and stored row-major. All borders use
//! whole-sample symmetric reflection: index `-1` reads index `1`, index `n`
//! reads `n - 2`. The edge pixel itself is never repeated.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, Luma};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major matrix of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }
}

/// Square correlation kernel with odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::Parameter(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::Dimension(format!(
                "{size}x{size} kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Kernel { size, weights })
    }

    /// Kernel with a single 1 at the center.
    pub fn delta(size: usize) -> Result<Self> {
        let mut weights = vec![0.0; size * size];
        if size % 2 == 1 {
            weights[size * size / 2] = 1.0;
        }
        Self::new(size, weights)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

/// Whole-sample symmetric reflection of a possibly out-of-range index.
///
/// Valid for offsets up to `n - 1` beyond either edge.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Loads an 8-bit grayscale PNG or PGM. Colour images are reduced by the
/// unweighted mean of their RGB channels; alpha is ignored.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|e| Error::io(path, e))?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = match dynamic {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| p.0.iter().map(|&c| f64::from(c)).sum::<f64>() / 3.0)
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| p.0[..3].iter().map(|&c| f64::from(c)).sum::<f64>() / 3.0)
            .collect(),
        other => {
            return Err(Error::io(
                path,
                format!("unsupported pixel format {:?}; expected 8-bit samples", other.color()),
            ))
        }
    };
    GrayImage::new(width, height, data)
}

/// Writes intensities rounded and clamped to `[0, 255]`. The container is
/// chosen from the extension (`.png`, `.pgm`).
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .ok_or_else(|| Error::io(path, "buffer size mismatch"))?;
    let format = image_format(path)?;
    write_atomic(path, |tmp| {
        if format == image::ImageFormat::Pnm {
            let file = std::fs::File::create(tmp).map_err(|e| Error::io(path, e))?;
            let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            buf.write_with_encoder(encoder).map_err(|e| Error::io(path, e))
        } else {
            buf.save_with_format(tmp, format).map_err(|e| Error::io(path, e))
        }
    })
}

/// Writes values in `[0, 1]` as a 16-bit grayscale PNG, `round(v * 65535)`.
pub fn save_unit_png16(
    width: usize,
    height: usize,
    values: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw)
            .ok_or_else(|| Error::io(path, "buffer size mismatch"))?;
    write_atomic(path, |tmp| {
        buf.save_with_format(tmp, image::ImageFormat::Png)
            .map_err(|e| Error::io(path, e))
    })
}

/// Reads a map stored by [`save_unit_png16`] (or an 8-bit image, scaled by
/// 1/255) back into `[0, 1]` values.
pub fn load_unit_image(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|e| Error::io(path, e))?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let values = match dynamic {
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        other => {
            return Err(Error::io(
                path,
                format!("unsupported pixel format {:?} for a probability map", other.color()),
            ))
        }
    };
    Ok((width, height, values))
}

fn image_format(path: &Path) -> Result<image::ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(image::ImageFormat::Png),
        Some("pgm") | Some("pnm") => Ok(image::ImageFormat::Pnm),
        _ => Err(Error::io(path, "unsupported extension; use .png or .pgm")),
    }
}

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never observes a half-written artifact.
pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    // Keep the real extension last so encoders that sniff it still work.
    let tmp = path.with_file_name(format!(".tmp-{}-{file_name}", std::process::id()));
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Classic 256-bin CDF equalization:
/// `v -> round((cdf(v) - cdf_min) / (N - cdf_min) * 255)`.
///
/// Intensities are binned by rounding. A constant image has no spread to
/// redistribute and is returned unchanged.
pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    let bin = |v: f64| v.round().clamp(0.0, 255.0) as usize;
    let mut hist = [0usize; 256];
    for &v in &img.data {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (level, count) in hist.iter().enumerate() {
        acc += count;
        cdf[level] = acc;
    }
    let total = img.data.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if total == cdf_min {
        return img.clone();
    }
    let denom = (total - cdf_min) as f64;
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&c| ((c.saturating_sub(cdf_min)) as f64 / denom * 255.0).round())
        .collect();
    img.map(|v| lut[bin(v)])
}

/// Scales to `[0, 1]` by dividing by 255, then removes the mean and divides
/// by the population standard deviation.
pub fn standardize(img: &GrayImage) -> Result<GrayImage> {
    let first = img.data[0];
    let scaled = img.map(|v| v / 255.0);
    let mean = scaled.mean();
    let sigma = scaled.std_dev();
    if img.data.iter().all(|&v| v == first) || !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Degenerate(
            "image has zero intensity variance and cannot be standardized".into(),
        ));
    }
    Ok(scaled.map(|v| (v - mean) / sigma))
}

/// Full preprocessing chain applied to both training and test images:
/// optional equalization, then /255 and standardization.
pub fn preprocess(img: &GrayImage, equalize: bool) -> Result<GrayImage> {
    if equalize {
        standardize(&equalize_histogram(img))
    } else {
        standardize(img)
    }
}

/// Same-size cross-correlation (no kernel flip) with symmetric borders.
pub fn cross_correlate(img: &GrayImage, kernel: &Kernel) -> Result<GrayImage> {
    let p = kernel.size;
    if p > img.width.min(img.height) {
        return Err(Error::Dimension(format!(
            "{p}x{p} kernel does not fit a {}x{} image",
            img.width, img.height
        )));
    }
    let half = p / 2;
    let padded = pad_symmetric(img, half);
    let pw = img.width + 2 * half;
    let mut out = vec![0.0; img.width * img.height];
    out.par_chunks_mut(img.width)
        .enumerate()
        .for_each(|(r, out_row)| {
            for (c, out_px) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for kr in 0..p {
                    let src = &padded[(r + kr) * pw + c..(r + kr) * pw + c + p];
                    let krow = &kernel.weights[kr * p..(kr + 1) * p];
                    for (a, b) in src.iter().zip(krow) {
                        acc += a * b;
                    }
                }
                *out_px = acc;
            }
        });
    GrayImage::new(img.width, img.height, out)
}

/// Copies `img` into a buffer extended by `margin` reflected pixels per side.
pub(crate) fn pad_symmetric(img: &GrayImage, margin: usize) -> Vec<f64> {
    let pw = img.width + 2 * margin;
    let ph = img.height + 2 * margin;
    let mut padded = Vec::with_capacity(pw * ph);
    for pr in 0..ph {
        let r = reflect_index(pr as isize - margin as isize, img.height);
        for pc in 0..pw {
            let c = reflect_index(pc as isize - margin as isize, img.width);
            padded.push(img.get(r, c));
        }
    }
    padded
}

/// Keeps rows and columns `0, s, 2s, ...`.
pub fn downsample(img: &GrayImage, stride: usize) -> Result<GrayImage> {
    if stride < 1 {
        return Err(Error::Parameter("downsampling stride must be at least 1".into()));
    }
    let width = img.width.div_ceil(stride);
    let height = img.height.div_ceil(stride);
    GrayImage::from_fn(width, height, |r, c| img.get(r * stride, c * stride))
}

/// Sampled 2D Gaussian `exp(-(i^2 + j^2) / (2 sigma^2)) / (2 pi sigma^2)` on
/// the integer grid centred on the kernel, renormalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size.is_multiple_of(2) {
        return Err(Error::Parameter(format!("Gaussian kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("Gaussian sigma must be positive, got {sigma}")));
    }
    let half = (size / 2) as isize;
    let two_var = 2.0 * sigma * sigma;
    let norm = 1.0 / (std::f64::consts::PI * two_var);
    let mut weights = Vec::with_capacity(size * size);
    for i in -half..=half {
        for j in -half..=half {
            let d2 = (i * i + j * j) as f64;
            weights.push(norm * (-d2 / two_var).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Kernel::new(size, weights)
}
