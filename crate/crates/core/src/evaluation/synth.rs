//! Synthetic patterned fabric with injected defects and exact truth masks.
//!
//! A fabric is a random `T x T` tile repeated over the image. The tile
//! depends only on `tile_seed`, so a reference image and its test images
//! share one pattern; `sample_seed` drives the tile phase, the defect
//! placement and the sensor noise.

use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::segmentation::BinaryMask;

const TILE_LO: f64 = 40.0;
const TILE_HI: f64 = 215.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DefectKind {
    None,
    /// Horizontal stripe `T` rows high, brightened until it saturates.
    ThinBar,
    /// Same as the thin bar, `2T` rows high.
    ThickBar,
    /// Filled dark disk of radius `0.75 T`.
    Hole,
    /// `2T x 2T` square whose texture is replaced by fresh noise.
    Block,
    /// Dark vertical line `max(2, T/4)` columns wide, full height.
    BrokenEnd,
}

impl DefectKind {
    pub const DEFECTIVE: [DefectKind; 5] = [
        DefectKind::BrokenEnd,
        DefectKind::Hole,
        DefectKind::Block,
        DefectKind::ThickBar,
        DefectKind::ThinBar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::None => "none",
            DefectKind::ThinBar => "thin-bar",
            DefectKind::ThickBar => "thick-bar",
            DefectKind::Hole => "hole",
            DefectKind::Block => "block",
            DefectKind::BrokenEnd => "broken-end",
        }
    }
}

impl std::str::FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => DefectKind::None,
            "bar" | "thin-bar" => DefectKind::ThinBar,
            "thick-bar" => DefectKind::ThickBar,
            "hole" => DefectKind::Hole,
            "block" | "netting" => DefectKind::Block,
            "broken-end" => DefectKind::BrokenEnd,
            other => {
                return Err(Error::Parameter(format!(
                    "unknown defect '{other}' (none|bar|thin-bar|thick-bar|hole|block|broken-end)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub period: usize,
    pub size: usize,
    pub defect: DefectKind,
    /// Standard deviation of additive Gaussian noise, in gray levels.
    pub noise_sigma: f64,
    pub tile_seed: u64,
    pub sample_seed: u64,
}

impl SynthSpec {
    pub fn new(period: usize, size: usize, defect: DefectKind) -> Self {
        SynthSpec {
            period,
            size,
            defect,
            noise_sigma: 2.0,
            tile_seed: 1,
            sample_seed: 1,
        }
    }
}

fn draw(rng: &mut SplitMix64, lo: usize, hi_inclusive: usize) -> usize {
    Uniform::new_inclusive(lo, hi_inclusive)
        .expect("valid range")
        .sample(rng)
}

pub fn synth_fabric(spec: &SynthSpec) -> Result<(GrayImage, BinaryMask)> {
    let (t, n) = (spec.period, spec.size);
    if t < 2 || t > n / 4 {
        return Err(Error::Parameter(format!(
            "tile period {t} must be at least 2 and at most size/4 = {}",
            n / 4
        )));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::Parameter("noise sigma must be >= 0".into()));
    }

    let mut tile_rng = SplitMix64::seed_from_u64(spec.tile_seed);
    let texture = Uniform::new(TILE_LO, TILE_HI).expect("valid range");
    let tile: Vec<f64> = (0..t * t).map(|_| texture.sample(&mut tile_rng)).collect();

    let mut rng = SplitMix64::seed_from_u64(spec.sample_seed.rotate_left(32) ^ spec.tile_seed);
    let (dy, dx) = (draw(&mut rng, 0, t - 1), draw(&mut rng, 0, t - 1));
    let mut pixels: Vec<f64> = (0..n * n)
        .map(|i| tile[((i / n + dy) % t) * t + (i % n + dx) % t])
        .collect();
    let mut truth = vec![false; n * n];

    let horizontal_bar = |height: usize, rng: &mut SplitMix64, px: &mut [f64], truth: &mut [bool]| -> Result<()> {
        if height + 2 * t > n {
            return Err(Error::Parameter("bar does not fit the image".into()));
        }
        let r0 = draw(rng, t, n - t - height);
        for r in r0..r0 + height {
            for c in 0..n {
                px[r * n + c] = (px[r * n + c] + 100.0).min(255.0);
                truth[r * n + c] = true;
            }
        }
        Ok(())
    };

    match spec.defect {
        DefectKind::None => {}
        DefectKind::ThinBar => horizontal_bar(t, &mut rng, &mut pixels, &mut truth)?,
        DefectKind::ThickBar => horizontal_bar(2 * t, &mut rng, &mut pixels, &mut truth)?,
        DefectKind::Hole => {
            let radius = (0.75 * t as f64).max(3.0);
            let margin = radius.ceil() as usize + 1;
            if 2 * margin >= n {
                return Err(Error::Parameter("hole does not fit the image".into()));
            }
            let (cy, cx) = (draw(&mut rng, margin, n - 1 - margin), draw(&mut rng, margin, n - 1 - margin));
            for r in 0..n {
                for c in 0..n {
                    let d2 = (r as f64 - cy as f64).powi(2) + (c as f64 - cx as f64).powi(2);
                    if d2 <= radius * radius {
                        pixels[r * n + c] = 15.0;
                        truth[r * n + c] = true;
                    }
                }
            }
        }
        DefectKind::Block => {
            let side = 2 * t;
            if side + 2 * t > n {
                return Err(Error::Parameter("block does not fit the image".into()));
            }
            let (r0, c0) = (draw(&mut rng, t, n - t - side), draw(&mut rng, t, n - t - side));
            for r in r0..r0 + side {
                for c in c0..c0 + side {
                    pixels[r * n + c] = texture.sample(&mut rng);
                    truth[r * n + c] = true;
                }
            }
        }
        DefectKind::BrokenEnd => {
            let width = (t / 4).max(2);
            let c0 = draw(&mut rng, t, n - t - width);
            for r in 0..n {
                for c in c0..c0 + width {
                    pixels[r * n + c] = 20.0;
                    truth[r * n + c] = true;
                }
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Parameter(format!("noise sigma: {e}")))?;
        for v in pixels.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    pixels.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));

    Ok((GrayImage::new(n, n, pixels)?, BinaryMask::new(n, n, truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defect_free_has_empty_truth() {
        let (_, truth) = synth_fabric(&SynthSpec::new(8, 64, DefectKind::None)).unwrap();
        assert!(truth.is_empty());
    }

    #[test]
    fn bar_mask_is_a_full_stripe() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            ..SynthSpec::new(8, 64, DefectKind::ThinBar)
        };
        let (img, truth) = synth_fabric(&spec).unwrap();
        let rows: Vec<usize> = (0..64).filter(|&r| truth.get(r, 0)).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.last().unwrap() - rows[0], 7);
        for &r in &rows {
            assert!((0..64).all(|c| truth.get(r, c)));
        }
        let clean = synth_fabric(&SynthSpec { defect: DefectKind::None, ..spec.clone() }).unwrap().0;
        // Outside the stripe the texture is untouched.
        for r in (0..64).filter(|r| !rows.contains(r)) {
            assert_eq!(img.row(r), clean.row(r));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::new(16, 128, DefectKind::Hole);
        assert_eq!(synth_fabric(&spec).unwrap(), synth_fabric(&spec).unwrap());
        let other = SynthSpec { sample_seed: 2, ..spec.clone() };
        assert_ne!(synth_fabric(&spec).unwrap().0, synth_fabric(&other).unwrap().0);
    }

    #[test]
    fn shares_tile_across_samples() {
        let a = SynthSpec { noise_sigma: 0.0, ..SynthSpec::new(8, 64, DefectKind::None) };
        let b = SynthSpec { sample_seed: 9, ..a.clone() };
        let (ia, _) = synth_fabric(&a).unwrap();
        let (ib, _) = synth_fabric(&b).unwrap();
        // Same multiset of tile values, possibly shifted in phase.
        let mut va: Vec<i64> = ia.data()[..64].iter().map(|&v| v as i64).collect();
        let row_match = (0..8).any(|r| {
            let mut vb: Vec<i64> = ib.row(r).iter().map(|&v| v as i64).collect();
            va.sort();
            vb.sort();
            va == vb
        });
        assert!(row_match);
    }

    #[test]
    fn rejects_oversized_period() {
        assert!(matches!(
            synth_fabric(&SynthSpec::new(20, 64, DefectKind::None)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn every_defect_kind_marks_pixels() {
        for kind in DefectKind::DEFECTIVE {
            let (_, truth) = synth_fabric(&SynthSpec::new(16, 256, kind)).unwrap();
            assert!(truth.count() > 0, "{kind:?}");
        }
    }
}
