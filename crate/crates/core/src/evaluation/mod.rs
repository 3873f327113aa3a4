//! Pixel-level scoring of predicted masks against ground truth.

mod sweep;
mod synth;

pub use sweep::{parse_threshold_range, save_curve_csv, sweep_curves, write_curve_csv, CURVE_CSV_HEADER, Binarization, CurveRow, LabeledImage};
pub use synth::{synth_fabric, DefectKind, SynthSpec};

use crate::error::{Error, Result};
use crate::segmentation::BinaryMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

/// The seven ratios; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricsReport {
    pub fn recall(&self) -> Option<f64> {
        self.tpr
    }

    pub fn precision(&self) -> Option<f64> {
        self.ppv
    }

    /// Detection success rate, i.e. pixel accuracy.
    pub fn dsr(&self) -> Option<f64> {
        self.acc
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.values.iter().zip(&truth.values) {
        match (t, p) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    let tpr = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let f1 = match (ppv, tpr) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricsReport {
        tpr,
        tnr: ratio(c.tn, c.fp + c.tn),
        fnr: ratio(c.fn_, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        ppv,
        acc: ratio(c.tp + c.tn, c.total()),
        f1,
    }
}

/// `NA` for undefined values, otherwise six decimals.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::new(w, bits.len() / w, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let bits: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let m = mask(&bits, 10);
        let c = confusion(&m, &m).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 10, tn: 90, fp: 0, fn_: 0 });
    }

    #[test]
    fn inverted_prediction() {
        let truth = mask(&[1, 0, 0, 1, 1, 0], 3);
        let pred = mask(&[0, 1, 1, 0, 0, 1], 3);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn hand_three_by_three() {
        let truth = mask(&[1, 1, 0, 0, 1, 0, 0, 0, 0], 3);
        let pred = mask(&[1, 0, 0, 1, 1, 0, 0, 0, 1], 3);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, tn: 4, fp: 2, fn_: 1 });
    }

    #[test]
    fn size_mismatch() {
        assert!(confusion(&mask(&[0, 1], 2), &mask(&[0, 1], 1)).is_err());
    }

    #[test]
    fn recall_half() {
        let m = metrics(&ConfusionCounts { tp: 50, tn: 0, fp: 0, fn_: 50 });
        assert_eq!(m.recall(), Some(0.5));
    }

    #[test]
    fn defect_free_row_is_not_applicable() {
        let m = metrics(&ConfusionCounts { tp: 0, tn: 1000, fp: 0, fn_: 0 });
        assert_eq!(m.acc, Some(1.0));
        assert_eq!(m.tpr, None);
        assert_eq!(m.ppv, None);
        assert_eq!(m.f1, None);
        assert_eq!(fmt_metric(m.f1), "NA");
    }

    #[test]
    fn f1_from_reported_recall_and_precision() {
        let (r, p) = (0.85f64, 0.71f64);
        let f1 = 2.0 * p * r / (p + r);
        assert!((f1 - 0.7737).abs() < 1e-4);
        assert_eq!(format!("{f1:.2}"), "0.77");
    }
}
