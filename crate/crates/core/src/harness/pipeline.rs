use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::config::PipelineConfig;
use super::dataset::{defect_type_of, TestCase};
use crate::anomaly::{calibrate_threshold, score_image, ProbabilityMap};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, fmt_metric, metrics, ConfusionCounts, LabeledImage, MetricsReport};
use crate::feature_bank::{build_model, save_model, BuildReport, Model};
use crate::imaging::{write_atomic, GrayImage};
use crate::segmentation::{segment, BinaryMask};

/// A test image either already in memory or still on disk.
#[derive(Debug, Clone)]
pub enum CaseInput {
    Memory(LabeledImage),
    File(TestCase),
}

impl CaseInput {
    pub fn id(&self) -> &str {
        match self {
            CaseInput::Memory(l) => &l.id,
            CaseInput::File(c) => &c.id,
        }
    }

    fn load(&self) -> Result<std::borrow::Cow<'_, LabeledImage>> {
        match self {
            CaseInput::Memory(l) => Ok(std::borrow::Cow::Borrowed(l)),
            CaseInput::File(c) => c.load().map(std::borrow::Cow::Owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub map: ProbabilityMap,
    pub mask: BinaryMask,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
}

impl ImageResult {
    /// At least one pixel was segmented as defective.
    pub fn flagged(&self) -> bool {
        !self.mask.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub id: String,
    pub defect_type: String,
    /// `Err` holds the reason the image was skipped.
    pub result: std::result::Result<ImageResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub images: usize,
    pub failed: usize,
    pub flagged: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: Model,
    pub report: BuildReport,
    pub anomaly_threshold: f64,
    pub images: Vec<ImageOutcome>,
    /// One row per defect type in name order, then `overall`. Empty when
    /// there were no test images.
    pub summary: Vec<SummaryRow>,
}

pub const OVERALL: &str = "overall";

fn process(model: &Model, threshold: f64, cfg: &PipelineConfig, item: &LabeledImage) -> Result<ImageResult> {
    let pre = model.preprocess(&item.image)?;
    let map = score_image(model, &pre)?.probability_map(threshold, cfg.sigma)?;
    let mask = segment(&map, &cfg.segment)?;
    let counts = confusion(&mask, &item.truth)?;
    Ok(ImageResult {
        metrics: metrics(&counts),
        map,
        mask,
        counts,
    })
}

/// Trains on `reference`, calibrates (unless the config fixes the anomaly
/// threshold), then detects, segments and scores every case in parallel.
///
/// Training or calibration failures abort the run; a failing test image is
/// recorded in its outcome and excluded from the counts.
pub fn run_pipeline(reference: &GrayImage, cases: &[CaseInput], cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let (mut model, report) = build_model(reference, &cfg.train)?;
    let anomaly_threshold = match cfg.anomaly_threshold {
        Some(t) => {
            model.anomaly_threshold = Some(t);
            t
        }
        None => {
            let pre = model.preprocess(reference)?;
            calibrate_threshold(&mut model, &pre)?
        }
    };

    let images: Vec<ImageOutcome> = cases
        .par_iter()
        .map(|case| {
            let result = case
                .load()
                .and_then(|item| process(&model, anomaly_threshold, cfg, &item))
                .map_err(|e| e.to_string());
            ImageOutcome {
                id: case.id().to_string(),
                defect_type: defect_type_of(case.id()).to_string(),
                result,
            }
        })
        .collect();

    let summary = summarize(&images);
    Ok(PipelineOutcome {
        model,
        report,
        anomaly_threshold,
        images,
        summary,
    })
}

pub fn summarize(images: &[ImageOutcome]) -> Vec<SummaryRow> {
    if images.is_empty() {
        return Vec::new();
    }
    let mut groups: BTreeMap<&str, Vec<&ImageOutcome>> = BTreeMap::new();
    for img in images {
        groups.entry(&img.defect_type).or_default().push(img);
    }
    let row = |group: &str, members: &[&ImageOutcome]| {
        let ok: Vec<&ImageResult> = members.iter().filter_map(|m| m.result.as_ref().ok()).collect();
        let counts: ConfusionCounts = ok.iter().map(|r| r.counts).sum();
        SummaryRow {
            group: group.to_string(),
            images: members.len(),
            failed: members.len() - ok.len(),
            flagged: ok.iter().filter(|r| r.flagged()).count(),
            metrics: metrics(&counts),
            counts,
        }
    };
    let mut rows: Vec<SummaryRow> = groups.iter().map(|(g, m)| row(g, m)).collect();
    rows.push(row(OVERALL, &images.iter().collect::<Vec<_>>()));
    rows
}

fn metric_cells(m: &MetricsReport) -> String {
    [m.tpr, m.tnr, m.fnr, m.fpr, m.ppv, m.acc, m.f1]
        .iter()
        .map(|v| fmt_metric(*v))
        .collect::<Vec<_>>()
        .join(",")
}

pub const SUMMARY_CSV_HEADER: &str = "group,images,failed,flagged,tp,tn,fp,fn,tpr,tnr,fnr,fpr,ppv,acc,f1";
pub const IMAGES_CSV_HEADER: &str = "id,defect_type,status,flagged,tp,tn,fp,fn,tpr,tnr,fnr,fpr,ppv,acc,f1";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for r in rows {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.group,
            r.images,
            r.failed,
            r.flagged,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            metric_cells(&r.metrics)
        );
    }
    out
}

pub fn images_csv(images: &[ImageOutcome]) -> String {
    let mut out = format!("{IMAGES_CSV_HEADER}\n");
    for img in images {
        match &img.result {
            Ok(r) => {
                let c = &r.counts;
                let _ = writeln!(
                    out,
                    "{},{},ok,{},{},{},{},{},{}",
                    img.id,
                    img.defect_type,
                    r.flagged(),
                    c.tp,
                    c.tn,
                    c.fp,
                    c.fn_,
                    metric_cells(&r.metrics)
                );
            }
            Err(reason) => {
                let reason = reason.replace([',', '\n'], ";");
                let _ = writeln!(out, "{},{},error: {reason},,,,,,,,,,,,", img.id, img.defect_type);
            }
        }
    }
    out
}

/// Fixed-width table for terminals.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
        "group", "images", "flagged", "DSR", "TPR", "FPR", "PPV", "F1"
    );
    let cell = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.2}"));
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6}{}",
            r.group,
            r.images,
            r.flagged,
            cell(m.acc),
            cell(m.tpr),
            cell(m.fpr),
            cell(m.ppv),
            cell(m.f1),
            if r.failed > 0 { format!("  ({} failed)", r.failed) } else { String::new() }
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |tmp| std::fs::write(tmp, text).map_err(|e| Error::io(path, e)))
}

/// Writes `model.json`, `config.txt`, `maps/<id>.png` (16-bit),
/// `masks/<id>.png`, `images.csv` and `summary.csv` under `dir`.
pub fn write_artifacts(outcome: &PipelineOutcome, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    for sub in ["maps", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    save_model(&outcome.model, dir.join("model.json"))?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    outcome
        .images
        .par_iter()
        .filter_map(|img| img.result.as_ref().ok().map(|r| (img, r)))
        .try_for_each(|(img, r)| {
            r.map.save_png16(dir.join("maps").join(format!("{}.png", img.id)))?;
            r.mask.save(dir.join("masks").join(format!("{}.png", img.id)))
        })?;
    write_text(&dir.join("images.csv"), &images_csv(&outcome.images))?;
    write_text(&dir.join("summary.csv"), &summary_csv(&outcome.summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{synth_fabric, DefectKind, SynthSpec};

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.set("filter_size", "9").unwrap();
        cfg
    }

    #[test]
    fn empty_test_set_succeeds() {
        let (reference, _) = synth_fabric(&SynthSpec::new(8, 64, DefectKind::None)).unwrap();
        let out = run_pipeline(&reference, &[], &small_cfg()).unwrap();
        assert!(out.images.is_empty());
        assert!(out.summary.is_empty());
        assert_eq!(summary_csv(&out.summary), format!("{SUMMARY_CSV_HEADER}\n"));
    }

    #[test]
    fn failing_image_is_recorded_not_fatal() {
        let (reference, _) = synth_fabric(&SynthSpec::new(8, 64, DefectKind::None)).unwrap();
        let broken = CaseInput::File(TestCase {
            id: "hole_1".into(),
            image: "/nonexistent/hole_1.png".into(),
            truth: None,
        });
        let fine = CaseInput::Memory(LabeledImage {
            id: "clean_1".into(),
            truth: BinaryMask::empty(64, 64),
            image: reference.clone(),
        });
        let out = run_pipeline(&reference, &[broken, fine], &small_cfg()).unwrap();
        assert!(out.images[0].result.is_err());
        assert!(out.images[1].result.is_ok());
        let overall = out.summary.last().unwrap();
        assert_eq!((overall.group.as_str(), overall.images, overall.failed), (OVERALL, 2, 1));
        assert_eq!(overall.counts.total(), 64 * 64);
        assert!(images_csv(&out.images).contains("hole_1,hole,error: "));
    }

    #[test]
    fn artifacts_are_deterministic() {
        let (reference, _) = synth_fabric(&SynthSpec::new(8, 64, DefectKind::None)).unwrap();
        let (image, truth) = synth_fabric(&SynthSpec {
            sample_seed: 3,
            ..SynthSpec::new(8, 64, DefectKind::Hole)
        })
        .unwrap();
        let cases = [CaseInput::Memory(LabeledImage { id: "hole_1".into(), image, truth })];
        let cfg = small_cfg();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let out = run_pipeline(&reference, &cases, &cfg).unwrap();
            write_artifacts(&out, &cfg, d.path()).unwrap();
        }
        for f in ["summary.csv", "images.csv", "model.json", "masks/hole_1.png", "maps/hole_1.png"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
}
