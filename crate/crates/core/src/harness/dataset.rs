//! Directory layout:
//!
//! ```text
//! <root>/<fabric>/reference.png
//! <root>/<fabric>/test/<defect-type>_<i>.png
//! <root>/<fabric>/truth/<defect-type>_<i>.png   (absent = defect-free)
//! ```
//!
//! `<root>` may also be a single fabric directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::LabeledImage;
use crate::imaging::load_gray;
use crate::segmentation::BinaryMask;

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub id: String,
    pub image: PathBuf,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricDataset {
    pub name: String,
    pub reference: PathBuf,
    pub cases: Vec<TestCase>,
}

/// `hole_3` → `hole`, `thin_bar_2` → `thin_bar`, `sample` → `sample`.
pub fn defect_type_of(id: &str) -> &str {
    match id.rsplit_once('_') {
        Some((head, tail)) if !head.is_empty() && tail.chars().all(|c| c.is_ascii_digit()) => head,
        _ => id,
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn find_reference(dir: &Path) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("reference.{ext}")))
        .find(|p| p.is_file())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_fabric(dir: &Path, reference: PathBuf) -> Result<FabricDataset> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fabric".into());
    let test_dir = dir.join("test");
    let truth_dir = dir.join("truth");
    let mut cases = Vec::new();
    if test_dir.is_dir() {
        for path in sorted_entries(&test_dir)? {
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let truth = IMAGE_EXTENSIONS
                .iter()
                .map(|ext| truth_dir.join(format!("{id}.{ext}")))
                .find(|p| p.is_file());
            cases.push(TestCase { id, image: path, truth });
        }
    }
    Ok(FabricDataset {
        name,
        reference,
        cases,
    })
}

/// Finds every fabric under `root`, in name order.
pub fn discover(root: impl AsRef<Path>) -> Result<Vec<FabricDataset>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(root, "dataset root is not a directory"));
    }
    if let Some(reference) = find_reference(root) {
        return Ok(vec![load_fabric(root, reference)?]);
    }
    let mut fabrics = Vec::new();
    for dir in sorted_entries(root)? {
        if let Some(reference) = dir.is_dir().then(|| find_reference(&dir)).flatten() {
            fabrics.push(load_fabric(&dir, reference)?);
        }
    }
    if fabrics.is_empty() {
        return Err(Error::io(root, "no fabric directory with a reference image found"));
    }
    Ok(fabrics)
}

impl TestCase {
    /// Loads the image and its mask; a missing mask means defect-free.
    pub fn load(&self) -> Result<LabeledImage> {
        let image = load_gray(&self.image)?;
        let truth = match &self.truth {
            Some(path) => BinaryMask::load(path)?,
            None => BinaryMask::empty(image.width(), image.height()),
        };
        if (truth.width, truth.height) != (image.width(), image.height()) {
            return Err(Error::Dimension(format!(
                "{}: truth mask is {}x{} but the image is {}x{}",
                self.id,
                truth.width,
                truth.height,
                image.width(),
                image.height()
            )));
        }
        Ok(LabeledImage {
            id: self.id.clone(),
            image,
            truth,
        })
    }
}
