//! JSON-lines annotation and prediction files.
//!
//! Annotation line: `{"image": "abnormal_00000.pgm", "boxes": [{"x":..,"y":..,"w":..,"h":..}], "phi": {...}}`
//! Prediction line: `{"image": "abnormal_00000.pgm", "predictions": [{"x":..,"y":..,"w":..,"h":..,"confidence":..}]}`
//!
//! Image paths are relative to the directory holding the JSONL file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::compositor::{AnnotatedDataset, AnnotatedImage, SimParams};
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::raster::{BoundingBox, GrayImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image: String,
    pub boxes: Vec<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<SimParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image: String,
    pub predictions: Vec<Prediction>,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> std::result::Result<Vec<T>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text).map_err(|m| Error::format(path, m))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Read an annotation file and the images it names.
pub fn load_dataset(path: &Path) -> Result<AnnotatedDataset> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    let dir = base_dir(path);
    let mut items = Vec::with_capacity(records.len());
    for (index, r) in records.into_iter().enumerate() {
        let image = GrayImage::read(&dir.join(&r.image))?;
        if let Some(b) = r.boxes.iter().find(|b| !image.contains(b) || b.area() == 0) {
            return Err(Error::DataShape(format!(
                "box {b:?} does not fit {} ({}x{})",
                r.image,
                image.width(),
                image.height()
            )));
        }
        items.push(AnnotatedImage {
            index,
            image,
            boxes: r.boxes,
            phi: r.phi,
        });
    }
    Ok(AnnotatedDataset { items })
}

/// Read predictions and align them with `images` by name; images without a
/// record get no predictions.
pub fn load_predictions(path: &Path, images: &[String]) -> Result<Vec<Vec<Prediction>>> {
    let records: Vec<PredictionRecord> = read_jsonl(path)?;
    let mut out = vec![Vec::new(); images.len()];
    for r in records {
        let i = images.iter().position(|n| *n == r.image).ok_or_else(|| {
            Error::DataShape(format!("predictions for unknown image {:?}", r.image))
        })?;
        out[i] = r.predictions;
    }
    Ok(out)
}
