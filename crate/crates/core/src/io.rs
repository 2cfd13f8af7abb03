//! File formats: datasets and models as JSON, saliency planes as PGM.
//!
//! Dataset layout:
//!
//! ```text
//! {"n_categories": n,
//!  "images": [{"id", "h", "w", "k",
//!              "features": base64 of little-endian f32, row-major (y, x, k),
//!              "labels": [c], "gt": [{"c", "box": [x0, y0, x1, y1]}],
//!              "proposals": [[x0, y0, x1, y1]]}]}
//! ```
//!
//! `n_categories` is optional on input and defaults to one more than the
//! largest label.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::curriculum::RoundMetrics;
use crate::detector::{CategoryHead, MscModel};
use crate::error::{Error, Result};
use crate::evaluation::GroundTruthObject;
use crate::geometry::{BoundingBox, Label, LabeledMask};
use crate::grid::FeatureGrid;
use crate::saliency::SaliencyMap;
use crate::synthdata::{Dataset, SyntheticScene};
use crate::CategoryId;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_categories: Option<usize>,
    images: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    id: u64,
    h: usize,
    w: usize,
    k: usize,
    features: String,
    labels: Vec<CategoryId>,
    gt: Vec<GtRecord>,
    proposals: Vec<BoundingBox>,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    c: CategoryId,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

fn encode_features(grid: &FeatureGrid) -> Result<String> {
    let mut bytes = Vec::with_capacity(grid.as_slice().len() * 4);
    for &v in grid.as_slice() {
        let f = v as f32;
        if f as f64 != v {
            return Err(Error::Format(format!(
                "feature {v} is not representable as f32"
            )));
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    Ok(STANDARD.encode(bytes))
}

fn decode_features(s: &str, h: usize, w: usize, k: usize) -> Result<FeatureGrid> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Format(format!("features: {e}")))?;
    if bytes.len() != h * w * k * 4 {
        return Err(Error::Format(format!(
            "features: expected {} bytes for {h}x{w}x{k}, got {}",
            h * w * k * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureGrid::from_vec(h, w, k, data)
}

/// Serializes a dataset. Fails if a feature is not exactly an `f32`.
pub fn dataset_to_json(dataset: &Dataset) -> Result<String> {
    let images = dataset
        .images
        .iter()
        .map(|s| {
            Ok(ImageRecord {
                id: s.id,
                h: s.height(),
                w: s.width(),
                k: s.features.channels(),
                features: encode_features(&s.features)?,
                labels: s.labels.clone(),
                gt: s
                    .gt
                    .iter()
                    .map(|g| GtRecord {
                        c: g.category,
                        bbox: g.bbox,
                    })
                    .collect(),
                proposals: s.proposals.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::to_string(&DatasetFile {
        n_categories: Some(dataset.n_categories),
        images,
    })?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text)?;
    let images = file
        .images
        .into_iter()
        .map(|r| {
            let features = decode_features(&r.features, r.h, r.w, r.k)?;
            Ok(SyntheticScene {
                id: r.id,
                features,
                labels: r.labels,
                gt: r
                    .gt
                    .into_iter()
                    .map(|g| GroundTruthObject {
                        image_id: r.id,
                        category: g.c,
                        bbox: g.bbox,
                    })
                    .collect(),
                proposals: r.proposals,
                planted: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let inferred = images
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .max()
        .map_or(0, |c| c + 1);
    let dataset = Dataset {
        n_categories: file.n_categories.unwrap_or(inferred),
        images,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_json(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    pooled_size: usize,
    channels: usize,
    categories: BTreeMap<CategoryId, CategoryHead>,
}

/// Model layout: `{"pooled_size", "channels", "categories": {"0": head, ...}}`
/// where each head holds `cls_weights`, `cls_bias` and `sal_weights`, with
/// weights indexed `(cell_y * P + cell_x) * K + k`.
pub fn model_to_json(model: &MscModel) -> Result<String> {
    Ok(serde_json::to_string(&ModelFile {
        pooled_size: model.pooled_size(),
        channels: model.channels(),
        categories: model.heads().iter().cloned().enumerate().collect(),
    })?)
}

/// Parses a model; category keys must be exactly `0..n`.
pub fn model_from_json(text: &str) -> Result<MscModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if let Some((i, c)) = file.categories.keys().enumerate().find(|(i, c)| i != *c) {
        return Err(Error::Format(format!(
            "model categories: expected key {i}, got {c}"
        )));
    }
    MscModel::from_heads(
        file.pooled_size,
        file.channels,
        file.categories.into_values().collect(),
    )
}

pub fn write_model(path: &Path, model: &MscModel) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<MscModel> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Per-round metrics as CSV with header
/// `round,n_selected,corloc_selected,corloc_all,mean_S`. Floats use the
/// shortest representation that round-trips; undefined values print `NaN`.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,n_selected,corloc_selected,corloc_all,mean_S\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.round, m.n_selected, m.corloc_selected, m.corloc_all, m.mean_s
        ));
    }
    out
}

/// Binary PGM (P5, maxval 255) with each value mapped to `round(255 v)`,
/// clamped to `[0, 255]`.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_saliency_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&pgm_bytes(map.width(), map.height(), map.values()))?;
    Ok(())
}

/// Writes a label mask as PGM: unlabeled 0, background 128, objects from 255
/// downwards in steps of 32 per category.
pub fn write_mask_pgm(path: &Path, mask: &LabeledMask) -> Result<()> {
    let values: Vec<f64> = mask
        .labels()
        .iter()
        .map(|l| match l {
            Label::Unlabeled => 0.0,
            Label::Background => 128.0 / 255.0,
            Label::Object(c) => (255.0 - 32.0 * (*c % 4) as f64) / 255.0,
        })
        .collect();
    let mut f = fs::File::create(path)?;
    f.write_all(&pgm_bytes(mask.width(), mask.height(), &values))?;
    Ok(())
}
