//! Localization metrics: CorLoc, VOC average precision and a taxonomy of
//! mis-localizations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::CategoryId;

/// Minimum IoU for a predicted box to count as a correct localization.
pub const IOU_THRESHOLD: f64 = 0.5;
/// Fraction of one box that must lie inside the other for the
/// too-large / too-small classes.
pub const CONTAINMENT_THRESHOLD: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: BoundingBox,
}

/// The most confident box for an existing category of an image; `None`
/// when the localizer produced nothing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocPrediction {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: Option<BoundingBox>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApVariant {
    /// Mean of the interpolated precision at recall 0.0, 0.1, ..., 1.0.
    #[default]
    Voc07,
    /// Area under the monotone precision envelope.
    Area,
}

/// Ground truth boxes indexed by (image, category).
#[derive(Clone, Debug, Default)]
pub struct GroundTruthIndex {
    boxes: HashMap<(u64, CategoryId), Vec<BoundingBox>>,
}

impl GroundTruthIndex {
    pub fn new(gt: &[GroundTruthObject]) -> Self {
        let mut boxes: HashMap<(u64, CategoryId), Vec<BoundingBox>> = HashMap::new();
        for g in gt {
            boxes
                .entry((g.image_id, g.category))
                .or_default()
                .push(g.bbox);
        }
        Self { boxes }
    }

    pub fn get(&self, image_id: u64, category: CategoryId) -> &[BoundingBox] {
        self.boxes
            .get(&(image_id, category))
            .map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, category: CategoryId) -> usize {
        self.boxes
            .iter()
            .filter(|((_, c), _)| *c == category)
            .map(|(_, v)| v.len())
            .sum()
    }
}

/// Percentage of predictions that overlap a same-category ground truth box
/// of their image with IoU >= 0.5. Missing boxes count as misses.
pub fn corloc(predictions: &[LocPrediction], gt: &[GroundTruthObject]) -> Result<f64> {
    corloc_indexed(predictions, &GroundTruthIndex::new(gt))
}

pub fn corloc_indexed(predictions: &[LocPrediction], gt: &GroundTruthIndex) -> Result<f64> {
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in predictions {
        let boxes = gt.get(p.image_id, p.category);
        if boxes.is_empty() {
            return Err(Error::Config(format!(
                "prediction for category {} on image {} which has no such object",
                p.category, p.image_id
            )));
        }
        if let Some(b) = &p.bbox {
            if boxes.iter().any(|g| iou(b, g) >= IOU_THRESHOLD) {
                hits += 1;
            }
        }
    }
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Average precision of category `c`; `NaN` when `c` has no ground truth.
///
/// Detections are ranked by descending score (stable on ties). Each one is
/// matched to the ground truth box of its image with the highest IoU; it is
/// a true positive if that IoU is at least 0.5 and the box was not already
/// claimed by a higher-ranked detection.
pub fn average_precision(
    detections: &[ScoredDetection],
    gt: &[GroundTruthObject],
    c: CategoryId,
    variant: ApVariant,
) -> f64 {
    average_precision_indexed(detections, &GroundTruthIndex::new(gt), c, variant)
}

pub fn average_precision_indexed(
    detections: &[ScoredDetection],
    gt: &GroundTruthIndex,
    c: CategoryId,
    variant: ApVariant,
) -> f64 {
    let n_pos = gt.count(c);
    if n_pos == 0 {
        return f64::NAN;
    }
    let mut ranked: Vec<&ScoredDetection> = detections.iter().filter(|d| d.category == c).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut claimed: HashMap<(u64, usize), ()> = HashMap::new();
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (rank, d) in ranked.iter().enumerate() {
        let best = gt
            .get(d.image_id, c)
            .iter()
            .enumerate()
            .map(|(j, g)| (j, iou(&d.bbox, g)))
            .fold(None, |acc: Option<(usize, f64)>, (j, o)| match acc {
                Some((_, bo)) if bo >= o => acc,
                _ => Some((j, o)),
            });
        if let Some((j, o)) = best {
            if o >= IOU_THRESHOLD && claimed.insert((d.image_id, j), ()).is_none() {
                tp += 1;
            }
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n_pos as f64);
    }
    match variant {
        ApVariant::Voc07 => {
            (0..=10)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    precision
                        .iter()
                        .zip(&recall)
                        .filter(|(_, &r)| r >= t)
                        .map(|(&p, _)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApVariant::Area => {
            let mut envelope = precision.clone();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (p, &r) in envelope.iter().zip(&recall) {
                ap += (r - prev_recall) * p;
                prev_recall = r;
            }
            ap
        }
    }
}

/// Arithmetic mean of the defined (non-NaN) APs; `NaN` if there are none.
pub fn mean_average_precision(aps: &[f64]) -> f64 {
    let defined: Vec<f64> = aps.iter().copied().filter(|a| !a.is_nan()).collect();
    if defined.is_empty() {
        return f64::NAN;
    }
    defined.iter().sum::<f64>() / defined.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorType {
    TooLarge,
    TooSmall,
    Other,
    Correct,
}

impl ErrorType {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::TooLarge => "too_large",
            ErrorType::TooSmall => "too_small",
            ErrorType::Other => "other",
            ErrorType::Correct => "correct",
        }
    }
}

/// Classifies a prediction against the ground truth boxes of its category.
///
/// Correct at IoU >= 0.5. Otherwise, against the highest-IoU box `g`: too
/// large if the prediction covers at least 90% of `g` and is bigger, too
/// small if `g` covers at least 90% of the prediction and is bigger, other
/// in every remaining case (including no ground truth at all).
pub fn classify_error(pred: &BoundingBox, gt_boxes: &[BoundingBox]) -> ErrorType {
    let Some((g, best)) = gt_boxes.iter().map(|g| (g, iou(pred, g))).fold(
        None,
        |acc: Option<(&BoundingBox, f64)>, (g, o)| match acc {
            Some((_, bo)) if bo >= o => acc,
            _ => Some((g, o)),
        },
    ) else {
        return ErrorType::Other;
    };
    if best >= IOU_THRESHOLD {
        return ErrorType::Correct;
    }
    let inter = pred.intersection_area(g) as f64;
    let (ap, ag) = (pred.area(), g.area());
    if inter >= CONTAINMENT_THRESHOLD * ag as f64 && ap > ag {
        ErrorType::TooLarge
    } else if inter >= CONTAINMENT_THRESHOLD * ap as f64 && ap < ag {
        ErrorType::TooSmall
    } else {
        ErrorType::Other
    }
}

/// Counts of each [`ErrorType`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub too_large: usize,
    pub too_small: usize,
    pub other: usize,
    pub correct: usize,
}

impl ErrorHistogram {
    pub fn add(&mut self, e: ErrorType) {
        match e {
            ErrorType::TooLarge => self.too_large += 1,
            ErrorType::TooSmall => self.too_small += 1,
            ErrorType::Other => self.other += 1,
            ErrorType::Correct => self.correct += 1,
        }
    }

    /// Histogram of the predictions; a missing box counts as `Other`.
    pub fn from_predictions(predictions: &[LocPrediction], gt: &GroundTruthIndex) -> Self {
        let mut h = Self::default();
        for p in predictions {
            let e = match &p.bbox {
                Some(b) => classify_error(b, gt.get(p.image_id, p.category)),
                None => ErrorType::Other,
            };
            h.add(e);
        }
        h
    }

    pub fn mislocalized(&self) -> usize {
        self.too_large + self.too_small + self.other
    }

    /// Most frequent error among the mis-localized predictions. Ties resolve
    /// in the order too large, too small, other.
    pub fn modal_error(&self) -> Option<ErrorType> {
        if self.mislocalized() == 0 {
            return None;
        }
        let mut best = (ErrorType::TooLarge, self.too_large);
        for (e, n) in [
            (ErrorType::TooSmall, self.too_small),
            (ErrorType::Other, self.other),
        ] {
            if n > best.1 {
                best = (e, n);
            }
        }
        Some(best.0)
    }
}
