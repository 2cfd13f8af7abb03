//! Segmentation seeds from thresholded saliency.

use crate::error::{mismatch, Result};
use crate::geometry::{Label, LabeledMask};
use crate::saliency::SaliencyMap;
use crate::CategoryId;

pub const DEFAULT_OBJECT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_BACKGROUND_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MIN_BACKGROUND_FRACTION: f64 = 0.10;
pub const BACKGROUND_THRESHOLD_STEP: f64 = 0.05;

/// Seed labels: `Object(c)` pixels come from an object plane, `Background`
/// pixels from the background plane, everything else is `Unlabeled`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedMask(LabeledMask);

impl SeedMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(LabeledMask::new(width, height, Label::Unlabeled))
    }

    pub fn from_mask(mask: LabeledMask) -> Self {
        Self(mask)
    }

    pub fn mask(&self) -> &LabeledMask {
        &self.0
    }

    pub fn into_mask(self) -> LabeledMask {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn object_pixels(&self) -> usize {
        self.0
            .labels()
            .iter()
            .filter(|l| matches!(l, Label::Object(_)))
            .count()
    }

    pub fn background_pixels(&self) -> usize {
        self.0.count(Label::Background)
    }
}

/// Seeds every pixel whose saliency for an existing category reaches
/// `threshold`. When several categories qualify the most salient one wins,
/// with equal values going to the category listed first.
pub fn threshold_object_seeds(
    maps: &[(CategoryId, &SaliencyMap)],
    threshold: f64,
) -> Result<SeedMask> {
    let Some(&(_, first)) = maps.first() else {
        return Ok(SeedMask::empty(0, 0));
    };
    let (h, w) = (first.height(), first.width());
    for (_, m) in maps {
        if (m.height(), m.width()) != (h, w) {
            return Err(mismatch(
                format!("{w}x{h}"),
                format!("{}x{}", m.width(), m.height()),
            ));
        }
    }
    let mut mask = LabeledMask::new(w, h, Label::Unlabeled);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(CategoryId, f64)> = None;
            for &(c, m) in maps {
                let v = m.get(x, y);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            if let Some((c, _)) = best {
                mask.set(x, y, Label::Object(c));
            }
        }
    }
    Ok(SeedMask(mask))
}

/// Background seeds from the background plane.
///
/// The threshold starts at `initial` and drops by
/// [`BACKGROUND_THRESHOLD_STEP`] until the seeds cover at least
/// `min_fraction` of the image, bottoming out at zero where every pixel
/// qualifies. Returns the seeds and the threshold that was used.
pub fn adaptive_background_seeds(
    background: &SaliencyMap,
    initial: f64,
    min_fraction: f64,
) -> (SeedMask, f64) {
    let n = background.values().len();
    let needed = (min_fraction * n as f64).ceil() as usize;
    let mut step = 0u32;
    let threshold = loop {
        let t = snap(initial - BACKGROUND_THRESHOLD_STEP * step as f64).max(0.0);
        let covered = background.values().iter().filter(|&&v| v >= t).count();
        if covered >= needed || t <= 0.0 {
            break t;
        }
        step += 1;
    };
    let labels = background
        .values()
        .iter()
        .map(|&v| {
            if v >= threshold {
                Label::Background
            } else {
                Label::Unlabeled
            }
        })
        .collect();
    let mask = LabeledMask::from_labels(background.width(), background.height(), labels)
        .expect("labels sized from the map");
    (SeedMask(mask), threshold)
}

// Keeps repeated decrements on the 0.05 grid (0.9 - 8 * 0.05 == 0.5 exactly).
fn snap(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

/// Union of object and background seeds; object labels win conflicts.
pub fn pool_seeds(objects: &SeedMask, background: &SeedMask) -> Result<SeedMask> {
    objects.0.ensure_same_size(&background.0)?;
    let labels = objects
        .0
        .labels()
        .iter()
        .zip(background.0.labels())
        .map(|(&o, &b)| match (o, b) {
            (Label::Object(c), _) => Label::Object(c),
            (_, Label::Background) => Label::Background,
            _ => Label::Unlabeled,
        })
        .collect();
    Ok(SeedMask(LabeledMask::from_labels(
        objects.width(),
        objects.height(),
        labels,
    )?))
}
