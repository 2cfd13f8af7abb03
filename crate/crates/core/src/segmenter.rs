//! Mask growing from seeds and segmentation-based boxes.
//!
//! [`RegionGrower`] is a deterministic stand-in for a learned segmentation
//! network: seed regions absorb neighbouring pixels whose features are close
//! to the region's mean feature. Like the learned model it replaces, it grows
//! a seed to the full homogeneous region around it and happily merges
//! touching instances of the same category.

use crate::error::{mismatch, Error, Result};
use crate::geometry::{largest_component_box, BoundingBox, Label, LabeledMask};
use crate::grid::FeatureGrid;
use crate::seeding::SeedMask;
use crate::CategoryId;

/// Anything that turns seeds into a full label mask.
///
/// Implementations must return a mask of the seeds' size in which every
/// seeded pixel keeps its seed label.
pub trait SegmenterBackend: Sync {
    fn segment(&self, features: &FeatureGrid, seeds: &SeedMask) -> Result<LabeledMask>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionGrowConfig {
    /// Maximum L2 distance between a pixel and a region's mean feature.
    pub similarity_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RegionGrowConfig {
    fn default() -> Self {
        Self {
            similarity_tolerance: 0.5,
            max_iterations: 256,
        }
    }
}

impl RegionGrowConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.similarity_tolerance.is_finite() || self.similarity_tolerance < 0.0 {
            return Err(Error::Config(format!(
                "similarity tolerance must be finite and >= 0, got {}",
                self.similarity_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RegionGrower {
    pub config: RegionGrowConfig,
}

impl RegionGrower {
    pub fn new(config: RegionGrowConfig) -> Self {
        Self { config }
    }
}

impl SegmenterBackend for RegionGrower {
    fn segment(&self, features: &FeatureGrid, seeds: &SeedMask) -> Result<LabeledMask> {
        grow_seeds(features, seeds, &self.config)
    }
}

/// Breadth-first region growing.
///
/// Each iteration recomputes the mean feature of every category region, then
/// lets each unlabeled pixel join the closest region among its labeled
/// 4-neighbours if the distance is within tolerance. All adoptions of an
/// iteration are applied together. Background seeds are never relabeled and
/// are not grown through. Pixels still unlabeled at the end become background.
pub fn grow_seeds(
    features: &FeatureGrid,
    seeds: &SeedMask,
    cfg: &RegionGrowConfig,
) -> Result<LabeledMask> {
    cfg.validate()?;
    let (h, w, k) = features.shape();
    if seeds.width() != w || seeds.height() != h {
        return Err(mismatch(
            format!("{w}x{h}"),
            format!("{}x{}", seeds.width(), seeds.height()),
        ));
    }
    let mut mask = seeds.mask().clone();
    let n_cats = mask
        .labels()
        .iter()
        .filter_map(|l| l.category())
        .max()
        .map_or(0, |c| c + 1);
    let tol_sq = cfg.similarity_tolerance * cfg.similarity_tolerance;

    for _ in 0..cfg.max_iterations {
        let means = region_means(features, &mask, n_cats);
        let mut adopt: Vec<(usize, CategoryId)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y).is_unlabeled() {
                    continue;
                }
                let f = features.cell(x, y);
                let mut best: Option<(CategoryId, f64)> = None;
                for (nx, ny) in neighbours(x, y, w, h) {
                    let Some(c) = mask.get(nx, ny).category() else {
                        continue;
                    };
                    let d = sq_dist(f, &means[c * k..(c + 1) * k]);
                    if d <= tol_sq && best.is_none_or(|(bc, bd)| d < bd || (d == bd && c < bc)) {
                        best = Some((c, d));
                    }
                }
                if let Some((c, _)) = best {
                    adopt.push((y * w + x, c));
                }
            }
        }
        if adopt.is_empty() {
            break;
        }
        let labels = mask.labels_mut();
        for (i, c) in adopt {
            labels[i] = Label::Object(c);
        }
    }
    for l in mask.labels_mut() {
        if l.is_unlabeled() {
            *l = Label::Background;
        }
    }
    Ok(mask)
}

fn region_means(features: &FeatureGrid, mask: &LabeledMask, n_cats: usize) -> Vec<f64> {
    let k = features.channels();
    let mut sums = vec![0.0; n_cats * k];
    let mut counts = vec![0usize; n_cats];
    for (cell, label) in features.as_slice().chunks_exact(k).zip(mask.labels()) {
        if let Some(c) = label.category() {
            counts[c] += 1;
            for (s, v) in sums[c * k..(c + 1) * k].iter_mut().zip(cell) {
                *s += v;
            }
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[c * k..(c + 1) * k]
                .iter_mut()
                .for_each(|s| *s /= n as f64);
        }
    }
    sums
}

fn neighbours(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (y > 0).then(|| (x, y - 1));
    let left = (x > 0).then(|| (x - 1, y));
    let right = (x + 1 < w).then(|| (x + 1, y));
    let down = (y + 1 < h).then(|| (x, y + 1));
    [up, left, right, down].into_iter().flatten()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Box around the largest connected region of `category` in a segmentation.
pub fn ssg_box(mask: &LabeledMask, category: CategoryId) -> Option<BoundingBox> {
    largest_component_box(mask, category)
}
