//! Saliency maps: class activation maps, gradient background maps and the
//! RoI-level saliency that is resized and summed into an image-level map.

use crate::error::{mismatch, Error, Result};
use crate::geometry::BoundingBox;
use crate::grid::FeatureGrid;
use crate::CategoryId;

/// One real-valued `height x width` plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl SaliencyMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            normalized: false,
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(mismatch(height * width, values.len()));
        }
        Ok(Self {
            height,
            width,
            values,
            normalized: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Clamps negative evidence to zero and min-max scales the plane into
    /// `[0, 1]`. An all-zero plane stays all-zero; a constant positive plane
    /// becomes all ones.
    pub fn normalized(mut self) -> Self {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.max();
        let range = hi - lo;
        if hi <= 0.0 {
            self.values.iter_mut().for_each(|v| *v = 0.0);
        } else if range <= f64::EPSILON * hi {
            self.values.iter_mut().for_each(|v| *v = 1.0);
        } else {
            self.values.iter_mut().for_each(|v| *v = (*v - lo) / range);
        }
        self.normalized = true;
        self
    }

    /// Marks a plane that is already in `[0, 1]` by construction.
    pub(crate) fn into_normalized_unchecked(mut self) -> Self {
        self.normalized = true;
        self
    }
}

/// Per-category linear classifier over channels: `logit(c) = sum_k f_k w(k; c) + b(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != bias.len() {
            return Err(mismatch(weights.len(), bias.len()));
        }
        let k = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|w| w.len() != k) {
            return Err(Error::Config("ragged head weights".into()));
        }
        if weights
            .iter()
            .flatten()
            .chain(&bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("non-finite head weight".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn categories(&self) -> usize {
        self.weights.len()
    }

    pub fn channels(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn weights(&self, c: CategoryId) -> &[f64] {
        &self.weights[c]
    }

    /// Class logit of a global-average-pooling network: the spatial mean of
    /// the CAM plus the bias.
    pub fn gap_logit(&self, features: &FeatureGrid, c: CategoryId) -> Result<f64> {
        let cam = cam_map(features, self, c)?;
        let n = (features.height() * features.width()) as f64;
        Ok(cam.values.iter().sum::<f64>() / n + self.bias[c])
    }

    /// Gradient of [`Self::gap_logit`] with respect to every feature value.
    pub fn gap_logit_gradient(&self, features: &FeatureGrid, c: CategoryId) -> Result<FeatureGrid> {
        self.check(features, c)?;
        let (h, w, k) = features.shape();
        let n = (h * w) as f64;
        FeatureGrid::from_fn(h, w, k, |_, _, kk| self.weights[c][kk] / n)
    }

    fn check(&self, features: &FeatureGrid, c: CategoryId) -> Result<()> {
        if c >= self.categories() {
            return Err(Error::Config(format!("unknown category {c}")));
        }
        if features.channels() != self.channels() {
            return Err(mismatch(
                format!("{} channels", self.channels()),
                format!("{} channels", features.channels()),
            ));
        }
        Ok(())
    }
}

/// Class activation map: the channel-weighted sum of features at every cell.
pub fn cam_map(features: &FeatureGrid, head: &LinearHead, c: CategoryId) -> Result<SaliencyMap> {
    head.check(features, c)?;
    let w = head.weights(c);
    let values = features
        .as_slice()
        .chunks_exact(features.channels())
        .map(|cell| cell.iter().zip(w).map(|(f, w)| f * w).sum())
        .collect();
    SaliencyMap::from_values(features.height(), features.width(), values)
}

/// Background map `1 - max_c max_k |g_c| / Z(c)` from per-category gradient
/// grids of the existing categories.
///
/// A category whose gradients are all zero has no defined normalizer and
/// contributes nothing; if every category is degenerate the map is all ones.
pub fn grad_background_map(grads: &[FeatureGrid]) -> Result<SaliencyMap> {
    let Some(first) = grads.first() else {
        return Err(Error::Config(
            "background map needs at least one category".into(),
        ));
    };
    let (h, w, k) = first.shape();
    let mut best = vec![0.0_f64; h * w];
    for g in grads {
        first.ensure_same_shape(g)?;
        let z = g.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if z == 0.0 {
            continue;
        }
        for (cell, b) in g.as_slice().chunks_exact(k).zip(best.iter_mut()) {
            let peak = cell.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / z;
            *b = b.max(peak);
        }
    }
    let values = best.into_iter().map(|b| 1.0 - b).collect();
    Ok(SaliencyMap::from_values(h, w, values)?.into_normalized_unchecked())
}

/// Saliency inside one RoI: `sum_k grad(x, y, k) * f(x, y, k)` at pooled resolution.
pub fn roi_saliency(features: &FeatureGrid, grads: &FeatureGrid) -> Result<SaliencyMap> {
    features.ensure_same_shape(grads)?;
    let k = features.channels();
    let values = features
        .as_slice()
        .chunks_exact(k)
        .zip(grads.as_slice().chunks_exact(k))
        .map(|(f, g)| f.iter().zip(g).map(|(f, g)| f * g).sum())
        .collect();
    SaliencyMap::from_values(features.height(), features.width(), values)
}

/// A RoI-level saliency plane with the box it came from and its class score.
#[derive(Clone, Debug)]
pub struct RoiSaliency {
    pub bbox: BoundingBox,
    pub map: SaliencyMap,
    pub score: f64,
}

/// Resizes every RoI map to its box, weights it by the RoI score and sums the
/// results over a `height x width` canvas. No normalization is applied.
pub fn aggregate_roi_saliency_raw(
    rois: &[RoiSaliency],
    height: usize,
    width: usize,
) -> Result<SaliencyMap> {
    let mut out = vec![0.0; height * width];
    for roi in rois {
        roi.bbox.ensure_within(width, height)?;
        if roi.score == 0.0 {
            continue;
        }
        let (bw, bh) = (roi.bbox.width() as usize, roi.bbox.height() as usize);
        let resized = bilinear_resize(&roi.map, bh, bw);
        let (x0, y0) = (roi.bbox.x_min() as usize, roi.bbox.y_min() as usize);
        for dy in 0..bh {
            let row = &mut out[(y0 + dy) * width + x0..(y0 + dy) * width + x0 + bw];
            for (o, v) in row.iter_mut().zip(&resized[dy * bw..(dy + 1) * bw]) {
                *o += v * roi.score;
            }
        }
    }
    SaliencyMap::from_values(height, width, out)
}

/// [`aggregate_roi_saliency_raw`] followed by per-plane normalization.
pub fn aggregate_roi_saliency(
    rois: &[RoiSaliency],
    height: usize,
    width: usize,
) -> Result<SaliencyMap> {
    Ok(aggregate_roi_saliency_raw(rois, height, width)?.normalized())
}

/// Bilinear resize with half-pixel (cell-center) sampling, the
/// `align_corners = false` convention. Sample positions outside the source
/// are clamped to the border cells.
pub fn bilinear_resize(map: &SaliencyMap, out_h: usize, out_w: usize) -> Vec<f64> {
    let ys: Vec<(usize, usize, f64)> = (0..out_h)
        .map(|i| sample_axis(i, map.height, out_h))
        .collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|j| sample_axis(j, map.width, out_w))
        .collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = map.get(x0, y0) * (1.0 - tx) + map.get(x1, y0) * tx;
            let bottom = map.get(x0, y1) * (1.0 - tx) + map.get(x1, y1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Source indices and interpolation weight for output index `i`.
fn sample_axis(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    let t = if hi == lo { 0.0 } else { src - lo as f64 };
    (lo, hi, t)
}
