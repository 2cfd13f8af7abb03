//! Most-salient-candidate detector.
//!
//! Every RoI is max-pooled to a fixed `P x P x K` grid. Two linear branches
//! read the flattened pooled features for each category `c`:
//!
//! * classification: `p(c; r) = sigmoid(w_c . x_r + b_c)`
//! * saliency: `h(c; r) = softmax_r(v_c . x_r)`, normalized over the RoIs of an image
//!
//! The image-level score is `p(c) = sum_r h(c; r) p(c; r)`, trained with a
//! multi-label cross entropy on image labels. After training the RoI with
//! the largest `h(c; r) p(c; r)` is the detection for `c`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::geometry::BoundingBox;
use crate::grid::FeatureGrid;
use crate::{CategoryId, DETECTOR_SEED_TAG};

pub const DEFAULT_POOLED_SIZE: usize = 4;
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// A proposal box with its pooled features.
///
/// `argmax[j]` is the image pixel index (`y * width + x`) that supplied
/// pooled entry `j`, used to route gradients back to the image grid.
#[derive(Clone, Debug)]
pub struct Roi {
    pub bbox: BoundingBox,
    pub pooled: FeatureGrid,
    argmax: Vec<usize>,
}

impl Roi {
    pub fn new(image: &FeatureGrid, bbox: BoundingBox, pooled_size: usize) -> Result<Self> {
        let (pooled, argmax) = roi_pool_with_argmax(image, &bbox, pooled_size)?;
        Ok(Self {
            bbox,
            pooled,
            argmax,
        })
    }

    pub fn features(&self) -> &[f64] {
        self.pooled.as_slice()
    }

    pub fn source_pixels(&self) -> &[usize] {
        &self.argmax
    }
}

/// Pools every proposal of an image.
pub fn prepare_rois(
    image: &FeatureGrid,
    boxes: &[BoundingBox],
    pooled_size: usize,
) -> Result<Vec<Roi>> {
    boxes
        .iter()
        .map(|b| Roi::new(image, *b, pooled_size))
        .collect()
}

/// Max pooling of `bbox` onto a `pooled_size x pooled_size` grid.
pub fn roi_pool(
    image: &FeatureGrid,
    bbox: &BoundingBox,
    pooled_size: usize,
) -> Result<FeatureGrid> {
    Ok(roi_pool_with_argmax(image, bbox, pooled_size)?.0)
}

/// Max pooling that also reports, for each pooled entry, which pixel won.
///
/// Cell `i` along an axis of length `n` covers `[floor(i n / P), floor((i + 1) n / P))`.
/// When the box is narrower than `P` some cells are empty and copy the
/// nearest non-empty cell (the lower one on ties).
pub fn roi_pool_with_argmax(
    image: &FeatureGrid,
    bbox: &BoundingBox,
    pooled_size: usize,
) -> Result<(FeatureGrid, Vec<usize>)> {
    if pooled_size == 0 {
        return Err(Error::Config("pooled size must be positive".into()));
    }
    let (h, w, k) = image.shape();
    bbox.ensure_within(w, h)?;
    let xs = cell_bounds(bbox.x_min() as usize, bbox.width() as usize, pooled_size);
    let ys = cell_bounds(bbox.y_min() as usize, bbox.height() as usize, pooled_size);
    let mut values = Vec::with_capacity(pooled_size * pooled_size * k);
    let mut argmax = Vec::with_capacity(values.capacity());
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            for kk in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = image.get(x, y, kk);
                        if v > best {
                            best = v;
                            at = y * w + x;
                        }
                    }
                }
                values.push(best);
                argmax.push(at);
            }
        }
    }
    let pooled = FeatureGrid::from_vec(pooled_size, pooled_size, k, values)?;
    Ok((pooled, argmax))
}

fn cell_bounds(start: usize, len: usize, cells: usize) -> Vec<(usize, usize)> {
    let raw: Vec<(usize, usize)> = (0..cells)
        .map(|i| (start + i * len / cells, start + (i + 1) * len / cells))
        .collect();
    (0..cells)
        .map(|i| {
            (0..cells)
                .filter(|&j| raw[j].0 < raw[j].1)
                .min_by_key(|&j| (j.abs_diff(i), j))
                .map(|j| raw[j])
                .expect("a box of positive size has a non-empty cell")
        })
        .collect()
}

/// Weights of one category: classification branch and saliency branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryHead {
    pub cls_weights: Vec<f64>,
    pub cls_bias: f64,
    pub sal_weights: Vec<f64>,
}

impl CategoryHead {
    fn zeros(dim: usize) -> Self {
        Self {
            cls_weights: vec![0.0; dim],
            cls_bias: 0.0,
            sal_weights: vec![0.0; dim],
        }
    }

    fn axpy(&mut self, alpha: f64, other: &CategoryHead) {
        for (a, b) in self.cls_weights.iter_mut().zip(&other.cls_weights) {
            *a += alpha * b;
        }
        self.cls_bias += alpha * other.cls_bias;
        for (a, b) in self.sal_weights.iter_mut().zip(&other.sal_weights) {
            *a += alpha * b;
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.cls_weights
            .iter()
            .copied()
            .chain(std::iter::once(self.cls_bias))
            .chain(self.sal_weights.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MscModel {
    pooled_size: usize,
    channels: usize,
    heads: Vec<CategoryHead>,
}

/// Gradient of a loss with respect to every model parameter; same layout as the model.
pub type ModelGradient = Vec<CategoryHead>;

impl MscModel {
    pub fn zeros(categories: usize, pooled_size: usize, channels: usize) -> Self {
        let dim = pooled_size * pooled_size * channels;
        Self {
            pooled_size,
            channels,
            heads: vec![CategoryHead::zeros(dim); categories],
        }
    }

    /// Small Gaussian weights, zero biases.
    pub fn random(
        categories: usize,
        pooled_size: usize,
        channels: usize,
        scale: f64,
        seed: u64,
    ) -> Self {
        let mut model = Self::zeros(categories, pooled_size, channels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DETECTOR_SEED_TAG);
        let normal = Normal::new(0.0, scale.max(0.0)).expect("finite scale");
        for head in &mut model.heads {
            for w in head.cls_weights.iter_mut().chain(&mut head.sal_weights) {
                *w = normal.sample(&mut rng);
            }
        }
        model
    }

    pub fn from_heads(
        pooled_size: usize,
        channels: usize,
        heads: Vec<CategoryHead>,
    ) -> Result<Self> {
        let dim = pooled_size * pooled_size * channels;
        for h in &heads {
            if h.cls_weights.len() != dim || h.sal_weights.len() != dim {
                return Err(mismatch(
                    format!("{dim} weights per branch"),
                    format!("{} / {}", h.cls_weights.len(), h.sal_weights.len()),
                ));
            }
            if h.values().any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite model weight".into()));
            }
        }
        Ok(Self {
            pooled_size,
            channels,
            heads,
        })
    }

    pub fn categories(&self) -> usize {
        self.heads.len()
    }

    pub fn pooled_size(&self) -> usize {
        self.pooled_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_dim(&self) -> usize {
        self.pooled_size * self.pooled_size * self.channels
    }

    pub fn heads(&self) -> &[CategoryHead] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [CategoryHead] {
        &mut self.heads
    }

    pub fn is_finite(&self) -> bool {
        self.heads.iter().all(|h| h.values().all(f64::is_finite))
    }

    fn check_rois(&self, rois: &[Roi], c: CategoryId) -> Result<()> {
        if rois.is_empty() {
            return Err(Error::EmptyRois);
        }
        if c >= self.categories() {
            return Err(Error::Config(format!("unknown category {c}")));
        }
        for r in rois {
            if r.features().len() != self.feature_dim() {
                return Err(mismatch(
                    format!("{} pooled features", self.feature_dim()),
                    r.features().len(),
                ));
            }
        }
        Ok(())
    }

    /// Per-RoI classification probabilities, saliency distribution and the
    /// aggregated image score for category `c`.
    pub fn forward(&self, rois: &[Roi], c: CategoryId) -> Result<RoiScores> {
        self.check_rois(rois, c)?;
        Ok(self.forward_unchecked(rois, c))
    }

    fn forward_unchecked(&self, rois: &[Roi], c: CategoryId) -> RoiScores {
        let head = &self.heads[c];
        let mut cls_prob = Vec::with_capacity(rois.len());
        let mut sal_logit = Vec::with_capacity(rois.len());
        for r in rois {
            let x = r.features();
            cls_prob.push(sigmoid(dot(&head.cls_weights, x) + head.cls_bias));
            sal_logit.push(dot(&head.sal_weights, x));
        }
        let saliency = softmax(&sal_logit);
        let image_score = saliency.iter().zip(&cls_prob).map(|(h, p)| h * p).sum();
        RoiScores {
            cls_prob,
            saliency,
            sal_logit,
            image_score,
        }
    }
}

/// Forward pass of one category over the RoIs of one image.
#[derive(Clone, Debug)]
pub struct RoiScores {
    /// `p(c; r)`
    pub cls_prob: Vec<f64>,
    /// `h(c; r)`, sums to one.
    pub saliency: Vec<f64>,
    pub sal_logit: Vec<f64>,
    /// `p(c)`
    pub image_score: f64,
}

impl RoiScores {
    /// `h(c; r) p(c; r)` for every RoI.
    pub fn combined(&self) -> Vec<f64> {
        self.saliency
            .iter()
            .zip(&self.cls_prob)
            .map(|(h, p)| h * p)
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Image-level probability `p(c) = sum_r h(c; r) p(c; r)`.
pub fn image_score(rois: &[Roi], model: &MscModel, c: CategoryId) -> Result<f64> {
    Ok(model.forward(rois, c)?.image_score)
}

/// Mean binary cross entropy over categories.
pub fn multilabel_ce_loss(scores: &[f64], labels: &[bool]) -> f64 {
    debug_assert_eq!(scores.len(), labels.len());
    let n = scores.len().max(1) as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Derivative of [`multilabel_ce_loss`] with respect to each score.
/// Zero where the clamp is active.
pub fn multilabel_ce_grad(scores: &[f64], labels: &[bool]) -> Vec<f64> {
    let n = scores.len().max(1) as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else if y {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect()
}

/// One image for weakly supervised training: its RoIs and a presence flag per category.
#[derive(Clone, Copy, Debug)]
pub struct MilSample<'a> {
    pub rois: &'a [Roi],
    pub labels: &'a [bool],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoiTarget {
    Positive,
    Negative,
    Ignore,
}

/// Box-supervised training data for one (image, category) pair.
#[derive(Clone, Debug)]
pub struct SupervisedSample<'a> {
    pub rois: &'a [Roi],
    pub category: CategoryId,
    pub targets: Vec<RoiTarget>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Loss before each update, followed by the final loss.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

const CHUNK: usize = 16;

/// Mean multi-label cross entropy over images and its gradient.
pub fn mil_loss_and_gradient(model: &MscModel, samples: &[MilSample<'_>]) -> (f64, ModelGradient) {
    let n = samples.len().max(1) as f64;
    let partials: Vec<(f64, ModelGradient)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = vec![CategoryHead::zeros(model.feature_dim()); model.categories()];
            for s in chunk {
                let fw: Vec<RoiScores> = (0..model.categories())
                    .map(|c| model.forward_unchecked(s.rois, c))
                    .collect();
                let scores: Vec<f64> = fw.iter().map(|f| f.image_score).collect();
                loss += multilabel_ce_loss(&scores, s.labels);
                let d_scores = multilabel_ce_grad(&scores, s.labels);
                for (c, f) in fw.iter().enumerate() {
                    let d = d_scores[c] / n;
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[c];
                    for (r, roi) in s.rois.iter().enumerate() {
                        let (h, p) = (f.saliency[r], f.cls_prob[r]);
                        let dz = d * h * p * (1.0 - p);
                        let ds = d * h * (p - f.image_score);
                        accumulate(g, roi.features(), dz, ds);
                    }
                }
            }
            (loss / n, grad)
        })
        .collect();
    reduce(model, partials)
}

/// Loss of box-supervised training and its gradient.
///
/// Each sample contributes the mean binary cross entropy of `p(c; r)` over
/// its positive and negative RoIs, plus `-ln sum_{r positive} h(c; r)` when
/// it has positives. Samples are averaged.
pub fn supervised_loss_and_gradient(
    model: &MscModel,
    samples: &[SupervisedSample<'_>],
) -> (f64, ModelGradient) {
    let n = samples.len().max(1) as f64;
    let partials: Vec<(f64, ModelGradient)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = vec![CategoryHead::zeros(model.feature_dim()); model.categories()];
            for s in chunk {
                let f = model.forward_unchecked(s.rois, s.category);
                let labeled = s
                    .targets
                    .iter()
                    .filter(|t| **t != RoiTarget::Ignore)
                    .count();
                let pos_mass: f64 = s
                    .targets
                    .iter()
                    .zip(&f.saliency)
                    .filter(|(t, _)| **t == RoiTarget::Positive)
                    .map(|(_, h)| h)
                    .sum();
                let has_pos = s.targets.contains(&RoiTarget::Positive);
                if has_pos {
                    loss += -pos_mass.max(f64::MIN_POSITIVE).ln();
                }
                let g = &mut grad[s.category];
                for (r, roi) in s.rois.iter().enumerate() {
                    let p = f.cls_prob[r];
                    let mut dz = 0.0;
                    match s.targets[r] {
                        RoiTarget::Positive => {
                            loss -= p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln() / labeled as f64;
                            dz = (p - 1.0) / labeled as f64;
                        }
                        RoiTarget::Negative => {
                            loss -= (1.0 - p).clamp(PROB_EPS, 1.0 - PROB_EPS).ln() / labeled as f64;
                            dz = p / labeled as f64;
                        }
                        RoiTarget::Ignore => {}
                    }
                    let ds = if has_pos {
                        let h = f.saliency[r];
                        if s.targets[r] == RoiTarget::Positive {
                            h - h / pos_mass
                        } else {
                            h
                        }
                    } else {
                        0.0
                    };
                    accumulate(g, roi.features(), dz / n, ds / n);
                }
            }
            (loss / n, grad)
        })
        .collect();
    reduce(model, partials)
}

fn accumulate(g: &mut CategoryHead, x: &[f64], dz: f64, ds: f64) {
    if dz != 0.0 {
        for (w, v) in g.cls_weights.iter_mut().zip(x) {
            *w += dz * v;
        }
        g.cls_bias += dz;
    }
    if ds != 0.0 {
        for (w, v) in g.sal_weights.iter_mut().zip(x) {
            *w += ds * v;
        }
    }
}

// Partials are summed in chunk order so results do not depend on the thread count.
fn reduce(model: &MscModel, partials: Vec<(f64, ModelGradient)>) -> (f64, ModelGradient) {
    let mut loss = 0.0;
    let mut grad = vec![CategoryHead::zeros(model.feature_dim()); model.categories()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            a.axpy(1.0, b);
        }
    }
    (loss, grad)
}

fn descend(
    mut model: MscModel,
    cfg: &TrainConfig,
    mut objective: impl FnMut(&MscModel) -> (f64, ModelGradient),
) -> Result<(MscModel, TrainReport)> {
    let mut report = TrainReport::default();
    for epoch in 0..=cfg.epochs {
        let (loss, grad) = objective(&model);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        report.losses.push(loss);
        if epoch == cfg.epochs || cfg.learning_rate == 0.0 {
            continue;
        }
        for (head, g) in model.heads.iter_mut().zip(&grad) {
            head.axpy(-cfg.learning_rate, g);
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok((model, report))
}

fn infer_shape(rois: &[Roi]) -> Result<(usize, usize)> {
    let r = rois.first().ok_or(Error::EmptyRois)?;
    Ok((r.pooled.height(), r.pooled.channels()))
}

/// Trains a detector from image-level labels with full-batch gradient descent.
pub fn train_msc(
    samples: &[MilSample<'_>],
    categories: usize,
    cfg: &TrainConfig,
) -> Result<(MscModel, TrainReport)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty training set".into()))?;
    let (p, k) = infer_shape(first.rois)?;
    for s in samples {
        if s.rois.is_empty() {
            return Err(Error::EmptyRois);
        }
        if s.labels.len() != categories {
            return Err(mismatch(categories, s.labels.len()));
        }
    }
    let model = MscModel::random(categories, p, k, cfg.init_scale, cfg.seed);
    for s in samples {
        model.check_rois(s.rois, 0)?;
    }
    descend(model, cfg, |m| mil_loss_and_gradient(m, samples))
}

/// Trains a fresh detector on pseudo boxes, one sample per (image, category).
pub fn train_supervised(
    samples: &[SupervisedSample<'_>],
    categories: usize,
    cfg: &TrainConfig,
) -> Result<(MscModel, TrainReport)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty training set".into()))?;
    let (p, k) = infer_shape(first.rois)?;
    let model = MscModel::random(categories, p, k, cfg.init_scale, cfg.seed);
    for s in samples {
        model.check_rois(s.rois, s.category)?;
        if s.targets.len() != s.rois.len() {
            return Err(mismatch(s.rois.len(), s.targets.len()));
        }
    }
    descend(model, cfg, |m| supervised_loss_and_gradient(m, samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub category: CategoryId,
    /// `h(c; r) p(c; r)`
    pub score: f64,
    pub roi_index: usize,
}

/// The RoI with the largest combined score; the lowest index wins ties.
pub fn top_detection(rois: &[Roi], model: &MscModel, c: CategoryId) -> Result<Detection> {
    let combined = model.forward(rois, c)?.combined();
    let mut best = 0;
    for (i, &s) in combined.iter().enumerate() {
        if s > combined[best] {
            best = i;
        }
    }
    Ok(Detection {
        bbox: rois[best].bbox,
        category: c,
        score: combined[best],
        roi_index: best,
    })
}

/// `d p(c; r) / d f(x, y, k; r)` at pooled resolution, one grid per RoI.
pub fn feature_gradients(
    rois: &[Roi],
    model: &MscModel,
    c: CategoryId,
) -> Result<Vec<FeatureGrid>> {
    let f = model.forward(rois, c)?;
    let w = &model.heads[c].cls_weights;
    let p = model.pooled_size;
    f.cls_prob
        .iter()
        .map(|&prob| {
            let s = prob * (1.0 - prob);
            FeatureGrid::from_vec(p, p, model.channels, w.iter().map(|w| s * w).collect())
        })
        .collect()
}

/// `d p(c) / d f(x, y, k)` on the image grid. Pooled gradients flow back to
/// the pixel that won each max-pooling cell.
pub fn image_feature_gradient(
    rois: &[Roi],
    model: &MscModel,
    c: CategoryId,
    height: usize,
    width: usize,
) -> Result<FeatureGrid> {
    let f = model.forward(rois, c)?;
    let head = &model.heads[c];
    let k = model.channels;
    let mut out = FeatureGrid::zeros(height, width, k)?;
    let data = out.as_mut_slice();
    for (r, roi) in rois.iter().enumerate() {
        roi.bbox.ensure_within(width, height)?;
        let (h, p) = (f.saliency[r], f.cls_prob[r]);
        let dz = h * p * (1.0 - p);
        let ds = h * (p - f.image_score);
        for (j, &pix) in roi.argmax.iter().enumerate() {
            data[pix * k + j % k] += dz * head.cls_weights[j] + ds * head.sal_weights[j];
        }
    }
    Ok(out)
}

/// Like [`image_feature_gradient`], but each pooled gradient is spread over
/// every pixel of its pooling cell instead of only the max-pool winner.
///
/// This is the gradient the image would receive if the cells were
/// sum-pooled. It gives a dense map, which the background plane needs:
/// max-pool routing touches only a handful of pixels per cell.
pub fn broadcast_feature_gradient(
    rois: &[Roi],
    model: &MscModel,
    c: CategoryId,
    height: usize,
    width: usize,
) -> Result<FeatureGrid> {
    let f = model.forward(rois, c)?;
    let head = &model.heads[c];
    let (p, k) = (model.pooled_size, model.channels);
    let mut out = FeatureGrid::zeros(height, width, k)?;
    let data = out.as_mut_slice();
    for (r, roi) in rois.iter().enumerate() {
        roi.bbox.ensure_within(width, height)?;
        let (h, prob) = (f.saliency[r], f.cls_prob[r]);
        let dz = h * prob * (1.0 - prob);
        let ds = h * (prob - f.image_score);
        let xs = cell_bounds(roi.bbox.x_min() as usize, roi.bbox.width() as usize, p);
        let ys = cell_bounds(roi.bbox.y_min() as usize, roi.bbox.height() as usize, p);
        for (cy, &(y0, y1)) in ys.iter().enumerate() {
            for (cx, &(x0, x1)) in xs.iter().enumerate() {
                let base = (cy * p + cx) * k;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let cell = &mut data[(y * width + x) * k..(y * width + x + 1) * k];
                        for (kk, v) in cell.iter_mut().enumerate() {
                            *v +=
                                dz * head.cls_weights[base + kk] + ds * head.sal_weights[base + kk];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
