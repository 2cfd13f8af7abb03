//! The re-localization / re-training loop with consistency-based curriculum.
//!
//! An example is one (image, existing category) pair. Each round the
//! detector's top box `B_det` and the segmenter's box `B_ssg` are compared;
//! examples whose boxes agree (IoU >= T) join the training set with the
//! average of the two boxes as pseudo ground truth. The detector is then
//! retrained from scratch on the selected examples and the cycle repeats.

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    broadcast_feature_gradient, feature_gradients, prepare_rois, top_detection, train_msc,
    train_supervised, MilSample, MscModel, Roi, RoiTarget, SupervisedSample, TrainConfig,
    DEFAULT_POOLED_SIZE,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    corloc_indexed, GroundTruthIndex, GroundTruthObject, LocPrediction, ScoredDetection,
};
use crate::geometry::{fuse_boxes, iou, BoundingBox, LabeledMask};
use crate::grid::FeatureGrid;
use crate::saliency::{
    aggregate_roi_saliency, grad_background_map, roi_saliency, RoiSaliency, SaliencyMap,
};
use crate::seeding::{
    adaptive_background_seeds, pool_seeds, threshold_object_seeds, SeedMask,
    DEFAULT_BACKGROUND_THRESHOLD, DEFAULT_MIN_BACKGROUND_FRACTION, DEFAULT_OBJECT_THRESHOLD,
};
use crate::segmenter::{ssg_box, SegmenterBackend};
use crate::synthdata::Dataset;
use crate::{CategoryId, CURRICULUM_SEED_TAG};

pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_ROUNDS: usize = 5;
/// Image-label training needs more steps than box-supervised retraining:
/// with fewer, a category can end round 0 with no selected examples.
pub const DEFAULT_INITIAL_EPOCHS: usize = 400;
pub const DEFAULT_INITIAL_LEARNING_RATE: f64 = 0.5;

/// Settings of the saliency -> seeds -> mask path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub pooled_size: usize,
    pub object_threshold: f64,
    pub background_threshold: f64,
    pub min_background_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pooled_size: DEFAULT_POOLED_SIZE,
            object_threshold: DEFAULT_OBJECT_THRESHOLD,
            background_threshold: DEFAULT_BACKGROUND_THRESHOLD,
            min_background_fraction: DEFAULT_MIN_BACKGROUND_FRACTION,
        }
    }
}

/// How examples enter the training set.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectionPolicy {
    /// Examples whose detector and segmenter boxes agree.
    Consistency,
    /// Random examples regardless of agreement; `schedule[n]` is the target
    /// training-set size after round `n` (the last entry repeats).
    Random { schedule: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumConfig {
    /// Consistency threshold `T`.
    pub threshold: f64,
    pub max_rounds: usize,
    pub pipeline: PipelineConfig,
    /// Image-label training of the initial detector.
    pub initial_training: TrainConfig,
    /// Box-supervised retraining each round.
    pub retraining: TrainConfig,
    pub positive_iou: f64,
    pub negative_iou: f64,
    /// Negatives kept per positive RoI of an example.
    pub negatives_per_positive: usize,
    /// Negatives drawn per absent category of a training image.
    pub absent_negatives: usize,
    pub policy: SelectionPolicy,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONSISTENCY_THRESHOLD,
            max_rounds: DEFAULT_MAX_ROUNDS,
            pipeline: PipelineConfig::default(),
            initial_training: TrainConfig {
                epochs: DEFAULT_INITIAL_EPOCHS,
                learning_rate: DEFAULT_INITIAL_LEARNING_RATE,
                ..TrainConfig::default()
            },
            retraining: TrainConfig::default(),
            positive_iou: 0.5,
            negative_iou: 0.3,
            negatives_per_positive: 3,
            absent_negatives: 2,
            policy: SelectionPolicy::Consistency,
            seed: 0,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("T", self.threshold)?;
        unit("object threshold", self.pipeline.object_threshold)?;
        unit("background threshold", self.pipeline.background_threshold)?;
        unit(
            "minimum background fraction",
            self.pipeline.min_background_fraction,
        )?;
        unit("positive IoU", self.positive_iou)?;
        unit("negative IoU", self.negative_iou)?;
        if self.negative_iou > self.positive_iou {
            return Err(Error::Config("negative IoU above positive IoU".into()));
        }
        if self.pipeline.pooled_size == 0 {
            return Err(Error::Config("pooled size must be positive".into()));
        }
        Ok(())
    }

    fn with_seed(&self, t: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..*t
        }
    }
}

/// One image with its pooled proposals, ready for training and inference.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub id: u64,
    pub features: FeatureGrid,
    pub rois: Vec<Roi>,
    /// Image-level labels as a 0/1 vector over all categories.
    pub labels: Vec<bool>,
    pub existing: Vec<CategoryId>,
    pub gt: Vec<GroundTruthObject>,
}

#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub n_categories: usize,
    pub images: Vec<PreparedImage>,
    pub gt: GroundTruthIndex,
}

impl PreparedDataset {
    /// Pools every proposal of every labeled image. Images without labels
    /// carry no examples and are dropped.
    pub fn new(dataset: &Dataset, pooled_size: usize) -> Result<Self> {
        let images = dataset
            .images
            .par_iter()
            .filter(|s| !s.labels.is_empty())
            .map(|s| {
                let mut labels = vec![false; dataset.n_categories];
                for &c in &s.labels {
                    labels[c] = true;
                }
                Ok(PreparedImage {
                    id: s.id,
                    features: s.features.clone(),
                    rois: prepare_rois(&s.features, &s.proposals, pooled_size)?,
                    labels,
                    existing: s.labels.clone(),
                    gt: s.gt.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_categories: dataset.n_categories,
            gt: GroundTruthIndex::new(&dataset.ground_truth()),
            images,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Indices of (image, category) pairs in record order.
    fn example_keys(&self) -> Vec<(usize, CategoryId)> {
        self.images
            .iter()
            .enumerate()
            .flat_map(|(i, im)| im.existing.iter().map(move |&c| (i, c)))
            .collect()
    }
}

/// State of one (image, existing category) example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    /// Position of the image in the prepared dataset.
    pub image: usize,
    pub image_id: u64,
    pub category: CategoryId,
    pub det_box: Option<BoundingBox>,
    pub ssg_box: Option<BoundingBox>,
    pub selected: bool,
    /// Admitted without agreement at the last round.
    pub forced: bool,
    pub selected_round: Option<usize>,
    /// Consistency at the round the example was selected.
    pub selected_consistency: Option<f64>,
    pub pseudo_box: Option<BoundingBox>,
}

impl ExampleRecord {
    pub fn new(image: usize, image_id: u64, category: CategoryId) -> Self {
        Self {
            image,
            image_id,
            category,
            det_box: None,
            ssg_box: None,
            selected: false,
            forced: false,
            selected_round: None,
            selected_consistency: None,
            pseudo_box: None,
        }
    }
}

/// IoU of the detector and segmenter boxes; `None` if either is missing.
pub fn consistency(record: &ExampleRecord) -> Option<f64> {
    match (&record.det_box, &record.ssg_box) {
        (Some(d), Some(s)) => Some(iou(d, s)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub round: usize,
    pub threshold: f64,
    pub max_rounds: usize,
    pub records: Vec<ExampleRecord>,
}

impl CurriculumState {
    pub fn new(records: Vec<ExampleRecord>, threshold: f64, max_rounds: usize) -> Self {
        Self {
            round: 0,
            threshold,
            max_rounds,
            records,
        }
    }

    pub fn n_selected(&self) -> usize {
        self.records.iter().filter(|r| r.selected).count()
    }

    pub fn all_selected(&self) -> bool {
        self.records.iter().all(|r| r.selected)
    }
}

fn refreshed_pseudo(r: &ExampleRecord) -> Option<BoundingBox> {
    match (&r.det_box, &r.ssg_box) {
        (Some(d), Some(s)) => Some(fuse_boxes(d, s)),
        _ => r.pseudo_box,
    }
}

/// Admits every example with consistency `>= T`. Selected examples stay
/// selected; their pseudo boxes are refreshed from the current boxes
/// whenever both are available.
pub fn select_easy(state: &mut CurriculumState) {
    let round = state.round;
    let t = state.threshold;
    for r in &mut state.records {
        if r.selected {
            if !r.forced {
                r.pseudo_box = refreshed_pseudo(r);
            }
            continue;
        }
        if let Some(s) = consistency(r).filter(|&s| s >= t) {
            r.selected = true;
            r.selected_round = Some(round);
            r.selected_consistency = Some(s);
            r.pseudo_box = refreshed_pseudo(r);
        }
    }
}

/// Grows the training set to `target` examples drawn at random from those
/// with at least one box. Pseudo boxes are refreshed as in [`select_easy`],
/// falling back to whichever box exists.
pub fn select_random(state: &mut CurriculumState, target: usize, rng: &mut ChaCha8Rng) {
    let round = state.round;
    for r in state.records.iter_mut().filter(|r| r.selected && !r.forced) {
        r.pseudo_box = refreshed_pseudo(r)
            .or(r.pseudo_box)
            .or(r.det_box)
            .or(r.ssg_box);
    }
    let mut pool: Vec<usize> = state
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.selected && (r.det_box.is_some() || r.ssg_box.is_some()))
        .map(|(i, _)| i)
        .collect();
    pool.shuffle(rng);
    let missing = target.saturating_sub(state.n_selected());
    for &i in pool.iter().take(missing) {
        let r = &mut state.records[i];
        r.selected = true;
        r.selected_round = Some(round);
        r.selected_consistency = consistency(r);
        r.pseudo_box = refreshed_pseudo(r).or(r.det_box).or(r.ssg_box);
    }
}

/// Intermediate products of the segmentation path for one image.
#[derive(Clone, Debug)]
pub struct SegmentationTrace {
    /// Normalized aggregated saliency per existing category.
    pub planes: Vec<(CategoryId, SaliencyMap)>,
    pub background: SaliencyMap,
    pub background_threshold: f64,
    pub seeds: SeedMask,
    pub mask: LabeledMask,
}

/// Saliency planes, seeds and grown mask of one image under `model`.
pub fn segment_image(
    image: &PreparedImage,
    model: &MscModel,
    segmenter: &dyn SegmenterBackend,
    cfg: &PipelineConfig,
) -> Result<SegmentationTrace> {
    let (h, w) = (image.features.height(), image.features.width());
    let mut planes = Vec::with_capacity(image.existing.len());
    let mut image_grads = Vec::with_capacity(image.existing.len());
    for &c in &image.existing {
        let scores = model.forward(&image.rois, c)?;
        let grads = feature_gradients(&image.rois, model, c)?;
        let rois = image
            .rois
            .iter()
            .zip(&grads)
            .zip(&scores.cls_prob)
            .map(|((roi, g), &p)| {
                Ok(RoiSaliency {
                    bbox: roi.bbox,
                    map: roi_saliency(&roi.pooled, g)?,
                    score: p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        planes.push((c, aggregate_roi_saliency(&rois, h, w)?));
        image_grads.push(broadcast_feature_gradient(&image.rois, model, c, h, w)?);
    }
    let background = grad_background_map(&image_grads)?;
    let refs: Vec<(CategoryId, &SaliencyMap)> = planes.iter().map(|(c, m)| (*c, m)).collect();
    let objects = threshold_object_seeds(&refs, cfg.object_threshold)?;
    let (bg_seeds, background_threshold) = adaptive_background_seeds(
        &background,
        cfg.background_threshold,
        cfg.min_background_fraction,
    );
    let seeds = pool_seeds(&objects, &bg_seeds)?;
    let mask = segmenter.segment(&image.features, &seeds)?;
    Ok(SegmentationTrace {
        planes,
        background,
        background_threshold,
        seeds,
        mask,
    })
}

/// Per-image boxes: detector box and segmenter box per existing category.
type ImageBoxes = Vec<(CategoryId, Option<BoundingBox>, Option<BoundingBox>)>;

fn localize_image(
    image: &PreparedImage,
    model: &MscModel,
    segmenter: &dyn SegmenterBackend,
    cfg: &PipelineConfig,
) -> ImageBoxes {
    let dets: Vec<Option<BoundingBox>> = image
        .existing
        .iter()
        .map(|&c| match top_detection(&image.rois, model, c) {
            Ok(d) => Some(d.bbox),
            Err(e) => {
                warn!("image {}: detector failed for category {c}: {e}", image.id);
                None
            }
        })
        .collect();
    let mask = match segment_image(image, model, segmenter, cfg) {
        Ok(t) => Some(t.mask),
        Err(e) => {
            warn!("image {}: segmentation failed: {e}", image.id);
            None
        }
    };
    image
        .existing
        .iter()
        .zip(dets)
        .map(|(&c, d)| (c, d, mask.as_ref().and_then(|m| ssg_box(m, c))))
        .collect()
}

/// Refreshes `B_det` and `B_ssg` of every record with the given detector.
/// Failures on an image leave its boxes empty for this round.
pub fn relocalize(
    state: &mut CurriculumState,
    model: &MscModel,
    segmenter: &dyn SegmenterBackend,
    data: &PreparedDataset,
    cfg: &PipelineConfig,
) {
    let boxes: Vec<ImageBoxes> = data
        .images
        .par_iter()
        .map(|im| localize_image(im, model, segmenter, cfg))
        .collect();
    for r in &mut state.records {
        let found = boxes
            .get(r.image)
            .and_then(|b| b.iter().find(|(c, _, _)| *c == r.category));
        let (det, ssg) = found.map_or((None, None), |&(_, d, s)| (d, s));
        r.det_box = det;
        r.ssg_box = ssg;
    }
}

/// The top detection of every category (present or not) in every image,
/// scored by `h(c; r) p(c; r)`.
pub fn top_detections(data: &PreparedDataset, model: &MscModel) -> Result<Vec<ScoredDetection>> {
    let per_image = data
        .images
        .par_iter()
        .map(|im| {
            (0..data.n_categories)
                .map(|c| {
                    let d = top_detection(&im.rois, model, c)?;
                    Ok(ScoredDetection {
                        image_id: im.id,
                        category: c,
                        bbox: d.bbox,
                        score: d.score,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Per-round summary written to the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub n_selected: usize,
    /// CorLoc of the pseudo boxes of selected examples; NaN if none.
    pub corloc_selected: f64,
    /// CorLoc of the detector boxes over all examples.
    pub corloc_all: f64,
    /// Mean consistency over examples where it is defined; NaN if none.
    pub mean_s: f64,
}

pub fn round_metrics(state: &CurriculumState, gt: &GroundTruthIndex) -> Result<RoundMetrics> {
    let pred = |r: &ExampleRecord, b: Option<BoundingBox>| LocPrediction {
        image_id: r.image_id,
        category: r.category,
        bbox: b,
    };
    let selected: Vec<LocPrediction> = state
        .records
        .iter()
        .filter(|r| r.selected)
        .map(|r| pred(r, r.pseudo_box))
        .collect();
    let all: Vec<LocPrediction> = state.records.iter().map(|r| pred(r, r.det_box)).collect();
    let s: Vec<f64> = state.records.iter().filter_map(consistency).collect();
    Ok(RoundMetrics {
        round: state.round,
        n_selected: selected.len(),
        corloc_selected: if selected.is_empty() {
            f64::NAN
        } else {
            corloc_indexed(&selected, gt)?
        },
        corloc_all: corloc_indexed(&all, gt)?,
        mean_s: if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        },
    })
}

/// Trains the initial detector from image labels.
pub fn train_initial(data: &PreparedDataset, cfg: &CurriculumConfig) -> Result<MscModel> {
    let samples: Vec<MilSample<'_>> = data
        .images
        .iter()
        .map(|im| MilSample {
            rois: &im.rois,
            labels: &im.labels,
        })
        .collect();
    let (model, report) = train_msc(
        &samples,
        data.n_categories,
        &cfg.with_seed(&cfg.initial_training),
    )?;
    info!(
        "initial detector: loss {:.4} -> {:.4}",
        report.initial_loss(),
        report.final_loss()
    );
    Ok(model)
}

/// RoI targets for one example: positives overlap the pseudo box by at least
/// `positive_iou`; up to `negatives_per_positive` per positive are drawn from
/// RoIs below `negative_iou`; everything else is ignored.
pub fn assign_targets(
    rois: &[Roi],
    pseudo: &BoundingBox,
    cfg: &CurriculumConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<RoiTarget> {
    let mut targets = vec![RoiTarget::Ignore; rois.len()];
    let mut negatives = Vec::new();
    let mut n_pos = 0;
    for (i, roi) in rois.iter().enumerate() {
        let o = iou(&roi.bbox, pseudo);
        if o >= cfg.positive_iou {
            targets[i] = RoiTarget::Positive;
            n_pos += 1;
        } else if o < cfg.negative_iou {
            negatives.push(i);
        }
    }
    negatives.shuffle(rng);
    let keep = (n_pos.max(1) * cfg.negatives_per_positive).min(negatives.len());
    for &i in &negatives[..keep] {
        targets[i] = RoiTarget::Negative;
    }
    targets
}

/// Retrains a fresh detector on the pseudo boxes of the selected examples.
/// Absent categories of the training images contribute sampled negatives.
pub fn retrain(
    state: &CurriculumState,
    data: &PreparedDataset,
    cfg: &CurriculumConfig,
    round: usize,
) -> Result<MscModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CURRICULUM_SEED_TAG);
    rng.set_stream(round as u64);
    let mut samples = Vec::new();
    let mut images: Vec<usize> = Vec::new();
    for r in state.records.iter().filter(|r| r.selected) {
        let Some(pseudo) = &r.pseudo_box else {
            continue;
        };
        let rois = &data.images[r.image].rois;
        samples.push(SupervisedSample {
            rois,
            category: r.category,
            targets: assign_targets(rois, pseudo, cfg, &mut rng),
        });
        if images.last() != Some(&r.image) {
            images.push(r.image);
        }
    }
    for &i in &images {
        let im = &data.images[i];
        for c in (0..data.n_categories).filter(|&c| !im.labels[c]) {
            let mut idx: Vec<usize> = (0..im.rois.len()).collect();
            idx.shuffle(&mut rng);
            let mut targets = vec![RoiTarget::Ignore; im.rois.len()];
            for &j in idx.iter().take(cfg.absent_negatives) {
                targets[j] = RoiTarget::Negative;
            }
            samples.push(SupervisedSample {
                rois: &im.rois,
                category: c,
                targets,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "round {round}: no examples to retrain on"
        )));
    }
    let (model, report) =
        train_supervised(&samples, data.n_categories, &cfg.with_seed(&cfg.retraining)).map_err(
            |e| match e {
                Error::Divergence { epoch, loss } => {
                    warn!("round {round}: retraining diverged at epoch {epoch} (loss {loss})");
                    Error::Divergence { epoch, loss }
                }
                e => e,
            },
        )?;
    debug!(
        "round {round}: {} samples, loss {:.4} -> {:.4}",
        samples.len(),
        report.initial_loss(),
        report.final_loss()
    );
    Ok(model)
}

/// Everything produced by a curriculum run.
#[derive(Clone, Debug)]
pub struct MiclOutcome {
    pub model: MscModel,
    /// State after each round, starting with round 0.
    pub states: Vec<CurriculumState>,
    pub metrics: Vec<RoundMetrics>,
    pub retrainings: usize,
}

impl MiclOutcome {
    pub fn final_state(&self) -> &CurriculumState {
        self.states.last().expect("at least the round-0 state")
    }
}

/// The initial detector and the round-0 state, shareable between runs that
/// differ only in their selection policy.
#[derive(Clone, Debug)]
pub struct RoundZero {
    pub model: MscModel,
    /// Boxes from the initial detector, nothing selected yet.
    pub state: CurriculumState,
}

pub fn round_zero(
    data: &PreparedDataset,
    segmenter: &dyn SegmenterBackend,
    cfg: &CurriculumConfig,
) -> Result<RoundZero> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("dataset has no labeled images".into()));
    }
    let model = train_initial(data, cfg)?;
    let records = data
        .example_keys()
        .into_iter()
        .map(|(i, c)| ExampleRecord::new(i, data.images[i].id, c))
        .collect();
    let mut state = CurriculumState::new(records, cfg.threshold, cfg.max_rounds);
    relocalize(&mut state, &model, segmenter, data, &cfg.pipeline);
    Ok(RoundZero { model, state })
}

/// Runs the full curriculum: train on image labels, then alternate
/// retraining on the selected examples and re-localization until every
/// example is in the training set. At round `max_rounds` the remaining
/// examples are admitted with their detector boxes.
pub fn micl_run(
    dataset: &Dataset,
    segmenter: &dyn SegmenterBackend,
    cfg: &CurriculumConfig,
) -> Result<MiclOutcome> {
    let data = PreparedDataset::new(dataset, cfg.pipeline.pooled_size)?;
    let zero = round_zero(&data, segmenter, cfg)?;
    micl_run_from(&data, zero, segmenter, cfg)
}

pub fn micl_run_from(
    data: &PreparedDataset,
    zero: RoundZero,
    segmenter: &dyn SegmenterBackend,
    cfg: &CurriculumConfig,
) -> Result<MiclOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CURRICULUM_SEED_TAG);
    rng.set_stream(u64::MAX);
    let RoundZero {
        mut model,
        mut state,
    } = zero;
    state.threshold = cfg.threshold;
    state.max_rounds = cfg.max_rounds;
    apply_policy(&mut state, &cfg.policy, &mut rng);
    let mut metrics = vec![round_metrics(&state, &data.gt)?];
    let mut states = vec![state.clone()];
    info!(
        "round 0: {} of {} selected",
        state.n_selected(),
        state.records.len()
    );

    let mut retrainings = 0;
    if cfg.max_rounds > 0 {
        loop {
            let training_on_all = state.all_selected();
            if !training_on_all && state.round == cfg.max_rounds {
                for r in state.records.iter_mut().filter(|r| !r.selected) {
                    r.selected = true;
                    r.forced = true;
                    r.selected_round = Some(state.round);
                    r.pseudo_box = r.det_box;
                }
            }
            let final_round = training_on_all || state.round == cfg.max_rounds;
            state.round += 1;
            model = retrain(&state, data, cfg, state.round)?;
            retrainings += 1;
            relocalize(&mut state, &model, segmenter, data, &cfg.pipeline);
            apply_policy(&mut state, &cfg.policy, &mut rng);
            let m = round_metrics(&state, &data.gt)?;
            info!(
                "round {}: {} selected, CorLoc {:.1}",
                m.round, m.n_selected, m.corloc_all
            );
            metrics.push(m);
            states.push(state.clone());
            if final_round {
                break;
            }
        }
    }
    Ok(MiclOutcome {
        model,
        states,
        metrics,
        retrainings,
    })
}

fn apply_policy(state: &mut CurriculumState, policy: &SelectionPolicy, rng: &mut ChaCha8Rng) {
    match policy {
        SelectionPolicy::Consistency => select_easy(state),
        SelectionPolicy::Random { schedule } => {
            let target = schedule
                .get(state.round)
                .or(schedule.last())
                .copied()
                .unwrap_or(state.records.len());
            select_random(state, target, rng);
        }
    }
}
