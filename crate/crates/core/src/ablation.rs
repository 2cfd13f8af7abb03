//! Baselines that isolate the contribution of each pipeline component.
//!
//! All four variants share the same initial detector and round-0 boxes:
//!
//! * `msc`: retrain once on every example with the initial detector's box.
//! * `ssg`: retrain once on every example with the segmenter's box.
//! * `mil`: the full loop, but each round admits random examples (as many as
//!   the curriculum admits) with the averaged boxes.
//! * `micl`: the full loop with consistency-based selection.

use serde::{Deserialize, Serialize};

use crate::curriculum::{
    micl_run_from, relocalize, retrain, round_zero, select_easy, CurriculumConfig, CurriculumState,
    ExampleRecord, PreparedDataset, SelectionPolicy,
};
use crate::error::Result;
use crate::evaluation::{corloc_indexed, ErrorHistogram, LocPrediction};
use crate::geometry::BoundingBox;
use crate::segmenter::SegmenterBackend;
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Final CorLoc of each variant on the training set.
    pub msc: f64,
    pub ssg: f64,
    pub mil: f64,
    pub micl: f64,
    /// Round-0 CorLoc of the pseudo boxes of the examples the curriculum selects.
    pub subset_round0: f64,
    pub n_subset_round0: usize,
    /// Round-0 CorLoc of the segmenter boxes over all examples.
    pub ssg_all_round0: f64,
    /// Round-0 CorLoc of the initial detector boxes over all examples.
    pub msc_all_round0: f64,
    pub ssg_errors: ErrorHistogram,
    pub msc_errors: ErrorHistogram,
}

fn predictions(
    records: &[ExampleRecord],
    pick: impl Fn(&ExampleRecord) -> Option<BoundingBox>,
) -> Vec<LocPrediction> {
    records
        .iter()
        .map(|r| LocPrediction {
            image_id: r.image_id,
            category: r.category,
            bbox: pick(r),
        })
        .collect()
}

/// Retrains once on every example that has a box under `pick` and returns
/// the CorLoc of the retrained detector's top boxes.
fn single_shot(
    start: &CurriculumState,
    data: &PreparedDataset,
    segmenter: &dyn SegmenterBackend,
    cfg: &CurriculumConfig,
    pick: impl Fn(&ExampleRecord) -> Option<BoundingBox>,
) -> Result<f64> {
    let mut state = start.clone();
    for r in &mut state.records {
        r.pseudo_box = pick(r);
        r.selected = r.pseudo_box.is_some();
    }
    state.round = 1;
    let model = retrain(&state, data, cfg, 1)?;
    relocalize(&mut state, &model, segmenter, data, &cfg.pipeline);
    corloc_indexed(&predictions(&state.records, |r| r.det_box), &data.gt)
}

pub fn run_ablation(
    dataset: &Dataset,
    segmenter: &dyn SegmenterBackend,
    cfg: &CurriculumConfig,
) -> Result<AblationResult> {
    let data = PreparedDataset::new(dataset, cfg.pipeline.pooled_size)?;
    let cfg = CurriculumConfig {
        policy: SelectionPolicy::Consistency,
        ..cfg.clone()
    };
    let zero = round_zero(&data, segmenter, &cfg)?;
    let records = &zero.state.records;

    let msc_all_round0 = corloc_indexed(&predictions(records, |r| r.det_box), &data.gt)?;
    let ssg_all_round0 = corloc_indexed(&predictions(records, |r| r.ssg_box), &data.gt)?;
    let msc_errors =
        ErrorHistogram::from_predictions(&predictions(records, |r| r.det_box), &data.gt);
    let ssg_errors =
        ErrorHistogram::from_predictions(&predictions(records, |r| r.ssg_box), &data.gt);

    let mut selected = zero.state.clone();
    select_easy(&mut selected);
    let subset: Vec<ExampleRecord> = selected
        .records
        .into_iter()
        .filter(|r| r.selected)
        .collect();
    let subset_round0 = if subset.is_empty() {
        f64::NAN
    } else {
        corloc_indexed(&predictions(&subset, |r| r.pseudo_box), &data.gt)?
    };

    let msc = single_shot(&zero.state, &data, segmenter, &cfg, |r| r.det_box)?;
    let ssg = single_shot(&zero.state, &data, segmenter, &cfg, |r| r.ssg_box)?;

    let micl_run = micl_run_from(&data, zero.clone(), segmenter, &cfg)?;
    let schedule = micl_run.metrics.iter().map(|m| m.n_selected).collect();
    let mil_cfg = CurriculumConfig {
        policy: SelectionPolicy::Random { schedule },
        ..cfg.clone()
    };
    let mil_run = micl_run_from(&data, zero, segmenter, &mil_cfg)?;
    let last =
        |o: &crate::curriculum::MiclOutcome| o.metrics.last().map_or(f64::NAN, |m| m.corloc_all);

    Ok(AblationResult {
        msc,
        ssg,
        mil: last(&mil_run),
        micl: last(&micl_run),
        subset_round0,
        n_subset_round0: subset.len(),
        ssg_all_round0,
        msc_all_round0,
        ssg_errors,
        msc_errors,
    })
}
