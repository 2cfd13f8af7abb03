//! Multiple instance curriculum learning (MICL) for weakly supervised object
//! detection.
//!
//! The pipeline trains a most-salient-candidate detector from image labels,
//! turns its saliency into segmentation seeds, grows the seeds into masks,
//! and then alternates re-training and re-localization while admitting only
//! the examples on which detector and segmenter agree.
//!
//! All randomness derives from a single run seed; each consumer XORs it with
//! its own tag (`*_SEED_TAG`) so streams stay independent.

pub mod ablation;
pub mod config;
pub mod curriculum;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod saliency;
pub mod seeding;
pub mod segmenter;
pub mod synthdata;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, Label, LabeledMask};
pub use grid::FeatureGrid;

/// Index of an object category.
pub type CategoryId = usize;

pub const SYNTH_SEED_TAG: u64 = 0x5359_4e54_4841_5441;
pub const DETECTOR_SEED_TAG: u64 = 0x4445_5445_4354_4f52;
pub const CURRICULUM_SEED_TAG: u64 = 0x4355_5252_4943_554c;
