//! Synthetic feature-space scenes with planted discriminative parts.
//!
//! Every object is a rectangular body whose pixels carry a moderate feature
//! on the category's body channel, with a brighter one-pixel rim. Inside the
//! body sits a small part rectangle that additionally lights up a part
//! channel with a much larger value. A classifier trained from image labels
//! latches onto the part, while seed growing from the part spreads over the
//! whole body and, when two same-category objects touch, over both.
//!
//! Some objects also sit in a context halo: a ring around the body whose
//! pixels carry a weak background feature and a faint copy of the body
//! feature. The halo is close enough to the
//! body in feature space that seed growing absorbs it, so the segmenter's
//! box for such an object is consistently too large.
//!
//! Channel layout for `n` categories: `c` body of category `c`, `n + c`
//! discriminative part of `c`, `2n` a part shared by all categories, `2n + 1`
//! background. Remaining channels only carry noise.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::GroundTruthObject;
use crate::geometry::BoundingBox;
use crate::grid::FeatureGrid;
use crate::{CategoryId, SYNTH_SEED_TAG};

const PLACEMENT_RETRIES: usize = 64;
/// Minimum pixel gap between objects that are not deliberately touching.
const OBJECT_GAP: u32 = 2;
/// Fraction of each body side added around it for the oversized proposal.
const OVERSIZE_MARGIN: f64 = 0.6;
/// Fraction of each body side covered by the context halo on either side.
const CONTEXT_MARGIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_images: usize,
    pub n_categories: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of body side lengths in pixels.
    pub body_size: (u32, u32),
    /// Range of part area / body area.
    pub part_ratio: (f64, f64),
    /// Probability that a part uses the category's own part channel rather
    /// than the shared one.
    pub discriminative_part_prob: f64,
    /// Probability that an object is placed touching the previous object
    /// with the same category.
    pub cluster_prob: f64,
    /// Probability that an object sits in a context halo.
    pub context_prob: f64,
    pub body_level: f64,
    pub rim_level: f64,
    pub part_level: f64,
    pub background_level: f64,
    /// Background-channel value inside context halos.
    pub context_level: f64,
    /// Body-channel value of the object's category inside its halo.
    pub context_body_level: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            n_categories: 3,
            height: 32,
            width: 32,
            channels: 8,
            objects_per_image: (1, 3),
            body_size: (8, 14),
            part_ratio: (0.1, 0.2),
            discriminative_part_prob: 0.6,
            cluster_prob: 0.3,
            context_prob: 0.4,
            body_level: 0.15,
            rim_level: 0.25,
            part_level: 0.45,
            background_level: 0.8,
            context_level: 0.3,
            context_body_level: 0.08,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_categories == 0 {
            return bad("n_categories must be positive".into());
        }
        if self.channels < 2 * self.n_categories + 2 {
            return bad(format!(
                "{} categories need at least {} channels, got {}",
                self.n_categories,
                2 * self.n_categories + 2,
                self.channels
            ));
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || lo > hi {
            return bad(format!("invalid objects-per-image range {lo}..={hi}"));
        }
        let (smin, smax) = self.body_size;
        if smin < 3 || smin > smax || smax as usize > self.width.min(self.height) {
            return bad(format!("invalid body size range {smin}..={smax}"));
        }
        let (rlo, rhi) = self.part_ratio;
        if !(rlo > 0.0 && rlo <= rhi && rhi < 1.0) {
            return bad(format!(
                "part ratio range must lie in (0, 1), got {rlo}..={rhi}"
            ));
        }
        for (name, p) in [
            ("discriminative_part_prob", self.discriminative_part_prob),
            ("cluster_prob", self.cluster_prob),
            ("context_prob", self.context_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Generator-side description of one object, not part of the file format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedObject {
    pub category: CategoryId,
    pub body: BoundingBox,
    pub part: BoundingBox,
    pub discriminative: bool,
    /// Outer box of the context halo, if any.
    pub context: Option<BoundingBox>,
}

impl PlantedObject {
    /// Region other objects must keep clear of.
    pub fn footprint(&self) -> BoundingBox {
        self.context.unwrap_or(self.body)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub id: u64,
    pub features: FeatureGrid,
    /// Sorted, deduplicated categories present in the image.
    pub labels: Vec<CategoryId>,
    pub gt: Vec<GroundTruthObject>,
    pub proposals: Vec<BoundingBox>,
    /// Empty for scenes read back from disk.
    pub planted: Vec<PlantedObject>,
}

impl SyntheticScene {
    pub fn height(&self) -> usize {
        self.features.height()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    /// Checks the label, ground truth and proposal invariants.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut cats: Vec<CategoryId> = self.gt.iter().map(|g| g.category).collect();
        cats.sort_unstable();
        cats.dedup();
        if cats != self.labels {
            return Err(Error::Format(format!(
                "image {}: labels {:?} do not match ground truth categories {:?}",
                self.id, self.labels, cats
            )));
        }
        if !self.gt.is_empty() && self.proposals.is_empty() {
            return Err(Error::Format(format!("image {} has no proposals", self.id)));
        }
        for g in &self.gt {
            g.bbox.ensure_within(w, h)?;
            if g.image_id != self.id {
                return Err(Error::Format(format!(
                    "ground truth for image {} stored on image {}",
                    g.image_id, self.id
                )));
            }
        }
        for b in &self.proposals {
            b.ensure_within(w, h)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub n_categories: usize,
    pub images: Vec<SyntheticScene>,
}

impl Dataset {
    pub fn ground_truth(&self) -> Vec<GroundTruthObject> {
        self.images
            .iter()
            .flat_map(|s| s.gt.iter().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.images {
            s.validate()?;
            if let Some(&c) = s.labels.last() {
                if c >= self.n_categories {
                    return Err(Error::Format(format!(
                        "image {} has category {c} but the dataset has {}",
                        s.id, self.n_categories
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates a dataset. Image `i` draws from its own ChaCha stream, so the
/// result does not depend on the thread count.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let images = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SYNTH_SEED_TAG);
            rng.set_stream(i as u64);
            generate_scene(cfg, i as u64, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        n_categories: cfg.n_categories,
        images,
    })
}

fn generate_scene(cfg: &GenConfig, id: u64, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    let (h, w, n) = (cfg.height, cfg.width, cfg.n_categories);
    let n_objects = rng.random_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
    let mut planted: Vec<PlantedObject> = Vec::with_capacity(n_objects);
    // Indices into `planted` of objects placed touching another one.
    let mut clusters: Vec<(usize, usize)> = Vec::new();

    for _ in 0..n_objects {
        let with_context = rng.random_bool(cfg.context_prob);
        let twin_of = planted
            .last()
            .filter(|p| p.context.is_none() && !with_context)
            .filter(|_| rng.random_bool(cfg.cluster_prob))
            .map(|_| planted.len() - 1);
        let category = match twin_of {
            Some(j) => planted[j].category,
            None => rng.random_range(0..n),
        };
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let bw = rng.random_range(cfg.body_size.0..=cfg.body_size.1);
            let bh = rng.random_range(cfg.body_size.0..=cfg.body_size.1);
            let candidate = match twin_of {
                Some(j) => touching_box(&planted[j].body, bw, bh, w, h, rng),
                None => free_box(bw, bh, w, h, rng),
            };
            let Some(body) = candidate else { continue };
            let context = if with_context {
                match context_box(&body, w, h) {
                    Some(b) => Some(b),
                    None => continue,
                }
            } else {
                None
            };
            let footprint = context.unwrap_or(body);
            let clear = planted.iter().enumerate().all(|(j, p)| {
                if Some(j) == twin_of {
                    body.intersection_area(&p.body) == 0
                } else {
                    gap_at_least(&footprint, &p.footprint(), OBJECT_GAP)
                }
            });
            if clear {
                placed = Some((body, context));
                break;
            }
        }
        let Some((body, context)) = placed else {
            info!("image {id}: no room for a category {category} object, skipping it");
            continue;
        };
        let part = place_part(&body, cfg.part_ratio, rng);
        let discriminative = rng.random_bool(cfg.discriminative_part_prob);
        if let Some(j) = twin_of {
            clusters.push((j, planted.len()));
        }
        planted.push(PlantedObject {
            category,
            body,
            part,
            discriminative,
            context,
        });
    }

    let features = render(cfg, &planted, rng)?;
    let gt: Vec<GroundTruthObject> = planted
        .iter()
        .map(|p| GroundTruthObject {
            image_id: id,
            category: p.category,
            bbox: p.body,
        })
        .collect();
    let mut labels: Vec<CategoryId> = gt.iter().map(|g| g.category).collect();
    labels.sort_unstable();
    labels.dedup();
    let proposals = proposals(&planted, &clusters, w, h);
    Ok(SyntheticScene {
        id,
        features,
        labels,
        gt,
        proposals,
        planted,
    })
}

fn free_box(bw: u32, bh: u32, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Option<BoundingBox> {
    let x = rng.random_range(0..=w as u32 - bw);
    let y = rng.random_range(0..=h as u32 - bh);
    BoundingBox::from_origin(x, y, bw, bh).ok()
}

/// A box sharing an edge with `other`, overlapping it by at least half its
/// own extent along that edge.
fn touching_box(
    other: &BoundingBox,
    bw: u32,
    bh: u32,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    let (w, h) = (w as i64, h as i64);
    let (ox0, oy0, ox1, oy1) = (
        other.x_min() as i64,
        other.y_min() as i64,
        other.x_max() as i64,
        other.y_max() as i64,
    );
    let (bw, bh) = (bw as i64, bh as i64);
    let side = rng.random_range(0..4);
    let slide = |lo: i64, hi: i64, len: i64, rng: &mut ChaCha8Rng| {
        // Start positions that keep at least half of `len` overlapping [lo, hi).
        let a = lo - len / 2;
        let b = hi - len + len / 2;
        rng.random_range(a.min(b)..=a.max(b))
    };
    let (x, y) = match side {
        0 => (ox1, slide(oy0, oy1, bh, rng)),
        1 => (ox0 - bw, slide(oy0, oy1, bh, rng)),
        2 => (slide(ox0, ox1, bw, rng), oy1),
        _ => (slide(ox0, ox1, bw, rng), oy0 - bh),
    };
    if x < 0 || y < 0 || x + bw > w || y + bh > h {
        return None;
    }
    BoundingBox::from_origin(x as u32, y as u32, bw as u32, bh as u32).ok()
}

/// The body grown by [`CONTEXT_MARGIN`] of its size on every side; `None`
/// if that leaves the image.
fn context_box(body: &BoundingBox, w: usize, h: usize) -> Option<BoundingBox> {
    let mx = (body.width() as f64 * CONTEXT_MARGIN).ceil() as u32;
    let my = (body.height() as f64 * CONTEXT_MARGIN).ceil() as u32;
    if body.x_min() < mx || body.y_min() < my {
        return None;
    }
    let b = BoundingBox::new(
        body.x_min() - mx,
        body.y_min() - my,
        body.x_max() + mx,
        body.y_max() + my,
    )
    .ok()?;
    b.fits_within(w, h).then_some(b)
}

fn gap_at_least(a: &BoundingBox, b: &BoundingBox, gap: u32) -> bool {
    a.x_max() + gap <= b.x_min()
        || b.x_max() + gap <= a.x_min()
        || a.y_max() + gap <= b.y_min()
        || b.y_max() + gap <= a.y_min()
}

/// A sub-rectangle with the requested area fraction, kept off the rim
/// when the body is large enough.
fn place_part(body: &BoundingBox, ratio: (f64, f64), rng: &mut ChaCha8Rng) -> BoundingBox {
    let r = rng.random_range(ratio.0..=ratio.1);
    let s = r.sqrt();
    let (bw, bh) = (body.width(), body.height());
    let pw = ((bw as f64 * s).round() as u32).clamp(1, bw);
    let ph = ((bh as f64 * s).round() as u32).clamp(1, bh);
    let inner = |len: u32, part: u32| {
        if len >= part + 2 {
            (1, len - part - 1)
        } else {
            (0, len - part)
        }
    };
    let (xl, xh) = inner(bw, pw);
    let (yl, yh) = inner(bh, ph);
    let x = body.x_min() + rng.random_range(xl..=xh);
    let y = body.y_min() + rng.random_range(yl..=yh);
    BoundingBox::from_origin(x, y, pw, ph).expect("part lies inside a valid body")
}

fn render(cfg: &GenConfig, planted: &[PlantedObject], rng: &mut ChaCha8Rng) -> Result<FeatureGrid> {
    let (h, w, k, n) = (cfg.height, cfg.width, cfg.channels, cfg.n_categories);
    let mut grid = FeatureGrid::zeros(h, w, k)?;
    for y in 0..h {
        for x in 0..w {
            grid.set(x, y, 2 * n + 1, cfg.background_level);
        }
    }
    for p in planted {
        let Some(c) = p.context else { continue };
        for y in c.y_min()..c.y_max() {
            for x in c.x_min()..c.x_max() {
                grid.set(x as usize, y as usize, 2 * n + 1, cfg.context_level);
                grid.set(x as usize, y as usize, p.category, cfg.context_body_level);
            }
        }
    }
    for p in planted {
        let b = &p.body;
        for y in b.y_min()..b.y_max() {
            for x in b.x_min()..b.x_max() {
                let (xu, yu) = (x as usize, y as usize);
                let rim =
                    x == b.x_min() || y == b.y_min() || x + 1 == b.x_max() || y + 1 == b.y_max();
                grid.set(xu, yu, 2 * n + 1, 0.0);
                let level = if rim { cfg.rim_level } else { cfg.body_level };
                grid.set(xu, yu, p.category, level);
                if p.part.contains_pixel(x, y) {
                    let ch = if p.discriminative {
                        n + p.category
                    } else {
                        2 * n
                    };
                    grid.set(xu, yu, ch, cfg.part_level);
                }
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    for v in grid.as_mut_slice() {
        // Stored as f32 so that the file format round-trips exactly.
        *v = (*v + noise.sample(rng)) as f32 as f64;
    }
    Ok(grid)
}

/// Planted boxes for every object, union boxes of touching pairs, then a
/// coarse square grid and the whole image, without duplicates.
fn proposals(
    planted: &[PlantedObject],
    clusters: &[(usize, usize)],
    w: usize,
    h: usize,
) -> Vec<BoundingBox> {
    let mut out: Vec<BoundingBox> = Vec::new();
    let push = |b: BoundingBox, out: &mut Vec<BoundingBox>| {
        if !out.contains(&b) {
            out.push(b);
        }
    };
    for p in planted {
        push(p.part, &mut out);
        push(p.body, &mut out);
        push(oversized(&p.body, w, h), &mut out);
        if let Some(c) = p.context {
            push(c, &mut out);
        }
    }
    for &(a, b) in clusters {
        let (p, q) = (&planted[a].body, &planted[b].body);
        let union = BoundingBox::new(
            p.x_min().min(q.x_min()),
            p.y_min().min(q.y_min()),
            p.x_max().max(q.x_max()),
            p.y_max().max(q.y_max()),
        )
        .expect("union of valid boxes");
        push(union, &mut out);
    }
    let cell = (w.min(h) / 4).max(1) as u32;
    for m in 1..=4u32 {
        let side = cell * m;
        if side as usize > w || side as usize > h {
            break;
        }
        let mut y = 0;
        while (y + side) as usize <= h {
            let mut x = 0;
            while (x + side) as usize <= w {
                push(
                    BoundingBox::from_origin(x, y, side, side).expect("positive side"),
                    &mut out,
                );
                x += cell;
            }
            y += cell;
        }
    }
    push(
        BoundingBox::new(0, 0, w as u32, h as u32).expect("nonempty image"),
        &mut out,
    );
    out
}

fn oversized(body: &BoundingBox, w: usize, h: usize) -> BoundingBox {
    let mx = (body.width() as f64 * OVERSIZE_MARGIN).ceil() as u32;
    let my = (body.height() as f64 * OVERSIZE_MARGIN).ceil() as u32;
    BoundingBox::new(
        body.x_min().saturating_sub(mx),
        body.y_min().saturating_sub(my),
        (body.x_max() + mx).min(w as u32),
        (body.y_max() + my).min(h as u32),
    )
    .expect("dilation of a valid box")
}

/// Outcome of [`planted_bias_check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlantReport {
    pub images: usize,
    pub satisfied: usize,
    /// Ids of images where some part is less than twice as strong as its body.
    pub violations: Vec<u64>,
}

impl PlantReport {
    /// Fraction of images satisfying the plant; `None` for an empty dataset.
    pub fn fraction(&self) -> Option<f64> {
        (self.images > 0).then(|| self.satisfied as f64 / self.images as f64)
    }
}

/// Checks that in every image each object's part pixels have a mean feature
/// norm at least twice that of the remaining body pixels.
pub fn planted_bias_check(dataset: &Dataset) -> PlantReport {
    let mut report = PlantReport::default();
    for s in &dataset.images {
        report.images += 1;
        let ok = s.planted.iter().all(|p| {
            let (mut part, mut np, mut body, mut nb) = (0.0, 0usize, 0.0, 0usize);
            for y in p.body.y_min()..p.body.y_max() {
                for x in p.body.x_min()..p.body.x_max() {
                    let norm = s
                        .features
                        .cell(x as usize, y as usize)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    if p.part.contains_pixel(x, y) {
                        part += norm;
                        np += 1;
                    } else {
                        body += norm;
                        nb += 1;
                    }
                }
            }
            nb == 0 || part / np as f64 >= 2.0 * body / nb as f64
        });
        if ok {
            report.satisfied += 1;
        } else {
            report.violations.push(s.id);
        }
    }
    report
}
