//! Axis-aligned boxes, labeled masks and connected components.
//!
//! Boxes use half-open integer pixel coordinates: a box covers the pixels
//! `x_min <= x < x_max`, `y_min <= y < y_max`. Adjacent boxes therefore have
//! an IoU of exactly zero and the area is `(x_max - x_min) * (y_max - y_min)`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::CategoryId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl BoundingBox {
    /// Creates a box, rejecting zero-area or inverted extents.
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox {
                x_min: x_min as i64,
                y_min: y_min as i64,
                x_max: x_max as i64,
                y_max: y_max as i64,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box of `width x height` pixels whose top-left pixel is `(x, y)`.
    pub fn from_origin(x: u32, y: u32, width: u32, height: u32) -> Result<Self> {
        Self::new(x, y, x + width, y + height)
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }

    pub fn y_min(&self) -> u32 {
        self.y_min
    }

    pub fn x_max(&self) -> u32 {
        self.x_max
    }

    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Number of pixels shared with `other`.
    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self
            .x_max
            .min(other.x_max)
            .saturating_sub(self.x_min.max(other.x_min));
        let h = self
            .y_max
            .min(other.y_max)
            .saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max as usize <= width && self.y_max as usize <= height
    }

    pub fn ensure_within(&self, width: usize, height: usize) -> Result<()> {
        if self.fits_within(width, height) {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds(self.to_array(), width, height))
        }
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [u32; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Coordinate-wise mean of a detector box and a segmenter box.
///
/// Half-integer averages round toward the detector coordinate, so the
/// argument order matters only on those ties.
pub fn fuse_boxes(detector: &BoundingBox, segmenter: &BoundingBox) -> BoundingBox {
    fn mean(toward: u32, other: u32) -> u32 {
        let sum = toward as u64 + other as u64;
        if sum % 2 == 1 && toward > other {
            (sum / 2 + 1) as u32
        } else {
            (sum / 2) as u32
        }
    }
    let fused = BoundingBox {
        x_min: mean(detector.x_min, segmenter.x_min),
        y_min: mean(detector.y_min, segmenter.y_min),
        x_max: mean(detector.x_max, segmenter.x_max),
        y_max: mean(detector.y_max, segmenter.y_max),
    };
    debug_assert!(fused.x_min < fused.x_max && fused.y_min < fused.y_max);
    fused
}

/// Per-pixel label of a mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Label {
    #[default]
    Unlabeled,
    Background,
    Object(CategoryId),
}

impl Label {
    pub fn category(self) -> Option<CategoryId> {
        match self {
            Label::Object(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_unlabeled(self) -> bool {
        matches!(self, Label::Unlabeled)
    }
}

/// A `width x height` grid holding exactly one [`Label`] per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledMask {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl LabeledMask {
    pub fn new(width: usize, height: usize, fill: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![fill; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(mismatch(width * height, labels.len()));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: Label) {
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn ensure_same_size(&self, other: &LabeledMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// 4-connected components of pixels carrying `label`, in row-major
    /// order of their first pixel.
    pub fn components(&self, label: Label) -> Vec<Component> {
        let mut seen = vec![false; self.labels.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.labels.len() {
            if seen[start] || self.labels[start] != label {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Component {
                pixels: 0,
                x_min: u32::MAX,
                y_min: u32::MAX,
                x_max: 0,
                y_max: 0,
            };
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % self.width, i / self.width);
                comp.add(x as u32, y as u32);
                let mut visit = |j: usize| {
                    if !seen[j] && self.labels[j] == label {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
            }
            out.push(comp);
        }
        out
    }
}

/// Summary of one connected component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub pixels: usize,
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl Component {
    fn add(&mut self, x: u32, y: u32) {
        self.pixels += 1;
        self.x_min = self.x_min.min(x);
        self.y_min = self.y_min.min(y);
        self.x_max = self.x_max.max(x + 1);
        self.y_max = self.y_max.max(y + 1);
    }

    /// Tight box around the component's pixels.
    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }
}

/// Tight box around the largest 4-connected component of `category`.
///
/// Size ties go to the component whose box has the lexicographically
/// smallest `(y_min, x_min)`. Returns `None` when no pixel carries the label.
pub fn largest_component_box(mask: &LabeledMask, category: CategoryId) -> Option<BoundingBox> {
    mask.components(Label::Object(category))
        .into_iter()
        .min_by(|a, b| {
            b.pixels
                .cmp(&a.pixels)
                .then(a.y_min.cmp(&b.y_min))
                .then(a.x_min.cmp(&b.x_min))
        })
        .map(|c| c.bounding_box())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: u32, b: u32, c: u32, d: u32) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20, 20, 30, 30)), 0.0);
        assert_eq!(iou(&a, &bx(0, 0, 10, 20)), 0.5);
        // Touching edges share no pixel.
        assert_eq!(iou(&a, &bx(10, 0, 20, 10)), 0.0);
    }

    #[test]
    fn zero_area_rejected() {
        assert!(BoundingBox::new(3, 3, 3, 5).is_err());
        assert!(BoundingBox::new(4, 3, 3, 5).is_err());
        assert!(BoundingBox::try_from([0, 0, 1, 1]).is_ok());
    }

    #[test]
    fn fuse_examples() {
        let a = bx(0, 0, 10, 10);
        assert_eq!(fuse_boxes(&a, &a), a);
        assert_eq!(fuse_boxes(&a, &bx(10, 10, 20, 20)), bx(5, 5, 15, 15));
        assert_eq!(fuse_boxes(&bx(0, 0, 4, 4), &bx(0, 0, 8, 8)), bx(0, 0, 6, 6));
    }

    #[test]
    fn fuse_ties_go_to_detector() {
        let det = bx(0, 0, 3, 3);
        let seg = bx(1, 1, 6, 6);
        // (0+1)/2 -> 0, (3+6)/2 -> 4 (closer to 3 than 5).
        assert_eq!(fuse_boxes(&det, &seg), bx(0, 0, 4, 4));
        assert_eq!(fuse_boxes(&seg, &det), bx(1, 1, 5, 5));
    }

    fn mask_from(rows: &[&str]) -> LabeledMask {
        let h = rows.len();
        let w = rows[0].len();
        let labels = rows
            .iter()
            .flat_map(|r| {
                r.chars().map(|ch| match ch {
                    '.' => Label::Unlabeled,
                    'b' => Label::Background,
                    d => Label::Object(d.to_digit(10).unwrap() as usize),
                })
            })
            .collect();
        LabeledMask::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn largest_component_examples() {
        let m = mask_from(&[
            "00...", //
            "00.1.", //
            "0..1.", //
            "...1.", //
            ".....",
        ]);
        // Five-pixel component of category 0 wins over the three-pixel one of 1.
        assert_eq!(largest_component_box(&m, 0), Some(bx(0, 0, 2, 3)));
        assert_eq!(largest_component_box(&m, 1), Some(bx(3, 1, 4, 4)));
        assert_eq!(largest_component_box(&m, 2), None);

        let m = mask_from(&["0...0", "0...0", "0...0", "....0", "0000."]);
        // Sizes 3, 4 and 4: the two 4-pixel components tie; (y_min, x_min) decides.
        assert_eq!(largest_component_box(&m, 0), Some(bx(4, 0, 5, 4)));
    }

    #[test]
    fn single_pixel_box() {
        let mut m = LabeledMask::new(6, 6, Label::Unlabeled);
        m.set(2, 3, Label::Object(4));
        assert_eq!(largest_component_box(&m, 4), Some(bx(2, 3, 3, 4)));
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = mask_from(&["0.", ".0"]);
        assert_eq!(m.components(Label::Object(0)).len(), 2);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..20, 0u32..20, 1u32..12, 1u32..12)
            .prop_map(|(x, y, w, h)| BoundingBox::from_origin(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn fuse_is_commutative_off_ties_and_valid(a in arb_box(), b in arb_box()) {
            let f = fuse_boxes(&a, &b);
            prop_assert!(f.x_min() < f.x_max() && f.y_min() < f.y_max());
            prop_assert_eq!(fuse_boxes(&a, &a), a);
            let g = fuse_boxes(&b, &a);
            let ca = a.to_array();
            let cb = b.to_array();
            for i in 0..4 {
                if (ca[i] + cb[i]) % 2 == 0 {
                    prop_assert_eq!(f.to_array()[i], g.to_array()[i]);
                }
            }
        }

        #[test]
        fn largest_component_box_is_tight(bits in proptest::collection::vec(0u8..3, 36)) {
            let labels: Vec<Label> = bits
                .iter()
                .map(|&b| if b == 0 { Label::Object(0) } else { Label::Background })
                .collect();
            let mask = LabeledMask::from_labels(6, 6, labels).unwrap();
            let comps = mask.components(Label::Object(0));
            match largest_component_box(&mask, 0) {
                None => prop_assert!(comps.is_empty()),
                Some(b) => {
                    let best = comps.iter().map(|c| c.pixels).max().unwrap();
                    prop_assert!(comps.iter().any(|c| c.pixels == best && c.bounding_box() == b));
                    // every row and column of the box touches the component's pixels
                    let (x0, y0, x1, y1) = (b.x_min(), b.y_min(), b.x_max(), b.y_max());
                    let on = |x: u32, y: u32| mask.get(x as usize, y as usize) == Label::Object(0);
                    prop_assert!((x0..x1).any(|x| on(x, y0)));
                    prop_assert!((x0..x1).any(|x| on(x, y1 - 1)));
                    prop_assert!((y0..y1).any(|y| on(x0, y)));
                    prop_assert!((y0..y1).any(|y| on(x1 - 1, y)));
                }
            }
        }
    }
}
