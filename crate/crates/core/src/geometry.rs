//! Axis-aligned box arithmetic in Pascal-VOC pixel coordinates.
//!
//! Every threshold in this crate is compared with strict `>`: a pair of boxes
//! "overlaps beyond" a threshold only when the ratio is greater than it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box ({xmin}, {ymin}, {xmax}, {ymax}): need 0 <= xmin < xmax and 0 <= ymin < ymax")]
    InvalidBox { xmin: f64, ymin: f64, xmax: f64, ymax: f64 },
    #[error("box ({xmin}, {ymin}, {xmax}, {ymax}) lies entirely outside the {width}x{height} image")]
    OutsideImage { xmin: f64, ymin: f64, xmax: f64, ymax: f64, width: f64, height: f64 },
    #[error("image dimensions must be positive and padding non-negative")]
    BadCropArgs,
}

/// A `(xmin, ymin, xmax, ymax)` rectangle with positive area and
/// non-negative coordinates. Construction is the only place the invariant
/// is checked, so zero-area boxes never reach the arithmetic below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin < 0.0 || ymin < 0.0 || xmax <= xmin || ymax <= ymin {
            return Err(GeometryError::InvalidBox { xmin, ymin, xmax, ymax });
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// Area shared with `other`; zero when the boxes only touch or are apart.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Detector output: a box, the index of the query that produced it, and a
/// confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_index: usize,
    pub score: f64,
}

impl ScoredDetection {
    pub fn new(bbox: BoundingBox, class_index: usize, score: f64) -> Self {
        Self { bbox, class_index, score }
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection divided by the area of the smaller box. Reaches 1.0 when one
/// box contains the other, which makes it usable for part-of-object pairs
/// (a helmet inside a person box) where IoU stays small.
pub fn overlap_over_min(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / a.area().min(b.area())
}

/// Greedy non-maximum suppression over detections of a single class.
///
/// Detections are visited by descending score (equal scores keep input
/// order); a detection is dropped when its IoU with an already kept one is
/// greater than `iou_threshold`. The result is sorted by descending score.
pub fn nms(dets: &[ScoredDetection], iou_threshold: f64) -> Vec<ScoredDetection> {
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Indices of `dets` sorted by descending score, stable on ties.
pub(crate) fn score_order(dets: &[ScoredDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Unvalidated rectangle, as a detector might emit before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl RawBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox::new(b.xmin, b.ymin, b.xmax, b.ymax)
    }
}

/// Grow `raw` by `pad` pixels on every side, then clip it to the
/// `[0, width] x [0, height]` image rectangle.
pub fn clamp_crop(raw: RawBox, width: f64, height: f64, pad: f64) -> Result<BoundingBox, GeometryError> {
    if !(width > 0.0 && height > 0.0 && pad >= 0.0) {
        return Err(GeometryError::BadCropArgs);
    }
    let xmin = (raw.xmin - pad).max(0.0);
    let ymin = (raw.ymin - pad).max(0.0);
    let xmax = (raw.xmax + pad).min(width);
    let ymax = (raw.ymax + pad).min(height);
    if xmax <= xmin || ymax <= ymin {
        return Err(GeometryError::OutsideImage {
            xmin: raw.xmin,
            ymin: raw.ymin,
            xmax: raw.xmax,
            ymax: raw.ymax,
            width,
            height,
        });
    }
    BoundingBox::new(xmin, ymin, xmax, ymax)
}
