//! Brute-force reference implementations used by the property and
//! acceptance tests. Boxes have integer corners so areas can be counted pixel
//! by pixel.

#![allow(dead_code)]

use rand::Rng;
use vlmeval_core::datasets::{GtBox, GtClass};
use vlmeval_core::geometry::{BoundingBox, ScoredDetection};
use vlmeval_core::pipelines::LabeledBox;
use vlmeval_core::postprocess::{AssocMetric, HelmetLabel};

pub type IBox = [i64; 4];

pub fn to_box(b: IBox) -> BoundingBox {
    BoundingBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap()
}

pub fn to_ibox(b: &BoundingBox) -> IBox {
    b.to_array().map(|v| v as i64)
}

fn covers(b: IBox, x: i64, y: i64) -> bool {
    x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
}

pub fn pixel_area(b: IBox) -> i64 {
    let mut n = 0;
    for y in b[1]..b[3] {
        for x in b[0]..b[2] {
            if covers(b, x, y) {
                n += 1;
            }
        }
    }
    n
}

pub fn pixel_inter(a: IBox, b: IBox) -> i64 {
    let mut n = 0;
    for y in a[1]..a[3] {
        for x in a[0]..a[2] {
            if covers(b, x, y) {
                n += 1;
            }
        }
    }
    n
}

pub fn oracle_iou(a: IBox, b: IBox) -> f64 {
    let i = pixel_inter(a, b);
    if i == 0 {
        return 0.0;
    }
    i as f64 / (pixel_area(a) + pixel_area(b) - i) as f64
}

pub fn oracle_iomin(a: IBox, b: IBox) -> f64 {
    let i = pixel_inter(a, b);
    if i == 0 {
        return 0.0;
    }
    i as f64 / pixel_area(a).min(pixel_area(b)) as f64
}

pub fn oracle_metric(metric: AssocMetric, a: IBox, b: IBox) -> f64 {
    match metric {
        AssocMetric::Iou => oracle_iou(a, b),
        AssocMetric::OverlapOverMin => oracle_iomin(a, b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IDet {
    pub b: IBox,
    pub score: f64,
}

pub fn to_dets(v: &[IDet], class_index: usize) -> Vec<ScoredDetection> {
    v.iter().map(|d| ScoredDetection::new(to_box(d.b), class_index, d.score)).collect()
}

/// `i` is visited before `j`: higher score, or equal score and earlier input.
fn before(v: &[IDet], i: usize, j: usize) -> bool {
    v[i].score > v[j].score || (v[i].score == v[j].score && i < j)
}

/// Input indices kept by greedy NMS, in visiting order. Each candidate is
/// checked against every box already kept.
pub fn oracle_nms(v: &[IDet], thr: f64) -> Vec<usize> {
    let mut rank: Vec<(usize, usize)> =
        (0..v.len()).map(|i| ((0..v.len()).filter(|&j| j != i && before(v, j, i)).count(), i)).collect();
    rank.sort();
    let mut kept: Vec<usize> = Vec::new();
    for (_, i) in rank {
        if kept.iter().all(|&k| oracle_iou(v[k].b, v[i].b) <= thr) {
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRider {
    pub person: IBox,
    pub motorbike: IBox,
    pub helmet: bool,
    pub score: f64,
}

/// Rider labels by enumerating every (person, motorbike, helmet) triple
/// against the definitions:
/// - `p` binds to `m` when their overlap exceeds `thr` and no other retained
///   motorbike overlaps `p` more (ties go to the earlier one);
/// - `h` belongs to rider `p` when their overlap exceeds `thr` and no other
///   rider overlaps `h` more (ties go to the earlier rider);
/// - a rider holding any helmet is Helmet.
pub fn oracle_associate(
    persons: &[IDet],
    motorbikes: &[IDet],
    helmets: &[IDet],
    metric: AssocMetric,
    thr: f64,
    nms_thr: f64,
) -> Vec<OracleRider> {
    let p: Vec<IDet> = oracle_nms(persons, nms_thr).into_iter().map(|i| persons[i]).collect();
    let m: Vec<IDet> = oracle_nms(motorbikes, nms_thr).into_iter().map(|i| motorbikes[i]).collect();
    let h: Vec<IDet> = oracle_nms(helmets, nms_thr).into_iter().map(|i| helmets[i]).collect();
    let ov = |a: IBox, b: IBox| oracle_metric(metric, a, b);

    let bound = |pi: usize, mi: usize| {
        let v = ov(p[pi].b, m[mi].b);
        v > thr
            && (0..m.len()).all(|o| {
                o == mi || {
                    let w = ov(p[pi].b, m[o].b);
                    w < v || (w == v && o > mi)
                }
            })
    };
    let rider_of = |pi: usize| (0..m.len()).find(|&mi| bound(pi, mi));
    let riders: Vec<(usize, usize)> = (0..p.len()).filter_map(|pi| rider_of(pi).map(|mi| (pi, mi))).collect();

    let mut out = Vec::new();
    for (ri, &(pi, mi)) in riders.iter().enumerate() {
        let mut helmet = false;
        for hd in h.iter() {
            let v = ov(hd.b, p[pi].b);
            let assigned = v > thr
                && riders.iter().enumerate().all(|(rj, &(pj, _))| {
                    rj == ri || {
                        let w = ov(hd.b, p[pj].b);
                        w <= thr || w < v || (w == v && rj > ri)
                    }
                });
            helmet |= assigned;
        }
        out.push(OracleRider { person: p[pi].b, motorbike: m[mi].b, helmet, score: p[pi].score });
    }
    out
}

/// Greedy matching counts (tp, fp, fn) for one class of one image: each
/// prediction, by descending score, takes the unmatched ground truth with the
/// highest IoU at or above `match_iou`.
pub fn oracle_match(preds: &[(IBox, f64)], gts: &[IBox], match_iou: f64) -> (usize, usize, usize) {
    let dets: Vec<IDet> = preds.iter().map(|&(b, score)| IDet { b, score }).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by_key(|&i| (0..dets.len()).filter(|&j| j != i && before(&dets, j, i)).count());
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for i in order {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = oracle_iou(dets[i].b, *gt);
            if !taken[g] && v >= match_iou && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp, taken.iter().filter(|t| !**t).count())
}

const SCORES: [f64; 5] = [0.3, 0.5, 0.5, 0.7, 0.9];

pub fn random_box(rng: &mut impl Rng, span: i64, min: i64, max: i64) -> IBox {
    let w = rng.random_range(min..=max);
    let h = rng.random_range(min..=max);
    let x = rng.random_range(0..=span);
    let y = rng.random_range(0..=span);
    [x, y, x + w, y + h]
}

pub fn random_dets(rng: &mut impl Rng, n: usize, span: i64, min: i64, max: i64) -> Vec<IDet> {
    (0..n)
        .map(|_| IDet { b: random_box(rng, span, min, max), score: SCORES[rng.random_range(0..SCORES.len())] })
        .collect()
}

/// A rider scene: persons, motorbikes and small helmets in a shared area so
/// that associations happen often.
pub fn random_rider_scene(rng: &mut impl Rng, max_per_class: usize) -> (Vec<IDet>, Vec<IDet>, Vec<IDet>) {
    let persons = {
        let n = rng.random_range(0..=max_per_class);
        random_dets(rng, n, 24, 4, 14)
    };
    let motorbikes = {
        let n = rng.random_range(0..=max_per_class);
        random_dets(rng, n, 24, 5, 16)
    };
    let helmets = {
        let n = rng.random_range(0..=max_per_class);
        random_dets(rng, n, 30, 1, 5)
    };
    (persons, motorbikes, helmets)
}

pub fn labeled(b: IBox, label: HelmetLabel, score: f64) -> LabeledBox {
    LabeledBox { label, bbox: to_box(b), score }
}

pub fn gt(b: IBox, class: GtClass) -> GtBox {
    GtBox { class, bbox: to_box(b) }
}
