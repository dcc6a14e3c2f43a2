//! Turns `{person, motorbike, helmet}` detections into Helmet / NoHelmet
//! rider boxes: per-class NMS, person-to-motorbike association, then
//! helmet assignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, nms, overlap_over_min, BoundingBox, ScoredDetection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssocMetric {
    Iou,
    OverlapOverMin,
}

impl AssocMetric {
    pub fn eval(self, a: &BoundingBox, b: &BoundingBox) -> f64 {
        match self {
            AssocMetric::Iou => iou(a, b),
            AssocMetric::OverlapOverMin => overlap_over_min(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{name} must be strictly between 0 and 1, got {value}")]
pub struct ThresholdError {
    pub name: &'static str,
    pub value: f64,
}

pub(crate) fn check_ratio(name: &'static str, value: f64) -> Result<f64, ThresholdError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(ThresholdError { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    pub assoc_metric: AssocMetric,
    pub assoc_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self { assoc_metric: AssocMetric::OverlapOverMin, assoc_threshold: 0.6, nms_threshold: 0.5 }
    }
}

impl AssociationConfig {
    pub fn new(assoc_metric: AssocMetric, assoc_threshold: f64, nms_threshold: f64) -> Result<Self, ThresholdError> {
        Ok(Self {
            assoc_metric,
            assoc_threshold: check_ratio("assoc_threshold", assoc_threshold)?,
            nms_threshold: check_ratio("nms_threshold", nms_threshold)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HelmetLabel {
    Helmet,
    NoHelmet,
}

impl HelmetLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            HelmetLabel::Helmet => "Helmet",
            HelmetLabel::NoHelmet => "NoHelmet",
        }
    }
}

impl std::fmt::Display for HelmetLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiderPair {
    pub person: ScoredDetection,
    pub motorbike: ScoredDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiderVerdict {
    pub person_box: BoundingBox,
    pub motorbike_box: BoundingBox,
    pub label: HelmetLabel,
    pub score: f64,
}

/// NMS on both classes, then keep each person whose best motorbike overlap
/// exceeds the association threshold, bound to that motorbike. Ties on the
/// best overlap go to the earlier (higher scoring) motorbike. Output follows
/// descending person score.
pub fn riders_for_crops(
    persons: &[ScoredDetection],
    motorbikes: &[ScoredDetection],
    cfg: &AssociationConfig,
) -> Vec<RiderPair> {
    let persons = nms(persons, cfg.nms_threshold);
    let motorbikes = nms(motorbikes, cfg.nms_threshold);
    persons
        .into_iter()
        .filter_map(|person| {
            let mut best: Option<(f64, &ScoredDetection)> = None;
            for m in &motorbikes {
                let v = cfg.assoc_metric.eval(&person.bbox, &m.bbox);
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, m));
                }
            }
            match best {
                Some((v, m)) if v > cfg.assoc_threshold => Some(RiderPair { person, motorbike: *m }),
                _ => None,
            }
        })
        .collect()
}

/// Full three-step labelling. Each helmet (after NMS) goes to the single
/// retained rider it overlaps most, provided that overlap exceeds the
/// association threshold; riders holding at least one helmet are `Helmet`,
/// all others `NoHelmet`.
pub fn associate_riders(
    persons: &[ScoredDetection],
    motorbikes: &[ScoredDetection],
    helmets: &[ScoredDetection],
    cfg: &AssociationConfig,
) -> Vec<RiderVerdict> {
    let riders = riders_for_crops(persons, motorbikes, cfg);
    let helmets = nms(helmets, cfg.nms_threshold);
    let mut has_helmet = vec![false; riders.len()];
    for h in &helmets {
        let mut best: Option<(f64, usize)> = None;
        for (i, r) in riders.iter().enumerate() {
            let v = cfg.assoc_metric.eval(&h.bbox, &r.person.bbox);
            if v > cfg.assoc_threshold && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, i));
            }
        }
        if let Some((_, i)) = best {
            has_helmet[i] = true;
        }
    }
    riders
        .iter()
        .zip(has_helmet)
        .map(|(r, helmet)| RiderVerdict {
            person_box: r.person.bbox,
            motorbike_box: r.motorbike.bbox,
            label: if helmet { HelmetLabel::Helmet } else { HelmetLabel::NoHelmet },
            score: r.person.score,
        })
        .collect()
}
