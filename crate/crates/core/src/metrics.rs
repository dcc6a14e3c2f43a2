//! Confusion-matrix scoring for classification runs and greedy IoU matching
//! for detection runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{ClassificationManifest, DetectionManifest, GtBox, TrueClass};
use crate::geometry::iou;
use crate::pipelines::{LabeledBox, SampleResult};
use crate::postprocess::HelmetLabel;
use crate::prompts::Verdict;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{results} results for {samples} manifest samples")]
    LengthMismatch { results: usize, samples: usize },
    #[error("result {index} is for {found:?}, manifest has {expected:?}")]
    OrderMismatch { index: usize, expected: String, found: String },
}

/// `num / den`, or 0 when the denominator is 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Binary confusion counts. Unknown verdicts and failed samples are also
/// counted into `fp`/`fn` by their ground truth, and tallied on their own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub unknown: usize,
    pub failed: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Add one scored sample; `None` is a failed sample.
    pub fn add(&mut self, truth: TrueClass, verdict: Option<Verdict>) {
        match verdict {
            None => self.failed += 1,
            Some(Verdict::Unknown) => self.unknown += 1,
            _ => {}
        }
        match (truth, verdict) {
            (TrueClass::Positive, Some(Verdict::Positive)) => self.tp += 1,
            (TrueClass::Positive, _) => self.fn_ += 1,
            (TrueClass::Negative, Some(Verdict::Negative)) => self.tn += 1,
            (TrueClass::Negative, _) => self.fp += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub mean_latency_s: f64,
}

/// Mean of the per-sample latencies that are present, in seconds.
pub fn mean_latency_s(results: &[SampleResult]) -> f64 {
    let lat: Vec<f64> = results.iter().filter_map(|r| r.latency_ms).collect();
    if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<f64>() / lat.len() as f64 / 1000.0
    }
}

fn check_aligned<'a>(
    results: &[SampleResult],
    ids: impl ExactSizeIterator<Item = &'a str>,
) -> Result<(), MetricsError> {
    if results.len() != ids.len() {
        return Err(MetricsError::LengthMismatch { results: results.len(), samples: ids.len() });
    }
    for (index, (r, id)) in results.iter().zip(ids).enumerate() {
        if r.sample_id != id {
            return Err(MetricsError::OrderMismatch { index, expected: id.to_string(), found: r.sample_id.clone() });
        }
    }
    Ok(())
}

pub fn score_classification(
    results: &[SampleResult],
    manifest: &ClassificationManifest,
) -> Result<(ConfusionMatrix, ClassReport), MetricsError> {
    check_aligned(results, manifest.samples.iter().map(|s| s.id.as_str()))?;
    let mut cm = ConfusionMatrix::default();
    for (r, s) in results.iter().zip(&manifest.samples) {
        cm.add(s.true_class, if r.is_failure() { None } else { r.verdict() });
    }
    let report = ClassReport {
        precision: cm.precision(),
        recall: cm.recall(),
        f1: cm.f1(),
        accuracy: cm.accuracy(),
        mean_latency_s: mean_latency_s(results),
    };
    Ok((cm, report))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    fn merge(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDetectionScore {
    pub class: HelmetLabel,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub match_iou: f64,
    pub classes: Vec<ClassDetectionScore>,
    pub mean_latency_s: f64,
    pub failed: usize,
    pub unknown_crops: usize,
}

impl DetectionReport {
    pub fn class(&self, label: HelmetLabel) -> &ClassDetectionScore {
        self.classes.iter().find(|c| c.class == label).expect("both classes are always scored")
    }
}

/// Match predictions of one class in one image. Predictions are taken by
/// descending score (stable); each takes the unmatched ground-truth box with
/// the highest IoU, provided IoU >= `match_iou`.
pub fn match_image(preds: &[LabeledBox], gts: &[GtBox], label: HelmetLabel, match_iou: f64) -> MatchCounts {
    let mut preds: Vec<&LabeledBox> = preds.iter().filter(|p| p.label == label).collect();
    preds.sort_by(|a, b| b.score.total_cmp(&a.score));
    let gts: Vec<&GtBox> = gts.iter().filter(|g| g.class.helmet_label() == Some(label)).collect();
    let mut taken = vec![false; gts.len()];
    let mut counts = MatchCounts::default();
    for p in preds {
        let mut best: Option<(f64, usize)> = None;
        for (i, g) in gts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v >= match_iou && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, i));
            }
        }
        match best {
            Some((_, i)) => {
                taken[i] = true;
                counts.tp += 1;
            }
            None => counts.fp += 1,
        }
    }
    counts.fn_ = taken.iter().filter(|t| !**t).count();
    counts
}

pub fn score_detection(
    results: &[SampleResult],
    manifest: &DetectionManifest,
    match_iou: f64,
) -> Result<DetectionReport, MetricsError> {
    check_aligned(results, manifest.samples.iter().map(|s| s.id.as_str()))?;
    let labels = [HelmetLabel::Helmet, HelmetLabel::NoHelmet];
    let mut totals = [MatchCounts::default(); 2];
    let mut failed = 0;
    let mut unknown_crops = 0;
    for (r, s) in results.iter().zip(&manifest.samples) {
        let preds: &[LabeledBox] = match r.detections() {
            Some(d) => {
                unknown_crops += d.unknown_crops;
                &d.boxes
            }
            None => {
                failed += 1;
                &[]
            }
        };
        for (total, &label) in totals.iter_mut().zip(&labels) {
            total.merge(match_image(preds, &s.ground_truth, label, match_iou));
        }
    }
    let classes = labels
        .iter()
        .zip(totals)
        .map(|(&class, counts)| ClassDetectionScore {
            class,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        })
        .collect();
    Ok(DetectionReport { match_iou, classes, mean_latency_s: mean_latency_s(results), failed, unknown_crops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{ClassificationSample, DetectionSample, GtClass, Manifest};
    use crate::geometry::BoundingBox;
    use crate::pipelines::{DetectionPrediction, Outcome, Prediction};
    use crate::prompts::Task;

    #[test]
    fn table_counts_round_to_published_row() {
        let cm = ConfusionMatrix { tp: 477, fp: 25, fn_: 39, tn: 469, ..Default::default() };
        assert_eq!(cm.total(), 1010);
        assert_eq!(format!("{:.2}", cm.precision()), "0.95");
        assert_eq!(format!("{:.2}", cm.recall()), "0.92");
        assert_eq!(format!("{:.2}", cm.f1()), "0.94");
    }

    fn class_manifest(truths: &[TrueClass]) -> ClassificationManifest {
        Manifest {
            task: Task::Congestion,
            samples: truths
                .iter()
                .enumerate()
                .map(|(i, &t)| ClassificationSample { id: format!("{i}"), image_path: "x".into(), true_class: t })
                .collect(),
            source: "m.csv".into(),
        }
    }

    fn verdict(i: usize, v: Verdict) -> SampleResult {
        SampleResult {
            sample_id: format!("{i}"),
            outcome: Outcome::Prediction(Prediction::Class(v)),
            latency_ms: Some(100.0),
        }
    }

    #[test]
    fn all_correct_and_degenerate_cases() {
        use TrueClass::*;
        let m = class_manifest(&[Positive, Negative, Positive, Negative]);
        let res: Vec<_> = [Verdict::Positive, Verdict::Negative, Verdict::Positive, Verdict::Negative]
            .into_iter()
            .enumerate()
            .map(|(i, v)| verdict(i, v))
            .collect();
        let (cm, r) = score_classification(&res, &m).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(cm.total(), 4);
        assert_eq!(r.mean_latency_s, 0.1);

        let none_positive: Vec<_> = (0..4).map(|i| verdict(i, Verdict::Negative)).collect();
        let (_, r) = score_classification(&none_positive, &m).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn unknown_and_failures_count_against_truth() {
        use TrueClass::*;
        let m = class_manifest(&[Positive, Negative]);
        let res = vec![
            verdict(0, Verdict::Unknown),
            SampleResult { sample_id: "1".into(), outcome: Outcome::Failure("boom".into()), latency_ms: None },
        ];
        let (cm, r) = score_classification(&res, &m).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn, cm.unknown, cm.failed), (0, 1, 1, 0, 1, 1));
        assert_eq!(r.mean_latency_s, 0.1);
    }

    #[test]
    fn misaligned_results_rejected() {
        let m = class_manifest(&[TrueClass::Positive]);
        assert!(matches!(score_classification(&[], &m), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(
            score_classification(&[verdict(7, Verdict::Positive)], &m),
            Err(MetricsError::OrderMismatch { .. })
        ));
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det_manifest(gt: Vec<GtBox>) -> DetectionManifest {
        Manifest {
            task: Task::Helmet,
            samples: vec![DetectionSample { id: "f".into(), image_path: "f".into(), ground_truth: gt }],
            source: "d.csv".into(),
        }
    }

    fn det_result(boxes: Vec<LabeledBox>) -> Vec<SampleResult> {
        vec![SampleResult {
            sample_id: "f".into(),
            outcome: Outcome::Prediction(Prediction::Detections(DetectionPrediction { boxes, ..Default::default() })),
            latency_ms: Some(1.0),
        }]
    }

    #[test]
    fn detection_examples() {
        let g = bx(0.0, 0.0, 10.0, 20.0);
        let m = det_manifest(vec![
            GtBox { class: GtClass::Helmet, bbox: g },
            GtBox { class: GtClass::Motorbike, bbox: bx(0.0, 10.0, 10.0, 30.0) },
        ]);
        let one = det_result(vec![LabeledBox { label: HelmetLabel::Helmet, bbox: g, score: 0.9 }]);
        let r = score_detection(&one, &m, 0.5).unwrap();
        let h = r.class(HelmetLabel::Helmet);
        assert_eq!((h.precision, h.recall), (1.0, 1.0));

        let two = det_result(vec![
            LabeledBox { label: HelmetLabel::Helmet, bbox: g, score: 0.9 },
            LabeledBox { label: HelmetLabel::Helmet, bbox: bx(0.0, 0.0, 10.0, 18.0), score: 0.8 },
        ]);
        let c = score_detection(&two, &m, 0.5).unwrap().class(HelmetLabel::Helmet).counts;
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));

        let wrong = det_result(vec![LabeledBox { label: HelmetLabel::NoHelmet, bbox: g, score: 0.9 }]);
        let r = score_detection(&wrong, &m, 0.5).unwrap();
        assert_eq!(r.class(HelmetLabel::NoHelmet).counts, MatchCounts { tp: 0, fp: 1, fn_: 0 });
        assert_eq!(r.class(HelmetLabel::Helmet).counts, MatchCounts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn failed_detection_sample_is_all_misses() {
        let m = det_manifest(vec![GtBox { class: GtClass::NoHelmet, bbox: bx(0.0, 0.0, 5.0, 5.0) }]);
        let res = vec![SampleResult { sample_id: "f".into(), outcome: Outcome::Failure("x".into()), latency_ms: None }];
        let r = score_detection(&res, &m, 0.5).unwrap();
        assert_eq!(r.failed, 1);
        assert_eq!(r.class(HelmetLabel::NoHelmet).counts.fn_, 1);
    }
}
