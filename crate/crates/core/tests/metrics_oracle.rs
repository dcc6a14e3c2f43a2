mod oracles;

use oracles::*;
use proptest::prelude::*;
use vlmeval_core::datasets::{ClassificationSample, DetectionSample, GtClass, Manifest, TrueClass};
use vlmeval_core::metrics::{score_classification, score_detection};
use vlmeval_core::pipelines::{DetectionPrediction, Outcome, Prediction, SampleResult};
use vlmeval_core::postprocess::HelmetLabel;
use vlmeval_core::prompts::{Task, Verdict};

#[derive(Debug, Clone, Copy)]
enum Said {
    Pos,
    Neg,
    Unknown,
    Failed,
}

fn said() -> impl Strategy<Value = Said> {
    prop_oneof![Just(Said::Pos), Just(Said::Neg), Just(Said::Unknown), Just(Said::Failed)]
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

proptest! {
    #[test]
    fn classification_matches_recount(rows in prop::collection::vec((any::<bool>(), said()), 0..60)) {
        let manifest = Manifest {
            task: Task::Crack,
            samples: rows
                .iter()
                .enumerate()
                .map(|(i, (pos, _))| ClassificationSample {
                    id: i.to_string(),
                    image_path: "x".into(),
                    true_class: if *pos { TrueClass::Positive } else { TrueClass::Negative },
                })
                .collect(),
            source: "m.csv".into(),
        };
        let results: Vec<SampleResult> = rows
            .iter()
            .enumerate()
            .map(|(i, (_, s))| SampleResult {
                sample_id: i.to_string(),
                outcome: match s {
                    Said::Pos => Outcome::Prediction(Prediction::Class(Verdict::Positive)),
                    Said::Neg => Outcome::Prediction(Prediction::Class(Verdict::Negative)),
                    Said::Unknown => Outcome::Prediction(Prediction::Class(Verdict::Unknown)),
                    Said::Failed => Outcome::Failure("x".into()),
                },
                latency_ms: None,
            })
            .collect();
        let (cm, rep) = score_classification(&results, &manifest).unwrap();

        let count = |f: &dyn Fn(bool, Said) -> bool| rows.iter().filter(|(p, s)| f(*p, *s)).count();
        let tp = count(&|p, s| p && matches!(s, Said::Pos));
        let tn = count(&|p, s| !p && matches!(s, Said::Neg));
        let fp = count(&|p, s| !p && !matches!(s, Said::Neg));
        let fn_ = count(&|p, s| p && !matches!(s, Said::Pos));
        prop_assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (tp, fp, fn_, tn));
        prop_assert_eq!(cm.unknown, count(&|_, s| matches!(s, Said::Unknown)));
        prop_assert_eq!(cm.failed, count(&|_, s| matches!(s, Said::Failed)));
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        prop_assert_eq!(rep.precision, p);
        prop_assert_eq!(rep.recall, r);
        prop_assert_eq!(rep.f1, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        prop_assert_eq!(rep.accuracy, ratio(tp + tn, rows.len()));
        for v in [rep.precision, rep.recall, rep.f1, rep.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

fn class_dets(max: usize) -> impl Strategy<Value = Vec<(IBox, f64, bool)>> {
    prop::collection::vec(
        ((0..20i64, 0..20i64, 3..10i64, 3..10i64), prop::sample::select(vec![0.4, 0.6, 0.6, 0.8]), any::<bool>())
            .prop_map(|((x, y, w, h), s, helmet)| ([x, y, x + w, y + h], s, helmet)),
        0..=max,
    )
}

proptest! {
    #[test]
    fn detection_matches_greedy_reference(
        images in prop::collection::vec((class_dets(10), class_dets(10)), 1..4),
        match_iou in prop::sample::select(vec![0.3, 0.5, 0.7]),
    ) {
        let label = |h: bool| if h { HelmetLabel::Helmet } else { HelmetLabel::NoHelmet };
        let manifest = Manifest {
            task: Task::Helmet,
            samples: images
                .iter()
                .enumerate()
                .map(|(i, (_, gts))| DetectionSample {
                    id: i.to_string(),
                    image_path: "x".into(),
                    ground_truth: gts
                        .iter()
                        .map(|(b, _, h)| gt(*b, if *h { GtClass::Helmet } else { GtClass::NoHelmet }))
                        .collect(),
                })
                .collect(),
            source: "d.csv".into(),
        };
        let results: Vec<SampleResult> = images
            .iter()
            .enumerate()
            .map(|(i, (preds, _))| SampleResult {
                sample_id: i.to_string(),
                outcome: Outcome::Prediction(Prediction::Detections(DetectionPrediction {
                    boxes: preds.iter().map(|(b, s, h)| labeled(*b, label(*h), *s)).collect(),
                    ..Default::default()
                })),
                latency_ms: Some(1.0),
            })
            .collect();
        let rep = score_detection(&results, &manifest, match_iou).unwrap();
        for cls in [true, false] {
            let mut want = (0, 0, 0);
            for (preds, gts) in &images {
                let p: Vec<(IBox, f64)> = preds.iter().filter(|d| d.2 == cls).map(|d| (d.0, d.1)).collect();
                let g: Vec<IBox> = gts.iter().filter(|d| d.2 == cls).map(|d| d.0).collect();
                let (tp, fp, fn_) = oracle_match(&p, &g, match_iou);
                want = (want.0 + tp, want.1 + fp, want.2 + fn_);
            }
            let c = rep.class(label(cls)).counts;
            prop_assert_eq!((c.tp, c.fp, c.fn_), want);
        }
    }
}
