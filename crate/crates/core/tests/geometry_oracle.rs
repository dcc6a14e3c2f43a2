mod oracles;

use oracles::*;
use proptest::prelude::*;
use vlmeval_core::geometry::{iou, nms, overlap_over_min};
use vlmeval_core::postprocess::{associate_riders, AssocMetric, AssociationConfig, HelmetLabel};

fn ibox(span: i64, min: i64, max: i64) -> impl Strategy<Value = IBox> {
    (0..=span, 0..=span, min..=max, min..=max).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn idets(n: usize, span: i64, min: i64, max: i64) -> impl Strategy<Value = Vec<IDet>> {
    prop::collection::vec(
        (ibox(span, min, max), prop::sample::select(vec![0.3, 0.5, 0.7, 0.9])).prop_map(|(b, score)| IDet { b, score }),
        0..=n,
    )
}

fn metric() -> impl Strategy<Value = AssocMetric> {
    prop_oneof![Just(AssocMetric::Iou), Just(AssocMetric::OverlapOverMin)]
}

proptest! {
    #[test]
    fn overlaps_match_pixel_counts(a in ibox(30, 1, 15), b in ibox(30, 1, 15)) {
        prop_assert_eq!(iou(&to_box(a), &to_box(b)), oracle_iou(a, b));
        prop_assert_eq!(overlap_over_min(&to_box(a), &to_box(b)), oracle_iomin(a, b));
    }

    #[test]
    fn nms_keeps_oracle_set(v in idets(20, 20, 2, 12), thr in prop::sample::select(vec![0.1, 0.3, 0.5, 0.7])) {
        let got: Vec<(IBox, f64)> = nms(&to_dets(&v, 0), thr).iter().map(|d| (to_ibox(&d.bbox), d.score)).collect();
        let want: Vec<(IBox, f64)> = oracle_nms(&v, thr).into_iter().map(|i| (v[i].b, v[i].score)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn nms_result_is_pairwise_separated(v in idets(20, 20, 2, 12)) {
        let kept = nms(&to_dets(&v, 0), 0.5);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= 0.5);
                prop_assert!(a.score >= b.score);
            }
        }
    }

    #[test]
    fn association_matches_triple_enumeration(
        p in idets(6, 24, 4, 14),
        m in idets(6, 24, 5, 16),
        h in idets(6, 30, 1, 5),
        metric in metric(),
    ) {
        let cfg = AssociationConfig::new(metric, 0.6, 0.5).unwrap();
        let got: Vec<OracleRider> = associate_riders(&to_dets(&p, 1), &to_dets(&m, 0), &to_dets(&h, 2), &cfg)
            .into_iter()
            .map(|v| OracleRider {
                person: to_ibox(&v.person_box),
                motorbike: to_ibox(&v.motorbike_box),
                helmet: v.label == HelmetLabel::Helmet,
                score: v.score,
            })
            .collect();
        prop_assert_eq!(got, oracle_associate(&p, &m, &h, metric, 0.6, 0.5));
    }

    #[test]
    fn removing_helmets_only_flips_labels(
        p in idets(6, 24, 4, 14),
        m in idets(6, 24, 5, 16),
        h in idets(6, 30, 1, 5),
        metric in metric(),
    ) {
        let cfg = AssociationConfig::new(metric, 0.6, 0.5).unwrap();
        let with = associate_riders(&to_dets(&p, 1), &to_dets(&m, 0), &to_dets(&h, 2), &cfg);
        let without = associate_riders(&to_dets(&p, 1), &to_dets(&m, 0), &[], &cfg);
        prop_assert_eq!(with.len(), without.len());
        for (a, b) in with.iter().zip(&without) {
            prop_assert_eq!(a.person_box, b.person_box);
            prop_assert_eq!(a.motorbike_box, b.motorbike_box);
            prop_assert_eq!(b.label, HelmetLabel::NoHelmet);
        }
    }
}
