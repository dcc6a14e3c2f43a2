use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;
use vlmeval_core::backends::{
    sha256_hex, BackendClient, BackendError, BackendKind, MockFixture, MockTransport, Reply, Transport,
};
use vlmeval_core::datasets::{load_classification_manifest, load_detection_manifest, TrueClass};
use vlmeval_core::metrics::score_detection;
use vlmeval_core::pipelines::*;
use vlmeval_core::postprocess::{AssociationConfig, HelmetLabel};
use vlmeval_core::prompts::{catalog_lookup, Task, Verdict};

fn smoke() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/smoke")
}

fn fixture() -> Arc<MockFixture> {
    Arc::new(MockFixture::load(&smoke().join("mock.json")).unwrap())
}

fn client(kind: BackendKind, t: Arc<dyn Transport>) -> BackendClient {
    BackendClient::new(kind, t)
}

/// Delays each reply by an amount derived from the request, so concurrent
/// samples finish out of order.
struct Shuffled(MockTransport);

#[async_trait]
impl Transport for Shuffled {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError> {
        let h = sha256_hex(request.to_string().as_bytes());
        let ms = u64::from_str_radix(&h[..2], 16).unwrap() % 20;
        tokio::time::sleep(Duration::from_millis(ms)).await;
        self.0.send(path, request).await
    }
}

#[tokio::test]
async fn classification_pipelines_follow_fixture() {
    let m = load_classification_manifest(&smoke().join("congestion.csv"), Task::Congestion).unwrap();
    let t: Arc<dyn Transport> = Arc::new(MockTransport::new(fixture()));
    let opts = RunOptions { max_inflight: 4 };
    let expected: Vec<Verdict> = m
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pos = s.true_class == TrueClass::Positive;
            if pos != (i == 3) {
                Verdict::Positive
            } else {
                Verdict::Negative
            }
        })
        .collect();

    let sim = client(BackendKind::SimilarityClassifier, t.clone());
    let pair = catalog_lookup(Task::Congestion, "A5").unwrap().label_pair().unwrap();
    let r = run_similarity_classification(&m, &sim, pair, &opts).await;
    assert_eq!(r.iter().map(|r| r.verdict().unwrap()).collect::<Vec<_>>(), expected);
    assert!(r.iter().all(|r| r.latency_ms == Some(25.0)));

    let chat = client(BackendKind::VisualChat, t.clone());
    for id in ["P1F1", "P2F2", "P5F5"] {
        let spec = catalog_lookup(Task::Congestion, id).unwrap().cascade().unwrap();
        let r = run_cascade_classification(&m, &chat, spec, &opts).await;
        assert_eq!(r.iter().map(|r| r.verdict().unwrap()).collect::<Vec<_>>(), expected, "{id}");
        assert!(r.iter().all(|r| r.latency_ms == Some(50.0)));
    }

    let direct = catalog_lookup(Task::Congestion, "gpt-congestion").unwrap().direct().unwrap();
    let r = run_direct_chat_classification(&m, &chat, direct, &opts).await;
    assert_eq!(r.iter().map(|r| r.verdict().unwrap()).collect::<Vec<_>>(), expected);
}

#[tokio::test]
async fn results_keep_manifest_order_under_concurrency() {
    let m = load_classification_manifest(&smoke().join("congestion.csv"), Task::Congestion).unwrap();
    let chat = client(BackendKind::VisualChat, Arc::new(Shuffled(MockTransport::new(fixture()))));
    let spec = catalog_lookup(Task::Congestion, "P3F3").unwrap().cascade().unwrap();
    let serial = run_cascade_classification(&m, &chat, spec, &RunOptions { max_inflight: 1 }).await;
    for n in [4, 16] {
        let par = run_cascade_classification(&m, &chat, spec, &RunOptions { max_inflight: n }).await;
        assert_eq!(par, serial);
    }
    let ids: Vec<&str> = serial.iter().map(|r| r.sample_id.as_str()).collect();
    let want: Vec<&str> = m.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, want);
}

#[tokio::test]
async fn missing_fixture_entry_is_a_sample_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(smoke().join("images/cong_00.png"), dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("b.png"), b"not an image").unwrap();
    std::fs::write(dir.path().join("m.csv"), "path,label\na.png,congested\nb.png,non-congested\n").unwrap();
    let m = load_classification_manifest(&dir.path().join("m.csv"), Task::Congestion).unwrap();
    let sim = client(BackendKind::SimilarityClassifier, Arc::new(MockTransport::new(fixture())));
    let pair = catalog_lookup(Task::Congestion, "A1").unwrap().label_pair().unwrap();
    let r = run_similarity_classification(&m, &sim, pair, &RunOptions { max_inflight: 2 }).await;
    assert_eq!(r[0].verdict(), Some(Verdict::Positive));
    assert!(r[1].is_failure());
    assert_eq!(r[1].latency_ms, None);
    match &r[1].outcome {
        Outcome::Failure(msg) => assert!(msg.contains("digest"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn unreadable_image_fails_only_its_sample() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(smoke().join("images/cong_00.png"), dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("m.csv"), "path,label\na.png,congested\n").unwrap();
    let m = load_classification_manifest(&dir.path().join("m.csv"), Task::Congestion).unwrap();
    std::fs::remove_file(dir.path().join("a.png")).unwrap();
    let sim = client(BackendKind::SimilarityClassifier, Arc::new(MockTransport::new(fixture())));
    let pair = catalog_lookup(Task::Congestion, "A1").unwrap().label_pair().unwrap();
    let r = run_similarity_classification(&m, &sim, pair, &RunOptions { max_inflight: 1 }).await;
    assert!(r[0].is_failure());
}

fn labels_of(r: &SampleResult) -> Vec<HelmetLabel> {
    r.detections().unwrap().boxes.iter().map(|b| b.label).collect()
}

#[tokio::test]
async fn detection_pipelines_follow_fixture() {
    use HelmetLabel::*;
    let m = load_detection_manifest(&smoke().join("helmet.csv")).unwrap();
    let t: Arc<dyn Transport> = Arc::new(MockTransport::new(fixture()));
    let det = client(BackendKind::OpenVocabDetector, t.clone());
    let chat = client(BackendKind::VisualChat, t);
    let opts = RunOptions { max_inflight: 4 };
    let assoc = AssociationConfig::default();

    let pp = run_detection_postprocess(&m, &det, &assoc, DEFAULT_SCORE_THRESHOLD, &opts).await;
    assert_eq!(labels_of(&pp[0]), vec![Helmet, NoHelmet]);
    assert_eq!(labels_of(&pp[4]), vec![NoHelmet], "helmet below the score threshold");
    assert_eq!(labels_of(&pp[6]).len(), 1, "duplicate person suppressed");
    assert_eq!(labels_of(&pp[9]), vec![Helmet], "spurious helmet");
    let rep = score_detection(&pp, &m, 0.5).unwrap();
    let h = rep.class(Helmet).counts;
    assert_eq!((h.tp, h.fp, h.fn_), (6, 1, 1));

    let tx = run_detection_textual(&m, &det, 0.5, DEFAULT_SCORE_THRESHOLD, &opts).await;
    assert_eq!(labels_of(&tx[2]), vec![NoHelmet, NoHelmet]);
    assert_eq!(labels_of(&tx[3]), vec![NoHelmet], "bareheaded and without-helmet boxes merge");

    let gpt = catalog_lookup(Task::Helmet, "gpt-helmet").unwrap().direct().unwrap();
    let cfg = CropChatConfig { assoc, score_threshold: 0.1, crop_pad: 0.0, prompt: gpt, followup: None };
    let cc = run_detection_crop_chat(&m, &det, &chat, &cfg, &opts).await;
    assert_eq!(cc[1].detections().unwrap().unknown_crops, 1);
    assert!(labels_of(&cc[1]).is_empty());
    assert_eq!(labels_of(&cc[0]), vec![Helmet, NoHelmet]);
    assert_eq!(cc[0].latency_ms, Some(75.0));

    let llava = catalog_lookup(Task::Helmet, "llava-helmet").unwrap().direct().unwrap();
    let follow = catalog_lookup(Task::Helmet, "llava-helmet-followup").unwrap().direct().unwrap();
    let cfg = CropChatConfig { followup: Some(follow), prompt: llava, ..cfg };
    let cc = run_detection_crop_chat(&m, &det, &chat, &cfg, &opts).await;
    assert_eq!(labels_of(&cc[1]), vec![Helmet]);
    assert_eq!(cc[0].latency_ms, Some(125.0));
    assert!(cc.iter().all(|r| r.detections().unwrap().failed_crops == 0));
}

#[tokio::test]
async fn crop_chat_without_matching_crop_counts_failed_crops() {
    let m = load_detection_manifest(&smoke().join("helmet.csv")).unwrap();
    let t: Arc<dyn Transport> = Arc::new(MockTransport::new(fixture()));
    let det = client(BackendKind::OpenVocabDetector, t.clone());
    let chat = client(BackendKind::VisualChat, t);
    let gpt = catalog_lookup(Task::Helmet, "gpt-helmet").unwrap().direct().unwrap();
    // a pad changes every crop, so no fixture entry matches
    let cfg = CropChatConfig {
        assoc: AssociationConfig::default(),
        score_threshold: 0.1,
        crop_pad: 2.0,
        prompt: gpt,
        followup: None,
    };
    let cc = run_detection_crop_chat(&m, &det, &chat, &cfg, &RunOptions { max_inflight: 2 }).await;
    assert_eq!(cc[0].detections().unwrap().failed_crops, 2);
    assert!(!cc[0].is_failure());
}
