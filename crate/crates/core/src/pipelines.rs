//! The six evaluation pipelines. Each one maps a manifest to one
//! [`SampleResult`] per sample, in manifest order, running up to
//! `max_inflight` samples at once. A backend failure fails only its sample
//! (or, for crop-chat, only its crop).

use std::future::Future;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::backends::{image_dimensions, BackendClient, BackendError};
use crate::datasets::{ClassificationManifest, DetectionManifest, Sample};
use crate::geometry::{clamp_crop, nms, BoundingBox, RawBox, ScoredDetection};
use crate::image_ops::crop_png;
use crate::postprocess::{associate_riders, riders_for_crops, AssociationConfig, HelmetLabel};
use crate::prompts::{build_followup, parse_label, textual_prompts, CascadeSpec, DirectPrompt, LabelPair, Verdict};

/// Open-vocabulary queries for the basic-class detection runs.
pub const BASIC_QUERIES: [&str; 3] = ["motorbike", "person", "helmet"];

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MAX_INFLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: HelmetLabel,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionPrediction {
    pub boxes: Vec<LabeledBox>,
    /// Crops whose chat answer parsed to neither class.
    #[serde(default)]
    pub unknown_crops: usize,
    /// Crops dropped because a backend call for them failed.
    #[serde(default)]
    pub failed_crops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Class(Verdict),
    Detections(DetectionPrediction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Prediction(Prediction),
    Failure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub outcome: Outcome,
    /// Sum of the latencies of the backend calls that returned; absent when
    /// none did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl SampleResult {
    pub fn verdict(&self) -> Option<Verdict> {
        match &self.outcome {
            Outcome::Prediction(Prediction::Class(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn detections(&self) -> Option<&DetectionPrediction> {
        match &self.outcome {
            Outcome::Prediction(Prediction::Detections(d)) => Some(d),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.outcome, Outcome::Failure(_))
    }

    /// Same sample and outcome, ignoring latency.
    pub fn same_outcome(&self, other: &SampleResult) -> bool {
        self.sample_id == other.sample_id && self.outcome == other.outcome
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_inflight: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { max_inflight: DEFAULT_MAX_INFLIGHT }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Latency(Option<f64>);

impl Latency {
    fn add(&mut self, ms: f64) {
        self.0 = Some(self.0.unwrap_or(0.0) + ms);
    }
}

type SampleOutput = (Result<Prediction, String>, Latency);

async fn run_each<'a, S, F, Fut>(samples: &'a [S], opts: &RunOptions, work: F) -> Vec<SampleResult>
where
    S: Sample + Sync,
    F: Fn(Vec<u8>) -> Fut + 'a,
    Fut: Future<Output = SampleOutput> + 'a,
{
    let work = &work;
    stream::iter(samples)
        .map(|s| async move {
            let (outcome, latency) = match tokio::fs::read(s.image_path()).await {
                Ok(bytes) => work(bytes).await,
                Err(e) => (Err(format!("cannot read {}: {e}", s.image_path().display())), Latency::default()),
            };
            SampleResult {
                sample_id: s.id().to_string(),
                outcome: match outcome {
                    Ok(p) => Outcome::Prediction(p),
                    Err(msg) => Outcome::Failure(msg),
                },
                latency_ms: latency.0,
            }
        })
        .buffered(opts.max_inflight.max(1))
        .collect()
        .await
}

/// Index of the highest score; the earliest label wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Score `[positive_label, negative_label]`; the argmax is the verdict, a
/// tie goes to the positive label.
pub async fn run_similarity_classification(
    manifest: &ClassificationManifest,
    client: &BackendClient,
    pair: &LabelPair,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    let labels = pair.labels();
    let labels = &labels;
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = match client.classify(&bytes, labels).await {
            Ok(t) => {
                lat.add(t.latency_ms);
                let verdict = match argmax_first(&t.value) {
                    Some(0) => Verdict::Positive,
                    _ => Verdict::Negative,
                };
                Ok(Prediction::Class(verdict))
            }
            Err(e) => Err(e.to_string()),
        };
        (out, lat)
    })
    .await
}

/// Turn 1 asks for a description, turn 2 sends the description plus the
/// follow-up prompt and parses the answer.
pub async fn run_cascade_classification(
    manifest: &ClassificationManifest,
    client: &BackendClient,
    spec: &CascadeSpec,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = async {
            let first = client.generate(&bytes, &spec.initial_prompt).await.map_err(|e| e.to_string())?;
            lat.add(first.latency_ms);
            let prompt = spec.follow_up(&first.value).map_err(|e| format!("turn 1: {e}"))?;
            let second = client.generate(&bytes, &prompt).await.map_err(|e| e.to_string())?;
            lat.add(second.latency_ms);
            Ok(Prediction::Class(parse_label(&second.value, &spec.aliases)))
        }
        .await;
        (out, lat)
    })
    .await
}

pub async fn run_direct_chat_classification(
    manifest: &ClassificationManifest,
    client: &BackendClient,
    prompt: &DirectPrompt,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = match client.generate(&bytes, &prompt.text).await {
            Ok(t) => {
                lat.add(t.latency_ms);
                Ok(Prediction::Class(parse_label(&t.value, &prompt.aliases)))
            }
            Err(e) => Err(e.to_string()),
        };
        (out, lat)
    })
    .await
}

fn split_basic(dets: &[ScoredDetection]) -> [Vec<ScoredDetection>; 3] {
    let mut out: [Vec<ScoredDetection>; 3] = Default::default();
    for d in dets {
        out[d.class_index].push(*d);
    }
    out
}

/// Detect basic classes, then label riders by association.
pub async fn run_detection_postprocess(
    manifest: &DetectionManifest,
    detector: &BackendClient,
    cfg: &AssociationConfig,
    score_threshold: f64,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = match detector.detect(&bytes, &BASIC_QUERIES, score_threshold).await {
            Ok(t) => {
                lat.add(t.latency_ms);
                let [motorbikes, persons, helmets] = split_basic(&t.value);
                let boxes = associate_riders(&persons, &motorbikes, &helmets, cfg)
                    .into_iter()
                    .map(|v| LabeledBox { label: v.label, bbox: v.person_box, score: v.score })
                    .collect();
                Ok(Prediction::Detections(DetectionPrediction { boxes, ..Default::default() }))
            }
            Err(e) => Err(e.to_string()),
        };
        (out, lat)
    })
    .await
}

/// Sentence queries whose detections are labelled directly by their query's
/// class, with per-class NMS and no association step.
pub async fn run_detection_textual(
    manifest: &DetectionManifest,
    detector: &BackendClient,
    nms_threshold: f64,
    score_threshold: f64,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    let prompts = textual_prompts();
    let queries: Vec<&str> = prompts.iter().map(|p| p.query.as_str()).collect();
    let queries = &queries;
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = match detector.detect(&bytes, queries, score_threshold).await {
            Ok(t) => {
                lat.add(t.latency_ms);
                Ok(Prediction::Detections(DetectionPrediction {
                    boxes: label_textual(&t.value, nms_threshold),
                    ..Default::default()
                }))
            }
            Err(e) => Err(e.to_string()),
        };
        (out, lat)
    })
    .await
}

/// Map textual detections to Helmet/NoHelmet and run NMS per mapped class.
/// Output is sorted by descending score.
pub fn label_textual(dets: &[ScoredDetection], nms_threshold: f64) -> Vec<LabeledBox> {
    let prompts = textual_prompts();
    let mut boxes = Vec::new();
    for label in [HelmetLabel::Helmet, HelmetLabel::NoHelmet] {
        let of_class: Vec<ScoredDetection> =
            dets.iter().filter(|d| prompts[d.class_index].mapped_class == label).copied().collect();
        boxes.extend(nms(&of_class, nms_threshold).into_iter().map(|d| LabeledBox {
            label,
            bbox: d.bbox,
            score: d.score,
        }));
    }
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    boxes
}

#[derive(Debug, Clone, Copy)]
pub struct CropChatConfig<'a> {
    pub assoc: AssociationConfig,
    pub score_threshold: f64,
    pub crop_pad: f64,
    pub prompt: &'a DirectPrompt,
    /// Second turn fed with the first answer; its aliases decide the class.
    pub followup: Option<&'a DirectPrompt>,
}

/// Detect basic classes, crop every associated rider and ask the chat model
/// about the crop.
pub async fn run_detection_crop_chat(
    manifest: &DetectionManifest,
    detector: &BackendClient,
    chat: &BackendClient,
    cfg: &CropChatConfig<'_>,
    opts: &RunOptions,
) -> Vec<SampleResult> {
    run_each(&manifest.samples, opts, move |bytes| async move {
        let mut lat = Latency::default();
        let out = crop_chat_sample(&bytes, detector, chat, cfg, &mut lat).await;
        (out, lat)
    })
    .await
}

async fn crop_chat_sample(
    bytes: &[u8],
    detector: &BackendClient,
    chat: &BackendClient,
    cfg: &CropChatConfig<'_>,
    lat: &mut Latency,
) -> Result<Prediction, String> {
    let (w, h) = image_dimensions(bytes).ok_or("cannot read image dimensions")?;
    let dets = detector.detect(bytes, &BASIC_QUERIES, cfg.score_threshold).await.map_err(|e| e.to_string())?;
    lat.add(dets.latency_ms);
    let [motorbikes, persons, _] = split_basic(&dets.value);
    let aliases = &cfg.followup.unwrap_or(cfg.prompt).aliases;
    let mut pred = DetectionPrediction::default();
    for rider in riders_for_crops(&persons, &motorbikes, &cfg.assoc) {
        let person = rider.person;
        let answer = async {
            let region = clamp_crop(RawBox::from(person.bbox), f64::from(w), f64::from(h), cfg.crop_pad)
                .map_err(|e| BackendError::Precondition(e.to_string()))?;
            let crop = crop_png(bytes, &region).map_err(|e| BackendError::Precondition(e.to_string()))?;
            let first = chat.generate(&crop, &cfg.prompt.text).await?;
            lat.add(first.latency_ms);
            match cfg.followup {
                None => Ok::<_, BackendError>(first.value),
                Some(f) => {
                    let prompt =
                        build_followup(&first.value, &f.text).map_err(|e| BackendError::Protocol(e.to_string()))?;
                    let second = chat.generate(&crop, &prompt).await?;
                    lat.add(second.latency_ms);
                    Ok(second.value)
                }
            }
        }
        .await;
        let label = match answer.map(|a| parse_label(&a, aliases)) {
            Ok(Verdict::Positive) => HelmetLabel::Helmet,
            Ok(Verdict::Negative) => HelmetLabel::NoHelmet,
            Ok(Verdict::Unknown) => {
                pred.unknown_crops += 1;
                continue;
            }
            Err(e) => {
                tracing::warn!(error = %e, "crop dropped");
                pred.failed_crops += 1;
                continue;
            }
        };
        pred.boxes.push(LabeledBox { label, bbox: person.bbox, score: person.score });
    }
    Ok(Prediction::Detections(pred))
}
