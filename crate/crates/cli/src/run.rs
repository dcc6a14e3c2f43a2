use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vlmeval_core::backends::{
    BackendClient, BackendEndpoint, BackendKind, HttpTransport, RecordSink, RecordStore, RecordingTransport,
    ReplayTransport, Transport, TOKEN_ENV,
};
use vlmeval_core::datasets::{
    inspect_manifest, load_classification_manifest, load_detection_manifest, ClassificationManifest, DetectionManifest,
};
use vlmeval_core::metrics::{score_classification, score_detection};
use vlmeval_core::pipelines::{
    run_cascade_classification, run_detection_crop_chat, run_detection_postprocess, run_detection_textual,
    run_direct_chat_classification, run_similarity_classification, CropChatConfig, RunOptions, SampleResult,
};
use vlmeval_core::postprocess::{AssocMetric, AssociationConfig};
use vlmeval_core::prompts::{catalog, catalog_lookup, ids_of_kind, CatalogEntry, Task};
use vlmeval_core::report::{emit_report, published_rows, ReportFormat, ReportRow};

use crate::{
    ClassifyArgs, ClassifyPipeline, DetectArgs, DetectVariant, InspectArgs, MetricArg, PromptsArgs, ReportArgs, RunArgs,
};

const INITIAL_BACKOFF: Duration = Duration::from_millis(500);
const FORMATS: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Live,
    Record,
    Replay,
}

/// Everything a run was configured with; written as `run_config.json` and
/// read back by `vlmeval report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    task: Task,
    pipeline: String,
    prompt_ids: Vec<String>,
    model: String,
    manifest: PathBuf,
    out: PathBuf,
    mode: Mode,
    store: Option<PathBuf>,
    endpoint: Option<String>,
    chat_endpoint: Option<String>,
    max_inflight: usize,
    timeout_s: f64,
    retries: u32,
    nms_threshold: Option<f64>,
    assoc_threshold: Option<f64>,
    assoc_metric: Option<AssocMetric>,
    score_threshold: Option<f64>,
    crop_pad: Option<f64>,
    match_iou: Option<f64>,
    published_rows: bool,
}

impl RunConfig {
    fn new(task: Task, pipeline: &str, prompt_ids: Vec<String>, run: &RunArgs) -> Self {
        let (mode, store) = match (&run.record, &run.replay) {
            (_, Some(p)) => (Mode::Replay, Some(p.clone())),
            (Some(p), None) => (Mode::Record, Some(p.clone())),
            (None, None) => (Mode::Live, None),
        };
        RunConfig {
            task,
            pipeline: pipeline.into(),
            prompt_ids,
            model: run.model.clone().unwrap_or_else(|| pipeline.into()),
            manifest: run.manifest.clone(),
            out: run.out.clone(),
            mode,
            store,
            endpoint: run.endpoint.clone(),
            chat_endpoint: None,
            max_inflight: run.max_inflight as usize,
            timeout_s: run.timeout_s,
            retries: run.retries,
            nms_threshold: None,
            assoc_threshold: None,
            assoc_metric: None,
            score_threshold: None,
            crop_pad: None,
            match_iou: None,
            published_rows: run.published_rows,
        }
    }

    fn prompt_label(&self) -> String {
        self.prompt_ids.join("+")
    }
}

/// Builds backend clients for the configured mode.
struct Backends {
    mode: Mode,
    timeout: Duration,
    retries: u32,
    token: Option<String>,
    sink: Option<Arc<RecordSink>>,
    store: Option<Arc<RecordStore>>,
}

impl Backends {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let mut b = Backends {
            mode: cfg.mode,
            timeout: Duration::from_secs_f64(cfg.timeout_s),
            retries: cfg.retries,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            sink: None,
            store: None,
        };
        match (cfg.mode, &cfg.store) {
            (Mode::Record, Some(p)) => b.sink = Some(RecordSink::create(p)?),
            (Mode::Replay, Some(p)) => b.store = Some(Arc::new(RecordStore::load(p)?)),
            _ => {}
        }
        Ok(b)
    }

    fn check_url(&self, url: Option<&str>, flag: &str) -> Result<()> {
        if self.mode != Mode::Replay && url.is_none() {
            bail!("{flag} is required unless --replay is given");
        }
        Ok(())
    }

    async fn client(&self, kind: BackendKind, url: Option<&str>, flag: &str) -> Result<BackendClient> {
        let transport: Arc<dyn Transport> = match (&self.store, url) {
            (Some(store), _) => Arc::new(ReplayTransport::new(store.clone())),
            (None, Some(url)) => {
                let ep = BackendEndpoint::new(kind, url)
                    .with_timeout(self.timeout)
                    .with_retries(self.retries, INITIAL_BACKOFF);
                let http = HttpTransport::new(&ep, self.token.clone())?;
                http.health().await.with_context(|| format!("endpoint {url} is unreachable"))?;
                let http: Arc<dyn Transport> = Arc::new(http);
                match &self.sink {
                    Some(sink) => Arc::new(RecordingTransport::new(http, sink.clone())),
                    None => http,
                }
            }
            (None, None) => bail!("{flag} is required unless --replay is given"),
        };
        Ok(BackendClient::new(kind, transport))
    }
}

fn prompt_of_kind(task: Task, id: &str, kind: &str) -> Result<CatalogEntry> {
    match catalog_lookup(task, id) {
        Ok(e) if e.kind() == kind => Ok(e),
        _ => {
            bail!("unknown {kind} prompt id {id:?} for task {task}; valid ids: {}", ids_of_kind(task, kind).join(", "))
        }
    }
}

enum LoadedManifest {
    Classification(ClassificationManifest),
    Detection(DetectionManifest),
}

fn load_manifest(cfg: &RunConfig) -> Result<LoadedManifest> {
    Ok(match cfg.task {
        Task::Helmet => LoadedManifest::Detection(load_detection_manifest(&cfg.manifest)?),
        task => LoadedManifest::Classification(load_classification_manifest(&cfg.manifest, task)?),
    })
}

fn build_rows(cfg: &RunConfig, manifest: &LoadedManifest, results: &[SampleResult]) -> Result<Vec<ReportRow>> {
    let mut rows = match manifest {
        LoadedManifest::Classification(m) => {
            let (cm, rep) = score_classification(results, m)?;
            vec![ReportRow::classification(cfg.task, &cfg.pipeline, &cfg.model, &cfg.prompt_label(), &cm, &rep)]
        }
        LoadedManifest::Detection(m) => {
            let match_iou = cfg.match_iou.unwrap_or(vlmeval_core::metrics::DEFAULT_MATCH_IOU);
            let rep = score_detection(results, m, match_iou)?;
            ReportRow::detection(&cfg.pipeline, &cfg.model, &cfg.prompt_label(), &rep)
        }
    };
    if cfg.published_rows {
        rows.extend(published_rows(cfg.task));
    }
    Ok(rows)
}

fn write_reports(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    for f in FORMATS {
        let path = dir.join(format!("report.{}", f.extension()));
        fs::write(&path, emit_report(rows, f)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn results_jsonl(results: &[SampleResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&serde_json::to_string(r).expect("results serialize"));
        s.push('\n');
    }
    s
}

fn sample_failed(r: &SampleResult) -> bool {
    r.is_failure() || r.detections().is_some_and(|d| d.failed_crops > 0)
}

fn finish(cfg: &RunConfig, manifest: &LoadedManifest, results: &[SampleResult]) -> Result<ExitCode> {
    let rows = build_rows(cfg, manifest, results)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("results.jsonl"), results_jsonl(results))?;
    let mut config = serde_json::to_string_pretty(cfg)?;
    config.push('\n');
    fs::write(cfg.out.join("run_config.json"), config)?;
    write_reports(&cfg.out, &rows)?;
    for row in &rows {
        println!("{}", row.line());
    }
    let failed = results.iter().filter(|r| sample_failed(r)).count();
    if failed > 0 {
        eprintln!("{failed} of {} samples failed; see results.jsonl", results.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

pub async fn classify(a: ClassifyArgs) -> Result<ExitCode> {
    if a.task == Task::Helmet {
        bail!("classify takes --task congestion or crack; use `vlmeval detect` for helmet");
    }
    let (name, kind) = match a.pipeline {
        ClassifyPipeline::Similarity => ("similarity", "label pair"),
        ClassifyPipeline::Cascade => ("cascade", "cascade"),
        ClassifyPipeline::Direct => ("direct", "direct prompt"),
    };
    let entry = prompt_of_kind(a.task, &a.prompt, kind)?;
    let cfg = RunConfig::new(a.task, name, vec![entry.id().to_string()], &a.run);
    let manifest = load_classification_manifest(&cfg.manifest, cfg.task)?;
    let backends = Backends::new(&cfg)?;
    let opts = RunOptions { max_inflight: cfg.max_inflight };
    let url = cfg.endpoint.as_deref();
    let results = match a.pipeline {
        ClassifyPipeline::Similarity => {
            let client = backends.client(BackendKind::SimilarityClassifier, url, "--endpoint").await?;
            run_similarity_classification(&manifest, &client, entry.label_pair()?, &opts).await
        }
        ClassifyPipeline::Cascade => {
            let client = backends.client(BackendKind::VisualChat, url, "--endpoint").await?;
            run_cascade_classification(&manifest, &client, entry.cascade()?, &opts).await
        }
        ClassifyPipeline::Direct => {
            let client = backends.client(BackendKind::VisualChat, url, "--endpoint").await?;
            run_direct_chat_classification(&manifest, &client, entry.direct()?, &opts).await
        }
    };
    finish(&cfg, &LoadedManifest::Classification(manifest), &results)
}

pub async fn detect(a: DetectArgs) -> Result<ExitCode> {
    let task = Task::Helmet;
    let metric = match a.assoc_metric {
        MetricArg::Iou => AssocMetric::Iou,
        MetricArg::Iomin => AssocMetric::OverlapOverMin,
    };
    let assoc = AssociationConfig::new(metric, a.assoc_thresh, a.nms_thresh)?;
    let (name, prompt_ids) = match a.variant {
        DetectVariant::Postprocess => ("postprocess", vec![]),
        DetectVariant::Textual => ("textual", catalog().textual.iter().map(|p| p.id.clone()).collect()),
        DetectVariant::CropChat => {
            let mut ids = vec![prompt_of_kind(task, &a.chat_prompt, "direct prompt")?.id().to_string()];
            if let Some(f) = &a.follow_up {
                ids.push(prompt_of_kind(task, f, "direct prompt")?.id().to_string());
            }
            ("crop-chat", ids)
        }
    };
    let mut cfg = RunConfig::new(task, name, prompt_ids, &a.run);
    cfg.score_threshold = Some(a.score_thresh);
    cfg.match_iou = Some(a.match_iou);
    cfg.nms_threshold = Some(a.nms_thresh);
    if a.variant != DetectVariant::Textual {
        cfg.assoc_threshold = Some(a.assoc_thresh);
        cfg.assoc_metric = Some(metric);
    }
    if a.variant == DetectVariant::CropChat {
        cfg.crop_pad = Some(a.crop_pad);
        cfg.chat_endpoint = a.chat_endpoint.clone();
    }

    let backends = Backends::new(&cfg)?;
    backends.check_url(cfg.endpoint.as_deref(), "--endpoint")?;
    if a.variant == DetectVariant::CropChat {
        backends.check_url(cfg.chat_endpoint.as_deref(), "--chat-endpoint")?;
    }
    let manifest = load_detection_manifest(&cfg.manifest)?;
    let opts = RunOptions { max_inflight: cfg.max_inflight };
    let detector = backends.client(BackendKind::OpenVocabDetector, cfg.endpoint.as_deref(), "--endpoint").await?;
    let results = match a.variant {
        DetectVariant::Postprocess => {
            run_detection_postprocess(&manifest, &detector, &assoc, a.score_thresh, &opts).await
        }
        DetectVariant::Textual => {
            run_detection_textual(&manifest, &detector, a.nms_thresh, a.score_thresh, &opts).await
        }
        DetectVariant::CropChat => {
            let chat =
                backends.client(BackendKind::VisualChat, cfg.chat_endpoint.as_deref(), "--chat-endpoint").await?;
            let direct = |id: &str| catalog_lookup(task, id).and_then(|e| e.direct());
            let prompt = direct(&cfg.prompt_ids[0])?;
            let followup = cfg.prompt_ids.get(1).map(|id| direct(id)).transpose()?;
            let cc = CropChatConfig { assoc, score_threshold: a.score_thresh, crop_pad: a.crop_pad, prompt, followup };
            run_detection_crop_chat(&manifest, &detector, &chat, &cc, &opts).await
        }
    };
    finish(&cfg, &LoadedManifest::Detection(manifest), &results)
}

pub fn inspect(a: InspectArgs) -> Result<ExitCode> {
    let summary = inspect_manifest(&a.manifest)?;
    if summary.samples == 0 {
        eprintln!("warning: {} has no samples", a.manifest.display());
    }
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn read_results(path: &Path) -> Result<Vec<SampleResult>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn report(a: ReportArgs) -> Result<ExitCode> {
    let format = a.format.as_deref().map(str::parse::<ReportFormat>).transpose()?;
    let config_path = a.run.join("run_config.json");
    let cfg: RunConfig = serde_json::from_str(
        &fs::read_to_string(&config_path).with_context(|| format!("reading {}", config_path.display()))?,
    )
    .with_context(|| format!("parsing {}", config_path.display()))?;
    let results = read_results(&a.run.join("results.jsonl"))?;
    let manifest = load_manifest(&cfg)?;
    let rows = build_rows(&cfg, &manifest, &results)?;
    match format {
        Some(f) => print!("{}", emit_report(&rows, f)?),
        None => {
            let out = a.out.unwrap_or(a.run);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_reports(&out, &rows)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn prompts(a: PromptsArgs) -> Result<ExitCode> {
    for r in catalog().records() {
        if a.task.is_some_and(|t| t != r.task) {
            continue;
        }
        if a.jsonl {
            println!("{}", serde_json::to_string(&r)?);
        } else {
            println!("{}\t{}\t{}\t{}", r.task, r.id, r.role, r.text);
        }
    }
    Ok(ExitCode::SUCCESS)
}
