//! CSV manifests binding image files to ground truth.
//!
//! Classification: header `path,label`, label one of the task's two class
//! words (`congested`/`non-congested`, `cracked`/`non-cracked`, any case).
//!
//! Detection: header `path,class,xmin,ymin,xmax,ymax`, class one of
//! `motorbike`, `Helmet`, `NoHelmet`; consecutive or scattered rows with the
//! same path form one sample, ordered by first appearance.
//!
//! Paths are relative to the manifest's directory. Sample order is file order
//! and is the order of every result and report downstream.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::postprocess::HelmetLabel;
use crate::prompts::Task;

pub const CLASSIFICATION_HEADER: [&str; 2] = ["path", "label"];
pub const DETECTION_HEADER: [&str; 6] = ["path", "class", "xmin", "ymin", "xmax", "ymax"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error("{path}: bad header {found:?}, expected {expected:?}")]
    BadHeader { path: String, found: String, expected: String },
    #[error("{path}: line {line}: unknown label {label:?} for task {task}")]
    UnknownLabel { path: String, line: u64, label: String, task: Task },
    #[error("{path}: line {line}: unknown class {class:?}; expected motorbike, Helmet or NoHelmet")]
    UnknownClass { path: String, line: u64, class: String },
    #[error("{path}: line {line}: duplicate image path {image:?}")]
    DuplicatePath { path: String, line: u64, image: String },
    #[error("{path}: line {line}: image {image:?} is missing or unreadable: {reason}")]
    MissingImage { path: String, line: u64, image: String, reason: String },
    #[error("{path}: line {line}: bad box: {message}")]
    BadBox { path: String, line: u64, message: String },
    #[error("task {0} has no classification labels")]
    NotClassification(Task),
}

/// Ground truth of a classification sample; `Positive` means the condition
/// is present (congested, cracked).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrueClass {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSample {
    /// The path exactly as written in the manifest.
    pub id: String,
    pub image_path: PathBuf,
    pub true_class: TrueClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GtClass {
    #[serde(rename = "motorbike")]
    Motorbike,
    Helmet,
    NoHelmet,
}

impl GtClass {
    pub fn helmet_label(self) -> Option<HelmetLabel> {
        match self {
            GtClass::Motorbike => None,
            GtClass::Helmet => Some(HelmetLabel::Helmet),
            GtClass::NoHelmet => Some(HelmetLabel::NoHelmet),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class: GtClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSample {
    pub id: String,
    pub image_path: PathBuf,
    pub ground_truth: Vec<GtBox>,
}

/// Anything a pipeline can iterate over.
pub trait Sample {
    fn id(&self) -> &str;
    fn image_path(&self) -> &Path;
}

impl Sample for ClassificationSample {
    fn id(&self) -> &str {
        &self.id
    }
    fn image_path(&self) -> &Path {
        &self.image_path
    }
}

impl Sample for DetectionSample {
    fn id(&self) -> &str {
        &self.id
    }
    fn image_path(&self) -> &Path {
        &self.image_path
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest<S> {
    pub task: Task,
    pub samples: Vec<S>,
    pub source: PathBuf,
}

impl<S> Manifest<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub type ClassificationManifest = Manifest<ClassificationSample>;
pub type DetectionManifest = Manifest<DetectionSample>;

/// Class words accepted in the `label` column, positive first.
pub fn class_words(task: Task) -> Option<(&'static str, &'static str)> {
    match task {
        Task::Congestion => Some(("congested", "non-congested")),
        Task::Crack => Some(("cracked", "non-cracked")),
        Task::Helmet => None,
    }
}

struct Reader {
    path: String,
    base: PathBuf,
    csv: csv::Reader<File>,
}

impl Reader {
    fn open(path: &Path, expected: &[&str]) -> Result<Self, DatasetError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| DatasetError::Io { path: display.clone(), source })?;
        let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header =
            csv.headers().map_err(|e| DatasetError::Csv { path: display.clone(), line: 1, message: e.to_string() })?;
        let found: Vec<&str> = header.iter().collect();
        if found != expected {
            return Err(DatasetError::BadHeader {
                path: display,
                found: found.join(","),
                expected: expected.join(","),
            });
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { path: display, base, csv })
    }

    fn rows(&mut self) -> Result<Vec<(u64, csv::StringRecord)>, DatasetError> {
        let mut out = Vec::new();
        for rec in self.csv.records() {
            let rec = rec.map_err(|e| DatasetError::Csv {
                path: self.path.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            out.push((line, rec));
        }
        Ok(out)
    }

    fn image(&self, line: u64, rel: &str) -> Result<PathBuf, DatasetError> {
        let p = self.base.join(rel);
        File::open(&p).map(|_| p).map_err(|e| DatasetError::MissingImage {
            path: self.path.clone(),
            line,
            image: rel.to_string(),
            reason: e.to_string(),
        })
    }
}

pub fn load_classification_manifest(path: &Path, task: Task) -> Result<ClassificationManifest, DatasetError> {
    let (pos, neg) = class_words(task).ok_or(DatasetError::NotClassification(task))?;
    let mut reader = Reader::open(path, &CLASSIFICATION_HEADER)?;
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (line, rec) in reader.rows()? {
        let (rel, label) = (&rec[0], &rec[1]);
        let true_class = if label.eq_ignore_ascii_case(pos) {
            TrueClass::Positive
        } else if label.eq_ignore_ascii_case(neg) {
            TrueClass::Negative
        } else {
            return Err(DatasetError::UnknownLabel { path: reader.path.clone(), line, label: label.to_string(), task });
        };
        if !seen.insert(rel.to_string()) {
            return Err(DatasetError::DuplicatePath { path: reader.path.clone(), line, image: rel.to_string() });
        }
        let image_path = reader.image(line, rel)?;
        samples.push(ClassificationSample { id: rel.to_string(), image_path, true_class });
    }
    Ok(Manifest { task, samples, source: path.to_path_buf() })
}

fn parse_gt_class(s: &str) -> Option<GtClass> {
    match s.to_ascii_lowercase().as_str() {
        "motorbike" => Some(GtClass::Motorbike),
        "helmet" => Some(GtClass::Helmet),
        "nohelmet" => Some(GtClass::NoHelmet),
        _ => None,
    }
}

pub fn load_detection_manifest(path: &Path) -> Result<DetectionManifest, DatasetError> {
    let mut reader = Reader::open(path, &DETECTION_HEADER)?;
    let mut samples: Vec<DetectionSample> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (line, rec) in reader.rows()? {
        let rel = &rec[0];
        let class = parse_gt_class(&rec[1]).ok_or_else(|| DatasetError::UnknownClass {
            path: reader.path.clone(),
            line,
            class: rec[1].to_string(),
        })?;
        let bad = |message: String| DatasetError::BadBox { path: reader.path.clone(), line, message };
        let mut coords = [0.0f64; 4];
        for (i, c) in coords.iter_mut().enumerate() {
            *c = rec[2 + i].parse().map_err(|_| bad(format!("{:?} is not a number", &rec[2 + i])))?;
        }
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| bad(e.to_string()))?;
        let slot = match index.get(rel) {
            Some(&i) => i,
            None => {
                let image_path = reader.image(line, rel)?;
                samples.push(DetectionSample { id: rel.to_string(), image_path, ground_truth: Vec::new() });
                index.insert(rel.to_string(), samples.len() - 1);
                samples.len() - 1
            }
        };
        samples[slot].ground_truth.push(GtBox { class, bbox });
    }
    Ok(Manifest { task: Task::Helmet, samples, source: path.to_path_buf() })
}

/// Counts printed by `inspect`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestSummary {
    pub task: Option<Task>,
    pub samples: usize,
    pub positive: usize,
    pub negative: usize,
    pub boxes: usize,
    pub motorbike: usize,
    pub helmet: usize,
    pub no_helmet: usize,
}

impl ManifestSummary {
    pub fn of_classification(m: &ClassificationManifest) -> Self {
        let positive = m.samples.iter().filter(|s| s.true_class == TrueClass::Positive).count();
        Self { task: Some(m.task), samples: m.len(), positive, negative: m.len() - positive, ..Self::default() }
    }

    pub fn of_detection(m: &DetectionManifest) -> Self {
        let count = |c: GtClass| m.samples.iter().flat_map(|s| &s.ground_truth).filter(|g| g.class == c).count();
        Self {
            task: Some(m.task),
            samples: m.len(),
            boxes: m.samples.iter().map(|s| s.ground_truth.len()).sum(),
            motorbike: count(GtClass::Motorbike),
            helmet: count(GtClass::Helmet),
            no_helmet: count(GtClass::NoHelmet),
            ..Self::default()
        }
    }
}

impl std::fmt::Display for ManifestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.task {
            Some(Task::Helmet) => write!(
                f,
                "{} samples, {} boxes ({} motorbike, {} Helmet, {} NoHelmet)",
                self.samples, self.boxes, self.motorbike, self.helmet, self.no_helmet
            ),
            _ => write!(f, "{} samples, {} positive, {} negative", self.samples, self.positive, self.negative),
        }
    }
}

/// Load a manifest of unknown task: the header decides classification versus
/// detection; for classification the first task whose class words fit wins.
pub fn inspect_manifest(path: &Path) -> Result<ManifestSummary, DatasetError> {
    let first = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let header: Vec<String> = first.lines().next().unwrap_or("").split(',').map(|s| s.trim().to_string()).collect();
    if header == DETECTION_HEADER {
        return Ok(ManifestSummary::of_detection(&load_detection_manifest(path)?));
    }
    match load_classification_manifest(path, Task::Congestion) {
        Err(DatasetError::UnknownLabel { .. }) => {
            Ok(ManifestSummary::of_classification(&load_classification_manifest(path, Task::Crack)?))
        }
        other => other.map(|m| ManifestSummary::of_classification(&m)),
    }
}
