//! Evaluation harness for zero-shot vision-language models on traffic and
//! infrastructure tasks: congestion and crack classification, and helmet
//! detection on motorbike riders.

pub mod backends;
pub mod datasets;
pub mod geometry;
pub mod image_ops;
pub mod metrics;
pub mod pipelines;
pub mod postprocess;
pub mod prompts;
pub mod report;

pub use backends::{BackendClient, BackendEndpoint, BackendError, BackendKind, Transport};
pub use datasets::{
    ClassificationManifest, ClassificationSample, DatasetError, DetectionManifest, DetectionSample, GtBox, GtClass,
    TrueClass,
};
pub use geometry::{BoundingBox, GeometryError, ScoredDetection};
pub use metrics::{ClassReport, ConfusionMatrix, DetectionReport, MetricsError};
pub use pipelines::{Outcome, Prediction, RunOptions, SampleResult};
pub use postprocess::{AssocMetric, AssociationConfig, HelmetLabel, RiderVerdict};
pub use prompts::{AliasMap, Task, Verdict};
pub use report::{ReportFormat, ReportRow, RowSource};
