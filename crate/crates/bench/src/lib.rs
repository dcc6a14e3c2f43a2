//! Benchmark inputs shared by the criterion targets.

use vlmeval_core::datasets::{ClassificationSample, Manifest, TrueClass};
use vlmeval_core::geometry::{BoundingBox, ScoredDetection};
use vlmeval_core::pipelines::{Outcome, Prediction, SampleResult};
use vlmeval_core::prompts::{Task, Verdict};

/// Small linear congruential generator so inputs are fixed across runs.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn detections(rng: &mut Lcg, n: usize, class_index: usize, span: f64, size: f64) -> Vec<ScoredDetection> {
    (0..n)
        .map(|_| {
            let x = rng.next_f64() * span;
            let y = rng.next_f64() * span;
            let w = 1.0 + rng.next_f64() * size;
            let h = 1.0 + rng.next_f64() * size;
            ScoredDetection { bbox: BoundingBox::new(x, y, x + w, y + h).unwrap(), score: rng.next_f64(), class_index }
        })
        .collect()
}

pub fn verdict_set(rng: &mut Lcg, n: usize) -> (Vec<SampleResult>, Manifest<ClassificationSample>) {
    let mut samples = Vec::with_capacity(n);
    let mut results = Vec::with_capacity(n);
    for i in 0..n {
        let truth = if rng.next_f64() < 0.5 { TrueClass::Positive } else { TrueClass::Negative };
        let verdict = match (rng.next_f64() * 3.0) as u8 {
            0 => Verdict::Positive,
            1 => Verdict::Negative,
            _ => Verdict::Unknown,
        };
        samples.push(ClassificationSample { id: i.to_string(), image_path: "x.png".into(), true_class: truth });
        results.push(SampleResult {
            sample_id: i.to_string(),
            outcome: Outcome::Prediction(Prediction::Class(verdict)),
            latency_ms: Some(rng.next_f64() * 100.0),
        });
    }
    (results, Manifest { task: Task::Congestion, samples, source: "bench.csv".into() })
}
