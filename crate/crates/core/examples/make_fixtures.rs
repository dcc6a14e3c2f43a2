//! Regenerate the shipped fixtures.
//!
//! ```text
//! cargo run -p vlmeval-core --example make_fixtures -- fixtures
//! ```
//!
//! Output is deterministic; rerunning overwrites the same bytes.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use serde_json::{json, Value};
use vlmeval_core::backends::record::BackendExchange;
use vlmeval_core::backends::{encode_image, request_digest, CLASSIFY_PATH};
use vlmeval_core::prompts::{catalog_lookup, Task};

const BLIP_TOTAL: usize = 1010;
const BLIP_POSITIVE: usize = 516;
const BLIP_FN: usize = 39;
const BLIP_FP: usize = 25;
const BLIP_LATENCY_MS: f64 = 490.0;

fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("encode png");
    out.into_inner()
}

fn write(path: &Path, bytes: &[u8]) {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).expect("create fixture dir");
    }
    fs::write(path, bytes).expect("write fixture");
}

fn write_json(path: &Path, value: &Value) {
    let mut s = serde_json::to_string_pretty(value).unwrap();
    s.push('\n');
    write(path, s.as_bytes());
}

/// 1010 congestion images with a replay store of A2 similarity scores that
/// give TP=477, FP=25, FN=39, TN=469.
fn blip_a2(root: &Path) {
    let dir = root.join("blip_a2");
    let pair = catalog_lookup(Task::Congestion, "A2").unwrap().label_pair().unwrap();
    let labels = pair.labels();
    let mut manifest = String::from("path,label\n");
    let mut store = String::new();
    let (mut pos_seen, mut neg_seen) = (0usize, 0usize);
    for i in 0..BLIP_TOTAL {
        // 7919 is coprime with 1010, so this is a permutation of the indices.
        let positive = (i * 7919) % BLIP_TOTAL < BLIP_POSITIVE;
        let predicted_positive = if positive {
            pos_seen += 1;
            (pos_seen * 13) % BLIP_POSITIVE >= BLIP_FN
        } else {
            neg_seen += 1;
            (neg_seen * 17) % (BLIP_TOTAL - BLIP_POSITIVE) < BLIP_FP
        };
        let shade = if positive { 60u8 } else { 190u8 };
        let img = RgbImage::from_fn(4, 4, |x, y| match (x, y) {
            (0, 0) => Rgb([(i % 256) as u8, (i / 256) as u8, shade]),
            _ => Rgb([shade, shade.wrapping_add((x * 9 + y * 5) as u8), shade]),
        });
        let bytes = png(&img);
        let rel = format!("images/c{i:04}.png");
        write(&dir.join(&rel), &bytes);
        manifest.push_str(&format!("{rel},{}\n", if positive { "congested" } else { "non-congested" }));

        let request = json!({ "image_b64": encode_image(&bytes), "labels": labels });
        let scores = if predicted_positive { [0.8, 0.2] } else { [0.3, 0.7] };
        let ex = BackendExchange {
            endpoint_path: CLASSIFY_PATH.into(),
            request_digest: request_digest(CLASSIFY_PATH, &request),
            request,
            response: json!({ "scores": scores }),
            latency_ms: BLIP_LATENCY_MS,
            error: None,
        };
        store.push_str(&serde_json::to_string(&ex).unwrap());
        store.push('\n');
    }
    write(&dir.join("manifest.csv"), manifest.as_bytes());
    write(&root.join("blip_a2.jsonl"), store.as_bytes());
}

const SCENE_W: u32 = 96;
const SCENE_H: u32 = 64;
const MISSED_HELMET_IMAGE: usize = 4;
const DUPLICATE_PERSON_IMAGE: usize = 6;
const FALSE_HELMET_IMAGE: usize = 9;
const WRONG_TEXTUAL_IMAGE: usize = 2;
const UNSURE_CHAT_IMAGE: usize = 1;

struct Rider {
    x0: f64,
    helmet: bool,
}

fn person_gt(x0: f64) -> [f64; 4] {
    [x0, 8.0, x0 + 16.0, 40.0]
}

fn person_det(x0: f64) -> [f64; 4] {
    [x0 + 1.0, 8.0, x0 + 17.0, 41.0]
}

fn motorbike_box(x0: f64) -> [f64; 4] {
    [x0 - 4.0, 20.0, x0 + 20.0, 56.0]
}

fn helmet_box(x0: f64) -> [f64; 4] {
    [x0 + 4.0, 8.0, x0 + 12.0, 14.0]
}

fn scenes() -> Vec<Vec<Rider>> {
    let mut k = 0;
    (0..10)
        .map(|i| {
            let xs: &[f64] = if matches!(i, 0 | 2 | 5 | 8) { &[8.0, 60.0] } else { &[36.0] };
            xs.iter()
                .map(|&x0| {
                    let r = Rider { x0, helmet: k % 2 == 0 };
                    k += 1;
                    r
                })
                .collect()
        })
        .collect()
}

fn paint(rect: [f64; 4], img: &mut RgbImage, color: Rgb<u8>) {
    for y in rect[1] as u32..rect[3] as u32 {
        for x in rect[0] as u32..rect[2] as u32 {
            img.put_pixel(x, y, color);
        }
    }
}

fn scene_image(i: usize, riders: &[Rider]) -> Vec<u8> {
    let mut img = RgbImage::from_fn(SCENE_W, SCENE_H, |x, y| {
        let v = ((x * 3 + y * 5 + i as u32 * 17) % 256) as u8;
        Rgb([v, v / 2, 255 - v])
    });
    for (j, r) in riders.iter().enumerate() {
        paint(motorbike_box(r.x0), &mut img, Rgb([40, 40, 40 + (i * 10 + j) as u8]));
        paint(person_gt(r.x0), &mut img, Rgb([200, 120 + (i * 7) as u8, (j * 50) as u8]));
        if r.helmet {
            paint(helmet_box(r.x0), &mut img, Rgb([250, 250, 0]));
        }
    }
    png(&img)
}

fn det(query: &str, bbox: [f64; 4], score: f64) -> Value {
    json!({ "query": query, "box": bbox, "score": score })
}

/// Ten-image helmet scene set (28 boxes) and ten congestion images, with one
/// mock fixture covering all six pipelines.
fn smoke(root: &Path) {
    let dir = root.join("smoke");
    let textual: Vec<String> = vlmeval_core::prompts::textual_prompts().iter().map(|p| p.query.clone()).collect();
    let mut entries = Vec::new();
    let mut manifest = String::from("path,class,xmin,ymin,xmax,ymax\n");
    let mut k = 0usize;
    for (i, riders) in scenes().iter().enumerate() {
        let rel = format!("images/helmet_{i:02}.png");
        write(&dir.join(&rel), &scene_image(i, riders));
        let mut dets = Vec::new();
        for r in riders {
            let gt_class = if r.helmet { "Helmet" } else { "NoHelmet" };
            let f = |b: [f64; 4]| b.map(|v| v.to_string()).join(",");
            manifest.push_str(&format!("{rel},motorbike,{}\n", f(motorbike_box(r.x0))));
            manifest.push_str(&format!("{rel},{gt_class},{}\n", f(person_gt(r.x0))));

            let p = person_det(r.x0);
            dets.push(det("motorbike", motorbike_box(r.x0), 0.85));
            dets.push(det("person", p, 0.9 - 0.01 * k as f64));
            if r.helmet {
                let s = if i == MISSED_HELMET_IMAGE { 0.05 } else { 0.8 };
                dets.push(det("helmet", helmet_box(r.x0), s));
            } else if i == FALSE_HELMET_IMAGE {
                dets.push(det("helmet", helmet_box(r.x0), 0.3));
            }
            if i == DUPLICATE_PERSON_IMAGE {
                dets.push(det("person", [r.x0 + 2.0, 9.0, r.x0 + 18.0, 41.0], 0.6));
            }
            let says_helmet = r.helmet != (i == WRONG_TEXTUAL_IMAGE && k == 4);
            if says_helmet {
                dets.push(det(&textual[0], p, 0.5));
            } else {
                dets.push(det(&textual[2], p, 0.5));
                dets.push(det(&textual[1], [p[0] + 1.0, p[1], p[2], p[3]], 0.4));
            }

            let seen_helmet = r.helmet && i != MISSED_HELMET_IMAGE || i == FALSE_HELMET_IMAGE;
            let gpt = if i == UNSURE_CHAT_IMAGE {
                "I am not sure."
            } else if seen_helmet {
                "helmet"
            } else {
                "nohelmet"
            };
            entries.push(json!({
                "image": rel,
                "crop": p,
                "generate": [
                    { "prompt_contains": "Only return helmet", "text": gpt },
                    { "prompt_contains": "Write no if any person", "text": if seen_helmet { "yes" } else { "no" } },
                    { "text": if seen_helmet {
                        "The rider is wearing a helmet."
                    } else {
                        "The rider is not wearing a helmet."
                    } }
                ]
            }));
            k += 1;
        }
        entries.push(json!({ "image": rel, "detect": dets }));
    }
    write(&dir.join("helmet.csv"), manifest.as_bytes());

    let mut manifest = String::from("path,label\n");
    for i in 0..10usize {
        let positive = i % 2 == 0;
        let shade = if positive { 70u8 } else { 180u8 };
        let img = RgbImage::from_fn(48, 32, |x, y| {
            let v = shade.wrapping_add(((x + y * 2 + i as u32 * 11) % 40) as u8);
            Rgb([v, v, shade])
        });
        let rel = format!("images/cong_{i:02}.png");
        write(&dir.join(&rel), &png(&img));
        manifest.push_str(&format!("{rel},{}\n", if positive { "congested" } else { "non-congested" }));
        let says = positive != (i == 3);
        entries.push(json!({
            "image": rel,
            "classify": { "class_index": if says { 0 } else { 1 } },
            "generate": [
                { "prompt_contains": "Only return non-Congested", "text": if says { "congested" } else { "non-Congested" } },
                { "prompt_contains": "Write Yes for congested", "text": if says { "Yes" } else { "No" } },
                { "prompt_contains": "Write Congested lanes", "text": if says { "Congested lanes" } else { "Free-lanes" } },
                { "text": if says {
                    "Vehicles are queued bumper to bumper."
                } else {
                    "The lanes are open with light traffic."
                } }
            ]
        }));
    }
    write(&dir.join("congestion.csv"), manifest.as_bytes());
    write_json(&dir.join("mock.json"), &json!({ "latency_ms": 25.0, "entries": entries }));
}

fn main() {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fixtures"));
    blip_a2(&root);
    smoke(&root);
    println!("fixtures written to {}", root.display());
}
