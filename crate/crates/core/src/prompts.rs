//! Prompt catalog for the three tasks, and the parser that turns free-text
//! model answers back into class verdicts.
//!
//! Answers are matched on word tokens (runs of letters, digits and `-`), so
//! `non-cracked` is a single token and never matches the alias `cracked`.
//! When aliases overlap, the one with more tokens is matched first and its
//! tokens are consumed, which keeps `not wearing helmet` from also counting
//! as `helmet`.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::postprocess::HelmetLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Congestion,
    Crack,
    Helmet,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Congestion => "congestion",
            Task::Crack => "crack",
            Task::Helmet => "helmet",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "congestion" => Ok(Task::Congestion),
            "crack" => Ok(Task::Crack),
            "helmet" => Ok(Task::Helmet),
            _ => Err(PromptError::UnknownTask(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown prompt id {id:?} for task {task}; valid ids: {}", valid.join(", "))]
    UnknownId { task: Task, id: String, valid: Vec<String> },
    #[error("unknown task {0:?}; expected congestion, crack or helmet")]
    UnknownTask(String),
    #[error("prompt {id} is a {actual}, expected a {expected}")]
    WrongKind { id: String, actual: &'static str, expected: &'static str },
    #[error("cannot build a follow-up from an empty description")]
    EmptyDescription,
    #[error("alias map: {0}")]
    BadAliases(String),
}

/// Parsed answer. `Positive` is the condition-present class (congested,
/// cracked, helmet worn).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Positive,
    Negative,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasMap {
    positive: Vec<String>,
    negative: Vec<String>,
}

impl AliasMap {
    /// Every alias must parse back to its own class on its own; that rules
    /// out empty aliases and the same phrase under both classes.
    pub fn new<P, N>(positive: P, negative: N) -> Result<Self, PromptError>
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        let map = Self {
            positive: positive.into_iter().map(Into::into).collect(),
            negative: negative.into_iter().map(Into::into).collect(),
        };
        if map.positive.is_empty() || map.negative.is_empty() {
            return Err(PromptError::BadAliases("both classes need an alias".into()));
        }
        for (aliases, want) in [(&map.positive, Verdict::Positive), (&map.negative, Verdict::Negative)] {
            for a in aliases {
                if parse_label(a, &map) != want {
                    return Err(PromptError::BadAliases(format!("alias {a:?} does not parse as its own class")));
                }
            }
        }
        Ok(map)
    }

    pub fn positive(&self) -> &[String] {
        &self.positive
    }

    pub fn negative(&self) -> &[String] {
        &self.negative
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Map a model answer onto a class. Exactly one class must be mentioned for
/// a definite verdict; none or both gives `Unknown`.
pub fn parse_label(text: &str, aliases: &AliasMap) -> Verdict {
    let words = tokens(text);
    let mut patterns: Vec<(Vec<String>, Verdict)> = aliases
        .positive
        .iter()
        .map(|a| (tokens(a), Verdict::Positive))
        .chain(aliases.negative.iter().map(|a| (tokens(a), Verdict::Negative)))
        .filter(|(t, _)| !t.is_empty())
        .collect();
    // longest first; stable so equal lengths keep declaration order
    patterns.sort_by_key(|(t, _)| std::cmp::Reverse(t.len()));

    let mut used = vec![false; words.len()];
    let (mut pos, mut neg) = (false, false);
    for (pat, class) in &patterns {
        let n = pat.len();
        if n > words.len() {
            continue;
        }
        let mut i = 0;
        while i + n <= words.len() {
            if !used[i..i + n].iter().any(|&u| u) && words[i..i + n] == pat[..] {
                used[i..i + n].iter_mut().for_each(|u| *u = true);
                match class {
                    Verdict::Positive => pos = true,
                    _ => neg = true,
                }
                i += n;
            } else {
                i += 1;
            }
        }
    }
    match (pos, neg) {
        (true, false) => Verdict::Positive,
        (false, true) => Verdict::Negative,
        _ => Verdict::Unknown,
    }
}

/// Class-name pair for a similarity classifier; index 0 is the positive label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelPair {
    pub id: String,
    pub task: Task,
    pub positive_label: String,
    pub negative_label: String,
    pub aliases: AliasMap,
}

impl LabelPair {
    pub fn labels(&self) -> [&str; 2] {
        [&self.positive_label, &self.negative_label]
    }
}

/// Two-turn prompt: a description request followed by a question that forces
/// a class answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CascadeSpec {
    pub id: String,
    pub task: Task,
    pub initial_prompt: String,
    pub follow_up_prompt: String,
    pub aliases: AliasMap,
}

impl CascadeSpec {
    pub fn follow_up(&self, description: &str) -> Result<String, PromptError> {
        build_followup(description, &self.follow_up_prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DirectPrompt {
    pub id: String,
    pub task: Task,
    pub text: String,
    pub aliases: AliasMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TextualDetectionPrompt {
    pub id: String,
    pub query: String,
    pub mapped_class: HelmetLabel,
}

/// `"<description>\n<follow_up>"`.
pub fn build_followup(description: &str, follow_up: &str) -> Result<String, PromptError> {
    if description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    Ok(format!("{description}\n{follow_up}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogEntry {
    Labels(&'static LabelPair),
    Cascade(&'static CascadeSpec),
    Direct(&'static DirectPrompt),
    Textual(&'static TextualDetectionPrompt),
}

impl CatalogEntry {
    pub fn id(&self) -> &'static str {
        match self {
            CatalogEntry::Labels(p) => &p.id,
            CatalogEntry::Cascade(c) => &c.id,
            CatalogEntry::Direct(d) => &d.id,
            CatalogEntry::Textual(t) => &t.id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CatalogEntry::Labels(_) => "label pair",
            CatalogEntry::Cascade(_) => "cascade",
            CatalogEntry::Direct(_) => "direct prompt",
            CatalogEntry::Textual(_) => "textual detection prompt",
        }
    }

    fn wrong(&self, expected: &'static str) -> PromptError {
        PromptError::WrongKind { id: self.id().to_string(), actual: self.kind(), expected }
    }

    pub fn label_pair(self) -> Result<&'static LabelPair, PromptError> {
        match self {
            CatalogEntry::Labels(p) => Ok(p),
            other => Err(other.wrong("label pair")),
        }
    }

    pub fn cascade(self) -> Result<&'static CascadeSpec, PromptError> {
        match self {
            CatalogEntry::Cascade(c) => Ok(c),
            other => Err(other.wrong("cascade")),
        }
    }

    pub fn direct(self) -> Result<&'static DirectPrompt, PromptError> {
        match self {
            CatalogEntry::Direct(d) => Ok(d),
            other => Err(other.wrong("direct prompt")),
        }
    }
}

/// One line of the exported catalog fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub task: Task,
    pub id: String,
    pub role: String,
    pub text: String,
}

pub struct Catalog {
    pub label_pairs: Vec<LabelPair>,
    pub cascades: Vec<CascadeSpec>,
    pub direct: Vec<DirectPrompt>,
    pub textual: Vec<TextualDetectionPrompt>,
}

const CONGESTION_PAIRS: [(&str, &str, &str); 5] = [
    ("A1", "Congested", "Non-congested"),
    ("A2", "Congested lanes", "Non-congested lanes"),
    ("A3", "Lanes with congestion", "Lanes without congestion"),
    ("A4", "Queued traffic", "Free-flow traffic"),
    ("A5", "Congested lanes", "Free-lanes"),
];

const CRACK_PAIRS: [(&str, &str, &str); 5] = [
    ("B1", "Cracked", "Non-Cracked"),
    ("B2", "Cracks present", "Cracks absent"),
    ("B3", "Cracked surface", "Non-Cracked surface"),
    ("B4", "Cracked pavement", "Crack-free pavement"),
    ("B5", "Crack", "No crack"),
];

const CONGESTION_INITIAL: [&str; 5] = [
    "Classify whether highway lanes are congested or not in the image.",
    "Classify whether highway lanes are congested or not in the image.",
    "Classify whether in the image highway lanes are congested or not.",
    "Classify whether the highway have congested lane or free-lane in the image.",
    "Check whether the highway lanes are congested or not in the image.",
];

const CONGESTION_FOLLOW_UP: [&str; 5] = [
    "Write Yes for congested, No for non-congested.",
    "Write Congested lanes if lanes are congested, Free-lanes if lanes are not congested.",
    "Write Congested lanes if lanes are congested, Free-lanes if lanes are not congested.",
    "Write Congested lanes if lanes are congested, Free-lanes if free-lane.",
    "Write Congested lanes if lanes are congested, Free-lanes if lanes are not congested.",
];

const CRACK_INITIAL: [&str; 5] = [
    "Classify whether the pavements have cracks or not in the image?",
    "Classify whether the cracks are present or not in the pavement surface image?",
    "Classify whether the pavement surface is cracked or not in the image?",
    "Classify whether in the image, the pavement surface have cracks or not?",
    "Check whether the pavement surface has any cracks or not?",
];

const CRACK_FOLLOW_UP: [&str; 5] = [
    "Write Cracked if cracks present, Non-cracked if cracks not present.",
    "Write Cracked if cracks present, Non-cracked if cracks not present.",
    "Write Cracked if surface is cracked, Non-cracked if surface is not-cracked.",
    "Write Cracked if surface has cracks, Non-cracked if surface do not have cracks.",
    "Write Cracked if cracks present, Non-cracked if cracks not present.",
];

const GPT_CONGESTION: &str = "Can you tell me whether the closer lane are free lanes or not. Only return non-Congested if there are all free lanes otherwise return congested";
const GPT_CRACK: &str = "Can you tell me whether the pavements have cracks or not in the image. Only return yes if crack is present and no if crack is not present.";
const LLAVA_HELMET: &str = "Identify whether all person sitting on motorbike is wearing helmet or not?";
const LLAVA_HELMET_FOLLOW_UP: &str =
    "Write no if any person is not wearing helmet and write yes if all person is wearing helmet.";
const GPT_HELMET: &str = "Can you tell me the if there is a person wearing helmet or not. Only return helmet if all person are wearing helmet otherwise result nohelmet";

const TEXTUAL: [(&str, &str, HelmetLabel); 3] = [
    ("1", "A person on a motorbike wearing helmet", HelmetLabel::Helmet),
    ("2", "A person on a motorbike bareheaded", HelmetLabel::NoHelmet),
    ("3", "A person on a motorbike without wearing helmet", HelmetLabel::NoHelmet),
];

/// Phrases that put an answer in the NoHelmet class for every helmet prompt.
const HELMET_NEGATIONS: [&str; 11] = [
    "nohelmet",
    "no helmet",
    "no helmets",
    "not wearing helmet",
    "not wearing a helmet",
    "not wearing helmets",
    "without helmet",
    "without a helmet",
    "without wearing helmet",
    "without wearing a helmet",
    "bareheaded",
];

fn aliases(pos: &[&str], neg: &[&str]) -> AliasMap {
    AliasMap::new(pos.iter().copied(), neg.iter().copied()).expect("built-in alias map")
}

fn helmet_aliases(extra_pos: &str, extra_neg: Option<&str>) -> AliasMap {
    let neg: Vec<&str> = extra_neg.into_iter().chain(HELMET_NEGATIONS).collect();
    aliases(&[extra_pos], &neg)
}

fn build_catalog() -> Catalog {
    let label_pairs = CONGESTION_PAIRS
        .iter()
        .map(|p| (Task::Congestion, p))
        .chain(CRACK_PAIRS.iter().map(|p| (Task::Crack, p)))
        .map(|(task, &(id, pos, neg))| LabelPair {
            id: id.into(),
            task,
            positive_label: pos.into(),
            negative_label: neg.into(),
            aliases: aliases(&[pos], &[neg]),
        })
        .collect();

    let mut cascades = Vec::new();
    for i in 0..5 {
        let congestion_aliases =
            if i == 0 { aliases(&["Yes"], &["No"]) } else { aliases(&["Congested lanes"], &["Free-lanes"]) };
        cascades.push(CascadeSpec {
            id: format!("P{n}F{n}", n = i + 1),
            task: Task::Congestion,
            initial_prompt: CONGESTION_INITIAL[i].into(),
            follow_up_prompt: CONGESTION_FOLLOW_UP[i].into(),
            aliases: congestion_aliases,
        });
    }
    for i in 0..5 {
        cascades.push(CascadeSpec {
            id: format!("P{n}F{n}", n = i + 1),
            task: Task::Crack,
            initial_prompt: CRACK_INITIAL[i].into(),
            follow_up_prompt: CRACK_FOLLOW_UP[i].into(),
            aliases: aliases(&["Cracked"], &["Non-cracked"]),
        });
    }

    let direct = vec![
        DirectPrompt {
            id: "gpt-congestion".into(),
            task: Task::Congestion,
            text: GPT_CONGESTION.into(),
            aliases: aliases(&["congested"], &["non-congested"]),
        },
        DirectPrompt {
            id: "gpt-crack".into(),
            task: Task::Crack,
            text: GPT_CRACK.into(),
            aliases: aliases(&["yes"], &["no"]),
        },
        DirectPrompt {
            id: "llava-helmet".into(),
            task: Task::Helmet,
            text: LLAVA_HELMET.into(),
            aliases: helmet_aliases("helmet", None),
        },
        DirectPrompt {
            id: "llava-helmet-followup".into(),
            task: Task::Helmet,
            text: LLAVA_HELMET_FOLLOW_UP.into(),
            aliases: helmet_aliases("yes", Some("no")),
        },
        DirectPrompt {
            id: "gpt-helmet".into(),
            task: Task::Helmet,
            text: GPT_HELMET.into(),
            aliases: helmet_aliases("helmet", None),
        },
    ];

    let textual = TEXTUAL
        .iter()
        .map(|&(id, query, mapped_class)| TextualDetectionPrompt { id: id.into(), query: query.into(), mapped_class })
        .collect();

    Catalog { label_pairs, cascades, direct, textual }
}

static CATALOG: LazyLock<Catalog> = LazyLock::new(build_catalog);

pub fn catalog() -> &'static Catalog {
    &CATALOG
}

impl Catalog {
    pub fn entries(&'static self, task: Task) -> Vec<CatalogEntry> {
        let mut out: Vec<CatalogEntry> = Vec::new();
        out.extend(self.label_pairs.iter().filter(|p| p.task == task).map(CatalogEntry::Labels));
        out.extend(self.cascades.iter().filter(|c| c.task == task).map(CatalogEntry::Cascade));
        out.extend(self.direct.iter().filter(|d| d.task == task).map(CatalogEntry::Direct));
        if task == Task::Helmet {
            out.extend(self.textual.iter().map(CatalogEntry::Textual));
        }
        out
    }

    /// Flattened `(task, id, role, text)` records in catalog order.
    pub fn records(&'static self) -> Vec<PromptRecord> {
        let rec = |task: Task, id: &str, role: &str, text: &str| PromptRecord {
            task,
            id: id.into(),
            role: role.into(),
            text: text.into(),
        };
        let mut out = Vec::new();
        for task in [Task::Congestion, Task::Crack, Task::Helmet] {
            for e in self.entries(task) {
                match e {
                    CatalogEntry::Labels(p) => {
                        out.push(rec(task, &p.id, "positive_label", &p.positive_label));
                        out.push(rec(task, &p.id, "negative_label", &p.negative_label));
                    }
                    CatalogEntry::Cascade(c) => {
                        out.push(rec(task, &c.id, "initial", &c.initial_prompt));
                        out.push(rec(task, &c.id, "follow_up", &c.follow_up_prompt));
                    }
                    CatalogEntry::Direct(d) => out.push(rec(task, &d.id, "prompt", &d.text)),
                    CatalogEntry::Textual(t) => out.push(rec(task, &t.id, "detection_query", &t.query)),
                }
            }
        }
        out
    }
}

fn normalize_id(id: &str) -> String {
    id.trim().to_ascii_lowercase().replace(['-', '_'], "")
}

/// Look up a prompt by task and id. Ids are matched case-insensitively with
/// dashes ignored, so `P2-F2` finds `P2F2`.
pub fn catalog_lookup(task: Task, id: &str) -> Result<CatalogEntry, PromptError> {
    let entries = catalog().entries(task);
    let want = normalize_id(id);
    entries.iter().find(|e| normalize_id(e.id()) == want).copied().ok_or_else(|| PromptError::UnknownId {
        task,
        id: id.to_string(),
        valid: entries.iter().map(|e| e.id().to_string()).collect(),
    })
}

/// The three textual detection queries, in query-index order.
pub fn textual_prompts() -> &'static [TextualDetectionPrompt] {
    &catalog().textual
}

/// Ids usable with a pipeline family, for error messages and `--help`.
pub fn ids_of_kind(task: Task, kind: &str) -> Vec<&'static str> {
    catalog().entries(task).into_iter().filter(|e| e.kind() == kind).map(|e| e.id()).collect()
}
