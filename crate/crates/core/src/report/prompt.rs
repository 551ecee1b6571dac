//! Prompt assembly and parsing of five-section completions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::head::{GaitClass, Prediction};

use super::metadata::GaitMetadata;
use super::ReportSections;

pub const PROMPT_VERSION: &str = "gaitfuse-prompt-v1";
pub const EMBEDDING_TOP_K: usize = 5;

/// Section headers, in report order.
pub const SECTION_HEADERS: [&str; 5] = [
    "Classification Result",
    "Confidence",
    "Data Analysis",
    "Interpretation",
    "Recommendations",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

fn system_prompt() -> String {
    let mut s = String::from(
        "You are a clinical gait analyst reviewing the output of an RGB-D gait classifier. \
         Write a concise report for a clinician. Do not invent measurements that are not given.\n\
         Answer with exactly these five sections, in this order. Start each section with its header \
         alone on a line, followed by a colon:\n",
    );
    for h in SECTION_HEADERS {
        let _ = writeln!(s, "{h}:");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingSummary {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
    pub top: [Option<usize>; EMBEDDING_TOP_K],
}

/// Mean, population std and the indices of the largest-magnitude components
/// (ties broken by lower index).
pub fn summarize_embedding(e: &[f32]) -> EmbeddingSummary {
    let n = e.len().max(1) as f64;
    let mean = e.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = e.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e[b].abs().total_cmp(&e[a].abs()).then(a.cmp(&b)));
    let mut top = [None; EMBEDDING_TOP_K];
    for (slot, idx) in top.iter_mut().zip(order) {
        *slot = Some(idx);
    }
    EmbeddingSummary {
        dim: e.len(),
        mean,
        std: var.sqrt(),
        top,
    }
}

pub fn format_probs(pred: &Prediction) -> String {
    GaitClass::ALL
        .iter()
        .zip(pred.probs)
        .map(|(c, p)| format!("{} {p:.2}", c.display_name()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn assemble_prompt(pred: &Prediction, meta: &GaitMetadata) -> PromptPair {
    let summary = summarize_embedding(&pred.embedding);
    let top: Vec<String> = summary.top.iter().flatten().map(|i| i.to_string()).collect();
    let mut u = String::new();
    let _ = writeln!(u, "Template: {PROMPT_VERSION}");
    let _ = writeln!(u, "Classification: {}", pred.class_label.display_name());
    let _ = writeln!(u, "Confidence: {:.2}", pred.confidence);
    let _ = writeln!(u, "Class probabilities: {}", format_probs(pred));
    let _ = writeln!(
        u,
        "Fused embedding summary: dimension {}, mean {:.4}, std {:.4}, largest-magnitude components at indices [{}]",
        summary.dim,
        summary.mean,
        summary.std,
        top.join(", ")
    );
    let _ = writeln!(u, "Subject: {}", meta.subject_id);
    let _ = writeln!(u, "Frame index: {}", meta.frame_index);
    let _ = writeln!(u, "Reported symptoms: {}", meta.symptom_phrases().join("; "));
    let _ = writeln!(u, "Capture conditions: {}", meta.capture);
    u.push_str("Write the five-section clinical report.\n");
    PromptPair {
        system: system_prompt(),
        user: u,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    Missing(&'static str),
    Duplicate(&'static str),
    Empty(&'static str),
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseError::Missing(h) => write!(f, "section \"{h}\" missing"),
            ParseError::Duplicate(h) => write!(f, "section \"{h}\" appears twice"),
            ParseError::Empty(h) => write!(f, "section \"{h}\" is empty"),
        }
    }
}

/// Matches a header line: optional markdown `#` / `**` decoration and
/// surrounding whitespace, exact header name, colon. Returns the header
/// index and any text after the colon.
fn header_line(line: &str) -> Option<(usize, &str)> {
    let t = line.trim().trim_start_matches('#').trim_start();
    let t = t.strip_prefix("**").unwrap_or(t);
    SECTION_HEADERS.iter().enumerate().find_map(|(i, h)| {
        let rest = t.strip_prefix(h)?;
        let rest = rest.strip_prefix("**").unwrap_or(rest).trim_start();
        let rest = rest.strip_prefix(':')?;
        let rest = rest.strip_prefix("**").unwrap_or(rest);
        Some((i, rest.trim()))
    })
}

/// Splits a completion into the five sections. Text before the first
/// header is ignored.
pub fn parse_sections(text: &str) -> Result<ReportSections, ParseError> {
    let mut bodies: [Option<Vec<&str>>; 5] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((i, rest)) = header_line(line) {
            if bodies[i].is_some() {
                return Err(ParseError::Duplicate(SECTION_HEADERS[i]));
            }
            bodies[i] = Some(if rest.is_empty() { Vec::new() } else { vec![rest] });
            current = Some(i);
        } else if let Some(i) = current {
            bodies[i].as_mut().expect("open section").push(line.trim());
        }
    }
    let mut out: Vec<String> = Vec::with_capacity(5);
    for (i, body) in bodies.into_iter().enumerate() {
        let body = body.ok_or(ParseError::Missing(SECTION_HEADERS[i]))?;
        let text = body.join("\n").trim().to_string();
        if text.is_empty() {
            return Err(ParseError::Empty(SECTION_HEADERS[i]));
        }
        out.push(text);
    }
    let mut it = out.into_iter();
    let mut next = || it.next().expect("five sections");
    Ok(ReportSections {
        classification_result: next(),
        confidence: next(),
        data_analysis: next(),
        interpretation: next(),
        recommendations: next(),
    })
}
