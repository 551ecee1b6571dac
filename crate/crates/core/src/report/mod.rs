//! Clinical report generation from a prediction and per-frame metadata.

mod client;
mod metadata;
mod prompt;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use client::{generate_reports, LlmClient, LlmEndpointConfig, TOKEN_ENV};
pub use metadata::{CaptureConditions, GaitMetadata, Lighting, Occlusion, Symptom};
pub use prompt::{
    assemble_prompt, parse_sections, summarize_embedding, EmbeddingSummary, ParseError, PromptPair, PROMPT_VERSION,
    SECTION_HEADERS,
};
pub use template::{
    recommendation, render_template_report, symptom_interpretation, ConfidenceBand, ROUTINE_MONITORING,
    TEMPLATE_MODEL_ID,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSections {
    pub classification_result: String,
    pub confidence: String,
    pub data_analysis: String,
    pub interpretation: String,
    pub recommendations: String,
}

impl ReportSections {
    /// Sections paired with their headers, in report order.
    pub fn entries(&self) -> [(&'static str, &str); 5] {
        [
            (SECTION_HEADERS[0], &self.classification_result),
            (SECTION_HEADERS[1], &self.confidence),
            (SECTION_HEADERS[2], &self.data_analysis),
            (SECTION_HEADERS[3], &self.interpretation),
            (SECTION_HEADERS[4], &self.recommendations),
        ]
    }

    pub fn is_complete(&self) -> bool {
        self.entries().iter().all(|(_, s)| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Llm,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalReport {
    pub sections: ReportSections,
    pub source: ReportSource,
    pub model_id: String,
    pub latency_ms: f64,
}

impl fmt::Display for ClinicalReport {
    /// Plain-text rendering: one header line per section followed by its body.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (h, body)) in self.sections.entries().into_iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "{h}:")?;
            writeln!(f, "{body}")?;
        }
        Ok(())
    }
}

/// Per-frame output file: `{prediction, metadata, report}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub prediction: crate::head::Prediction,
    pub metadata: GaitMetadata,
    pub report: ClinicalReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_round_trips_through_parser() {
        let sections = ReportSections {
            classification_result: "PD-like".into(),
            confidence: "0.91".into(),
            data_analysis: "short stride\nsecond line".into(),
            interpretation: "i".into(),
            recommendations: "r".into(),
        };
        let r = ClinicalReport {
            sections: sections.clone(),
            source: ReportSource::Llm,
            model_id: "m".into(),
            latency_ms: 1.0,
        };
        assert_eq!(parse_sections(&r.to_string()).unwrap(), sections);
    }
}
