//! Rule-based report used when no language model is configured or the
//! model's answer is unusable.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::head::{GaitClass, Prediction};

use super::metadata::{GaitMetadata, Symptom};
use super::prompt::{format_probs, summarize_embedding};
use super::{ClinicalReport, ReportSections, ReportSource};

pub const TEMPLATE_MODEL_ID: &str = "template";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceBand {
    Low,
    Moderate,
    High,
}

impl ConfidenceBand {
    pub const ALL: [ConfidenceBand; 3] = [ConfidenceBand::Low, ConfidenceBand::Moderate, ConfidenceBand::High];

    /// Low below 0.60, moderate below 0.85, high otherwise.
    pub fn of(confidence: f32) -> Self {
        if confidence < 0.60 {
            ConfidenceBand::Low
        } else if confidence < 0.85 {
            ConfidenceBand::Moderate
        } else {
            ConfidenceBand::High
        }
    }
}

impl fmt::Display for ConfidenceBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceBand::Low => "low",
            ConfidenceBand::Moderate => "moderate",
            ConfidenceBand::High => "high",
        })
    }
}

pub const ROUTINE_MONITORING: &str =
    "Routine monitoring. No gait-specific follow-up is indicated; repeat screening at the next scheduled visit.";

/// Fixed recommendation per (label, confidence band).
pub fn recommendation(label: GaitClass, band: ConfidenceBand) -> &'static str {
    use ConfidenceBand::*;
    use GaitClass::*;
    match (label, band) {
        (PdLike, High) => {
            "Refer for neurological assessment of parkinsonian gait. Consider a structured gait evaluation and physiotherapy review."
        }
        (PdLike, Moderate) => {
            "Schedule clinical gait review and repeat capture under controlled conditions to confirm the finding."
        }
        (PdLike, Low) => {
            "Finding is uncertain. Repeat capture with clear view of the subject before any clinical action."
        }
        (Normal, High) => ROUTINE_MONITORING,
        (Normal, Moderate) => "Routine monitoring with a repeat capture if symptoms are reported.",
        (Normal, Low) => "Classification is uncertain. Repeat capture and review reported symptoms with the subject.",
        (Background, High) => "No subject gait was detected. Recapture the sequence with the subject in frame.",
        (Background, Moderate) => "Subject visibility is doubtful. Check framing and recapture before interpretation.",
        (Background, Low) => "Frame content is ambiguous. Recapture the sequence before interpretation.",
    }
}

/// Clinical phrasing for a single symptom.
pub fn symptom_interpretation(s: Symptom) -> &'static str {
    match s {
        Symptom::ReducedArmSwing => "reduced arm swing is an early motor sign frequently seen in parkinsonian gait",
        Symptom::ShortStride => "short stride suggests hypokinetic stepping",
        Symptom::ForwardLean => "forward lean is consistent with flexed posture",
        Symptom::TurningHesitation => "turning hesitation points to impaired motor switching during turns",
        Symptom::Freezing => "freezing indicates episodic gait arrest and raises fall risk",
        Symptom::NoneReported => "no symptoms reported, so interpretation rests on the visual classification alone",
    }
}

fn label_interpretation(label: GaitClass) -> &'static str {
    match label {
        GaitClass::PdLike => "The fused RGB-D features match the PD-like gait pattern.",
        GaitClass::Normal => "The fused RGB-D features match a typical gait pattern.",
        GaitClass::Background => "The frame was classified as background, so no gait pattern is assessed.",
    }
}

pub fn render_template_report(pred: &Prediction, meta: &GaitMetadata) -> ClinicalReport {
    let band = ConfidenceBand::of(pred.confidence);
    let label = pred.class_label.display_name();
    let summary = summarize_embedding(&pred.embedding);

    let classification_result = format!("{label} (class probabilities: {}).", format_probs(pred));
    let confidence = format!("{:.2} ({band} confidence).", pred.confidence);
    let data_analysis = format!(
        "Subject {}, frame {}. Reported symptoms: {}. Capture conditions: {}. \
         Fused embedding of dimension {} with mean {:.4} and std {:.4}.",
        meta.subject_id,
        meta.frame_index,
        meta.symptom_phrases().join("; "),
        meta.capture,
        summary.dim,
        summary.mean,
        summary.std,
    );
    let notes: Vec<&str> = meta.symptoms.iter().map(|&s| symptom_interpretation(s)).collect();
    let interpretation = format!(
        "{} Observations: {}.",
        label_interpretation(pred.class_label),
        notes.join("; ")
    );

    ClinicalReport {
        sections: ReportSections {
            classification_result,
            confidence,
            data_analysis,
            interpretation,
            recommendations: recommendation(pred.class_label, band).to_string(),
        },
        source: ReportSource::Template,
        model_id: TEMPLATE_MODEL_ID.to_string(),
        latency_ms: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: GaitClass, confidence: f32) -> Prediction {
        let rest = (1.0 - confidence) / 2.0;
        let mut probs = [rest; 3];
        probs[label.index()] = confidence;
        Prediction {
            class_label: label,
            probs,
            confidence,
            embedding: vec![0.1, -0.2, 0.3],
        }
    }

    #[test]
    fn deterministic() {
        let m = GaitMetadata::new("S7", [Symptom::Freezing], 4).unwrap();
        let p = pred(GaitClass::PdLike, 0.7);
        let a = serde_json::to_vec(&render_template_report(&p, &m)).unwrap();
        let b = serde_json::to_vec(&render_template_report(&p, &m)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normal_high_is_routine_monitoring() {
        let m = GaitMetadata::new("S1", [Symptom::NoneReported], 0).unwrap();
        let r = render_template_report(&pred(GaitClass::Normal, 0.9), &m);
        assert_eq!(r.sections.recommendations, ROUTINE_MONITORING);
        assert_eq!(r.source, ReportSource::Template);
        assert_eq!(r.model_id, "template");
    }

    #[test]
    fn bands() {
        assert_eq!(ConfidenceBand::of(0.59), ConfidenceBand::Low);
        assert_eq!(ConfidenceBand::of(0.6), ConfidenceBand::Moderate);
        assert_eq!(ConfidenceBand::of(0.85), ConfidenceBand::High);
    }

    #[test]
    fn exhaustive_sweep_is_complete_and_faithful() {
        let symptoms = &Symptom::ALL[..5];
        let mut subsets: Vec<Vec<Symptom>> = vec![vec![Symptom::NoneReported]];
        for mask in 1u32..(1 << symptoms.len()) {
            subsets.push(
                (0..symptoms.len())
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| symptoms[i])
                    .collect(),
            );
        }
        for label in GaitClass::ALL {
            for conf in [0.4, 0.7, 0.95] {
                for set in &subsets {
                    let m = GaitMetadata::new("S", set.iter().copied(), 0).unwrap();
                    let r = render_template_report(&pred(label, conf), &m);
                    assert!(r.sections.is_complete());
                    for s in &m.symptoms {
                        assert!(r.sections.data_analysis.contains(s.phrase()));
                    }
                }
            }
        }
    }
}
