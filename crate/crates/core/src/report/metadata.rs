//! Per-sequence gait metadata (`meta.json`).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symptom {
    ReducedArmSwing,
    ShortStride,
    ForwardLean,
    TurningHesitation,
    Freezing,
    NoneReported,
}

impl Symptom {
    pub const ALL: [Symptom; 6] = [
        Symptom::ReducedArmSwing,
        Symptom::ShortStride,
        Symptom::ForwardLean,
        Symptom::TurningHesitation,
        Symptom::Freezing,
        Symptom::NoneReported,
    ];

    /// Canonical wording used in prompts and reports.
    pub fn phrase(self) -> &'static str {
        match self {
            Symptom::ReducedArmSwing => "reduced arm swing",
            Symptom::ShortStride => "short stride",
            Symptom::ForwardLean => "forward lean",
            Symptom::TurningHesitation => "turning hesitation",
            Symptom::Freezing => "freezing",
            Symptom::NoneReported => "no symptoms reported",
        }
    }
}

impl fmt::Display for Symptom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Normal,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    None,
    Clothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureConditions {
    pub lighting: Lighting,
    pub occlusion: Occlusion,
}

impl Default for CaptureConditions {
    fn default() -> Self {
        CaptureConditions {
            lighting: Lighting::Normal,
            occlusion: Occlusion::None,
        }
    }
}

impl fmt::Display for CaptureConditions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lighting = match self.lighting {
            Lighting::Normal => "normal",
            Lighting::Low => "low",
        };
        let occlusion = match self.occlusion {
            Occlusion::None => "none",
            Occlusion::Clothing => "clothing",
        };
        write!(f, "lighting {lighting}, occlusion {occlusion}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitMetadata {
    pub subject_id: String,
    pub symptoms: BTreeSet<Symptom>,
    pub capture: CaptureConditions,
    pub frame_index: u64,
}

impl GaitMetadata {
    pub fn new(
        subject_id: impl Into<String>,
        symptoms: impl IntoIterator<Item = Symptom>,
        frame_index: u64,
    ) -> Result<Self> {
        let m = GaitMetadata {
            subject_id: subject_id.into(),
            symptoms: symptoms.into_iter().collect(),
            capture: CaptureConditions::default(),
            frame_index,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.symptoms.is_empty() {
            return Err(Error::Metadata("symptoms must not be empty; use none_reported".into()));
        }
        if self.symptoms.contains(&Symptom::NoneReported) && self.symptoms.len() > 1 {
            return Err(Error::Metadata(
                "none_reported cannot be combined with other symptoms".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: GaitMetadata = serde_json::from_str(text).map_err(|e| Error::Metadata(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn symptom_phrases(&self) -> Vec<&'static str> {
        self.symptoms.iter().map(|s| s.phrase()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_snake_case() {
        let m = GaitMetadata::new("S01", [Symptom::ShortStride, Symptom::ReducedArmSwing], 3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(
            text,
            r#"{"subject_id":"S01","symptoms":["reduced_arm_swing","short_stride"],"capture":{"lighting":"normal","occlusion":"none"},"frame_index":3}"#
        );
        assert_eq!(GaitMetadata::from_json(&text).unwrap(), m);
    }

    #[test]
    fn symptom_rules() {
        assert!(GaitMetadata::new("a", [], 0).is_err());
        assert!(GaitMetadata::new("a", [Symptom::NoneReported, Symptom::Freezing], 0).is_err());
        assert!(GaitMetadata::new("a", [Symptom::NoneReported], 0).is_ok());
    }

    #[test]
    fn unknown_fields_and_tags_rejected() {
        let bad_tag = r#"{"subject_id":"a","symptoms":["limping"],"capture":{"lighting":"low","occlusion":"none"},"frame_index":0}"#;
        assert!(GaitMetadata::from_json(bad_tag).is_err());
        let extra = r#"{"subject_id":"a","symptoms":["freezing"],"capture":{"lighting":"low","occlusion":"none"},"frame_index":0,"x":1}"#;
        assert!(GaitMetadata::from_json(extra).is_err());
    }
}
