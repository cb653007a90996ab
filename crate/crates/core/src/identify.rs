//! Suggestion policy for identification responses.
//!
//! Labels are kept in ranked order while their score reaches the suggestion
//! floor, up to a fixed count, and each is tagged with a confidence band:
//! HIGH strictly above `high_above`, MEDIUM from `medium_at_or_above` up to and
//! including `high_above`, LOW below.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SpeciesCatalog;
use crate::evaluator::PredictionRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentifyError {
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("unknown taxon `{0}`")]
    UnknownTaxon(String),
    #[error("invalid confidence policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidencePolicy<S> {
    pub high_above: S,
    pub medium_at_or_above: S,
    pub suggestion_floor: S,
    pub max_suggestions: usize,
}

impl<S: Scalar> Default for ConfidencePolicy<S> {
    fn default() -> Self {
        ConfidencePolicy {
            high_above: S::ratio(70, 100),
            medium_at_or_above: S::ratio(40, 100),
            suggestion_floor: S::ratio(15, 100),
            max_suggestions: 5,
        }
    }
}

impl<S: Scalar> ConfidencePolicy<S> {
    pub fn validate(&self) -> Result<(), IdentifyError> {
        let ordered = S::zero() <= self.suggestion_floor
            && self.suggestion_floor <= self.medium_at_or_above
            && self.medium_at_or_above <= self.high_above
            && self.high_above <= S::one();
        if !ordered {
            return Err(IdentifyError::InvalidPolicy(
                "need 0 <= suggestion_floor <= medium_at_or_above <= high_above <= 1".into(),
            ));
        }
        if self.max_suggestions == 0 {
            return Err(IdentifyError::InvalidPolicy("max_suggestions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "HIGH",
            Confidence::Medium => "MEDIUM",
            Confidence::Low => "LOW",
        }
    }
}

impl std::fmt::Display for Confidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn label_confidence<S: Scalar>(score: &S, policy: &ConfidencePolicy<S>) -> Result<Confidence, IdentifyError> {
    if !score.is_finite() || *score < S::zero() || *score > S::one() {
        return Err(IdentifyError::ScoreOutOfRange(score.to_f64()));
    }
    Ok(if *score > policy.high_above {
        Confidence::High
    } else if *score >= policy.medium_at_or_above {
        Confidence::Medium
    } else {
        Confidence::Low
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion<S> {
    pub canonical_name: String,
    pub score: S,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResponse<S> {
    pub suggestions: Vec<Suggestion<S>>,
    pub provider_id: String,
    pub elapsed_ms: u64,
}

/// Builds the suggestion list from a prediction's ranked labels, keeping
/// their order. `elapsed_ms` is left at zero for the caller to fill in.
pub fn make_suggestions<S: Scalar>(
    prediction: &PredictionRecord<S>,
    catalog: &SpeciesCatalog,
    policy: &ConfidencePolicy<S>,
) -> Result<IdentificationResponse<S>, IdentifyError> {
    let mut suggestions = Vec::new();
    for (label, score) in &prediction.ranked {
        let confidence = label_confidence(score, policy)?;
        let id = catalog
            .resolve_label(label)
            .ok_or_else(|| IdentifyError::UnknownTaxon(label.clone()))?;
        if *score < policy.suggestion_floor || suggestions.len() == policy.max_suggestions {
            continue;
        }
        let name = catalog.get(&id).map(|t| t.canonical_name.clone()).unwrap_or_default();
        suggestions.push(Suggestion {
            canonical_name: name,
            score: score.clone(),
            confidence,
        });
    }
    Ok(IdentificationResponse {
        suggestions,
        provider_id: prediction.provider_id.clone(),
        elapsed_ms: 0,
    })
}
