use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ImageId, Source};
use crate::scalar::Scalar;

use super::EvalError;

/// Tolerance on the total mass of a full output distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-3;

/// One classifier output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord<S> {
    pub image_id: ImageId,
    pub provider_id: String,
    /// `(label, score)` pairs in nonincreasing score order.
    pub ranked: Vec<(String, S)>,
    /// Whether `ranked` is the complete output vector (so its mass is 1).
    #[serde(rename = "full")]
    pub is_full_distribution: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("score {score} for `{label}` is outside [0, 1]")]
    ScoreOutOfRange { label: String, score: f64 },
    #[error("full distribution sums to {0}")]
    DistributionNotNormalized(f64),
}

/// Orders by descending score, breaking ties by ascending label.
pub fn rank_order<S: PartialOrd>(a: &(String, S), b: &(String, S)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

impl<S: Scalar> PredictionRecord<S> {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.image_id.as_str().is_empty() {
            return Err(RecordError::MalformedRecord("empty image_id".into()));
        }
        let zero = S::zero();
        let one = S::one();
        let mut seen = std::collections::HashSet::with_capacity(self.ranked.len());
        for (i, (label, score)) in self.ranked.iter().enumerate() {
            if !score.is_finite() || *score < zero || *score > one {
                return Err(RecordError::ScoreOutOfRange {
                    label: label.clone(),
                    score: score.to_f64(),
                });
            }
            if !seen.insert(label.as_str()) {
                return Err(RecordError::MalformedRecord(format!("label `{label}` listed twice")));
            }
            if i > 0 && self.ranked[i - 1].1 < *score {
                return Err(RecordError::MalformedRecord(format!(
                    "scores are not in descending order at `{label}`"
                )));
            }
        }
        if self.is_full_distribution {
            let total = S::sum(self.ranked.iter().map(|(_, s)| s.clone())).to_f64();
            if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                return Err(RecordError::DistributionNotNormalized(total));
            }
        }
        Ok(())
    }

    /// Labels in rank order (ties broken by ascending label).
    pub fn ordered(&self) -> Vec<&(String, S)> {
        let mut v: Vec<&(String, S)> = self.ranked.iter().collect();
        v.sort_by(|a, b| rank_order(a, b));
        v
    }

    pub fn top(&self) -> Option<&(String, S)> {
        self.ranked.iter().min_by(|a, b| rank_order(a, b))
    }

    /// Converts the score type. Fails only for non-finite scores.
    pub fn convert<T: Scalar>(&self) -> Option<PredictionRecord<T>> {
        let ranked = self
            .ranked
            .iter()
            .map(|(l, s)| T::from_f64(s.to_f64()).map(|t| (l.clone(), t)))
            .collect::<Option<Vec<_>>>()?;
        Some(PredictionRecord {
            image_id: self.image_id.clone(),
            provider_id: self.provider_id.clone(),
            ranked,
            is_full_distribution: self.is_full_distribution,
        })
    }
}

/// 1-based position of `truth_label` after tie-breaking, `None` if not listed.
pub fn rank_of<S: Scalar>(prediction: &PredictionRecord<S>, truth_label: &str) -> Option<usize> {
    let (_, truth_score) = prediction.ranked.iter().find(|(l, _)| l == truth_label)?;
    let ahead = prediction
        .ranked
        .iter()
        .filter(|(l, s)| s > truth_score || (s == truth_score && l.as_str() < truth_label))
        .count();
    Some(ahead + 1)
}

/// Reads line-delimited JSON prediction records, validating each. Blank
/// lines are skipped; errors carry the 1-based line number.
pub fn load_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord<f64>>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_prediction_line(&line).map_err(|error| EvalError::InvalidRecord {
            line: i + 1,
            error,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_prediction_line(line: &str) -> Result<PredictionRecord<f64>, RecordError> {
    #[derive(Deserialize)]
    struct Wire {
        image_id: String,
        #[serde(default)]
        provider_id: String,
        #[serde(default)]
        full: bool,
        ranked: Vec<(String, serde_json::Value)>,
    }
    let wire: Wire =
        serde_json::from_str(line).map_err(|e| RecordError::MalformedRecord(e.to_string()))?;
    let ranked = wire
        .ranked
        .into_iter()
        .map(|(label, v)| match v.as_f64() {
            Some(score) => Ok((label, score)),
            None => Err(RecordError::MalformedRecord(format!("score for `{label}` is not a number"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let record = PredictionRecord {
        image_id: ImageId(wire.image_id),
        provider_id: wire.provider_id,
        ranked,
        is_full_distribution: wire.full,
    };
    record.validate()?;
    Ok(record)
}

pub fn write_prediction_line(record: &PredictionRecord<f64>) -> String {
    serde_json::to_string(record).expect("prediction records serialize")
}

/// Ground-truth label and source per image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub truth: BTreeMap<ImageId, String>,
    pub source_of: BTreeMap<ImageId, Source>,
}

impl GroundTruth {
    pub fn insert(&mut self, image: ImageId, label: impl Into<String>, source: Source) {
        self.source_of.insert(image.clone(), source);
        self.truth.insert(image, label.into());
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Reads `image_id,label_id[,source]`. A missing source column means
/// [`Source::Other`] for every image.
pub fn load_truth<R: Read>(reader: R) -> Result<GroundTruth, EvalError> {
    let mut csv = csv::Reader::from_reader(reader);
    let bad = |line: u64, message: String| EvalError::MalformedTruth { line, message };
    let headers = csv.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_c = col("image_id").ok_or_else(|| bad(1, "missing column image_id".into()))?;
    let label_c = col("label_id").ok_or_else(|| bad(1, "missing column label_id".into()))?;
    let source_c = col("source");
    let mut truth = GroundTruth::default();
    for record in csv.records() {
        let record = record.map_err(|e| bad(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = ImageId::from(record.get(id_c).unwrap_or("").trim());
        let label = record.get(label_c).unwrap_or("").trim();
        if id.as_str().is_empty() || label.is_empty() {
            return Err(bad(line, "empty image_id or label_id".into()));
        }
        let source = match source_c.and_then(|c| record.get(c)).map(str::trim) {
            Some(s) if !s.is_empty() => s.parse().map_err(|e: crate::ingest::UnknownSource| bad(line, e.to_string()))?,
            _ => Source::Other,
        };
        if truth.truth.contains_key(&id) {
            return Err(bad(line, format!("image `{id}` has more than one truth label")));
        }
        truth.insert(id, label, source);
    }
    Ok(truth)
}

pub fn write_truth<W: std::io::Write>(mut writer: W, truth: &GroundTruth) -> std::io::Result<()> {
    writer.write_all(b"image_id,label_id,source\n")?;
    for (id, label) in &truth.truth {
        let source = truth.source_of.get(id).copied().unwrap_or(Source::Other);
        writeln!(writer, "{id},{label},{source}")?;
    }
    writer.flush()
}
