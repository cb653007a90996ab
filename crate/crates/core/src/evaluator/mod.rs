//! Ranked-prediction evaluation.
//!
//! The evaluated image set `T` is the set of predicted images; each needs a
//! ground-truth label. With `rank(t)` the 1-based position of the truth label
//! after tie-breaking (absent labels have infinite rank):
//!
//! * `Top-k = |{t : rank(t) <= k}| / |T|`
//! * `MRR@5 = (1/|T|) * sum over rank(t) <= 5 of 1/rank(t)`
//!
//! At a confidence threshold `tau`, an image is identified as species `s`
//! when its rank-1 label is `s` with score `>= tau`. Precision and recall are
//! computed per species and macro-averaged over species present in the truth;
//! species with no predicted positives are left out of the precision mean.
//!
//! All reductions run over images sorted by id, so parallel and sequential
//! evaluation give identical results.

mod compare;
mod genus;
mod prediction;

pub use compare::{compare_reports, DeltaRow, DeltaTable};
pub use genus::{genus_aggregate, genus_truth};
pub use prediction::{
    load_predictions, load_truth, parse_prediction_line, rank_of, rank_order, write_prediction_line,
    write_truth, GroundTruth, PredictionRecord, RecordError, DISTRIBUTION_TOLERANCE,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{ImageId, Source};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction line {line}: {error}")]
    InvalidRecord { line: usize, error: RecordError },
    #[error("truth line {line}: {message}")]
    MalformedTruth { line: u64, message: String },
    #[error("no truth label for image `{0}`")]
    MissingTruth(ImageId),
    #[error("no source for image `{0}`")]
    MissingSource(ImageId),
    #[error("image `{0}` is predicted more than once")]
    DuplicatePrediction(ImageId),
    #[error("no predictions to evaluate")]
    NoPredictions,
    #[error("unknown taxon `{0}`")]
    UnknownTaxon(String),
    #[error("reports cover different image sets")]
    MismatchedImageSets,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig<S> {
    /// Ranks beyond this limit count as absent.
    pub k_limit: usize,
    /// Strictly increasing confidence levels in [0, 1].
    pub threshold_grid: Vec<S>,
    /// Threshold at which the report's headline precision/recall is taken.
    pub reference_threshold: S,
}

impl<S: Scalar> Default for EvalConfig<S> {
    fn default() -> Self {
        EvalConfig {
            k_limit: 5,
            threshold_grid: (0..=100).map(|i| S::ratio(i, 100)).collect(),
            reference_threshold: S::ratio(1, 2),
        }
    }
}

impl<S: Scalar> EvalConfig<S> {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k_limit == 0 {
            return Err(EvalError::InvalidConfig("k_limit must be at least 1".into()));
        }
        let (zero, one) = (S::zero(), S::one());
        if self.threshold_grid.iter().any(|t| *t < zero || *t > one) {
            return Err(EvalError::InvalidConfig("threshold outside [0, 1]".into()));
        }
        if self.threshold_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig("threshold grid is not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-image facts every metric is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome<S> {
    pub image_id: ImageId,
    pub truth: String,
    pub rank: Option<usize>,
    pub top: Option<(String, S)>,
}

/// How per-image work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// Joins predictions with truth and computes per-image outcomes, sorted by
/// image id.
pub fn outcomes<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
    execution: Execution,
) -> Result<Vec<ImageOutcome<S>>, EvalError> {
    let mut order: Vec<&PredictionRecord<S>> = predictions.iter().collect();
    order.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = order.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(EvalError::DuplicatePrediction(w[0].image_id.clone()));
    }
    let one = |p: &PredictionRecord<S>| -> Result<ImageOutcome<S>, EvalError> {
        let label = truth
            .truth
            .get(&p.image_id)
            .ok_or_else(|| EvalError::MissingTruth(p.image_id.clone()))?;
        Ok(ImageOutcome {
            image_id: p.image_id.clone(),
            truth: label.clone(),
            rank: rank_of(p, label),
            top: p.top().cloned(),
        })
    };
    match execution {
        Execution::Sequential => order.into_iter().map(one).collect(),
        Execution::Parallel => order.into_par_iter().map(one).collect(),
    }
}

fn nonempty<S>(o: &[ImageOutcome<S>]) -> Result<u64, EvalError> {
    match o.len() {
        0 => Err(EvalError::NoPredictions),
        n => Ok(n as u64),
    }
}

fn top_k_of<S: Scalar>(o: &[ImageOutcome<S>], k: usize) -> Result<S, EvalError> {
    let n = nonempty(o)?;
    let hits = o.iter().filter(|x| matches!(x.rank, Some(r) if r <= k)).count();
    Ok(S::ratio(hits as u64, n))
}

fn mrr_of<S: Scalar>(o: &[ImageOutcome<S>], k: usize) -> Result<S, EvalError> {
    let n = nonempty(o)?;
    let total = S::sum(
        o.iter()
            .filter_map(|x| x.rank.filter(|&r| r <= k))
            .map(|r| S::ratio(1, r as u64)),
    );
    Ok(total / S::from_count(n))
}

/// Macro precision and recall at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint<S> {
    pub threshold: S,
    /// `None` when no species has a predicted positive.
    pub precision: Option<S>,
    pub recall: S,
    /// Species left out of the precision mean (no predicted positives).
    pub excluded_species: usize,
}

fn pr_of<S: Scalar>(o: &[ImageOutcome<S>], tau: &S) -> Result<PrPoint<S>, EvalError> {
    nonempty(o)?;
    // (tp, fp, fn) per truth species
    let mut counts: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    for x in o {
        counts.entry(x.truth.as_str()).or_default();
    }
    for x in o {
        let identified = x
            .top
            .as_ref()
            .filter(|(_, score)| score >= tau)
            .map(|(label, _)| label.as_str());
        match identified {
            Some(label) if label == x.truth => counts.get_mut(label).expect("truth species").0 += 1,
            Some(label) => {
                counts.get_mut(x.truth.as_str()).expect("truth species").2 += 1;
                if let Some(c) = counts.get_mut(label) {
                    c.1 += 1;
                }
            }
            None => counts.get_mut(x.truth.as_str()).expect("truth species").2 += 1,
        }
    }
    let species = counts.len() as u64;
    let recall = S::sum(counts.values().map(|&(tp, _, fneg)| S::ratio(tp, tp + fneg))) / S::from_count(species);
    let precisions: Vec<S> = counts
        .values()
        .filter(|&&(tp, fp, _)| tp + fp > 0)
        .map(|&(tp, fp, _)| S::ratio(tp, tp + fp))
        .collect();
    let defined = precisions.len() as u64;
    let precision = (defined > 0).then(|| S::sum(precisions) / S::from_count(defined));
    Ok(PrPoint {
        threshold: tau.clone(),
        precision,
        recall,
        excluded_species: (species - defined) as usize,
    })
}

fn clamp01<S: Scalar>(x: S) -> S {
    if x < S::zero() {
        S::zero()
    } else if x > S::one() {
        S::one()
    } else {
        x
    }
}

/// Trapezoidal area under precision(recall).
///
/// Points without a defined precision are skipped. The remaining points are
/// ordered by recall, ties by descending threshold (the sweep order), and the
/// lowest-recall point is extended horizontally to recall 0.
pub fn pr_auc<S: Scalar>(points: &[PrPoint<S>]) -> S {
    let mut curve: Vec<(S, S, &S)> = points
        .iter()
        .filter_map(|p| {
            p.precision
                .clone()
                .map(|prec| (clamp01(p.recall.clone()), clamp01(prec), &p.threshold))
        })
        .collect();
    if curve.is_empty() {
        return S::zero();
    }
    curve.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.2.partial_cmp(a.2).unwrap_or(std::cmp::Ordering::Equal))
    });
    let two = S::from_count(2);
    let mut area = curve[0].0.clone() * curve[0].1.clone();
    for w in curve.windows(2) {
        let width = w[1].0.clone() - w[0].0.clone();
        area = area + width * (w[0].1.clone() + w[1].1.clone()) / two.clone();
    }
    area
}

pub fn top_k<S: Scalar>(predictions: &[PredictionRecord<S>], truth: &GroundTruth, k: usize) -> Result<S, EvalError> {
    top_k_of(&outcomes(predictions, truth, Execution::Parallel)?, k)
}

pub fn mrr_at_5<S: Scalar>(predictions: &[PredictionRecord<S>], truth: &GroundTruth) -> Result<S, EvalError> {
    mrr_of(&outcomes(predictions, truth, Execution::Parallel)?, 5)
}

pub fn pr_at_threshold<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
    tau: &S,
) -> Result<PrPoint<S>, EvalError> {
    pr_of(&outcomes(predictions, truth, Execution::Parallel)?, tau)
}

pub fn pr_curve_and_auc<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
    config: &EvalConfig<S>,
) -> Result<(Vec<PrPoint<S>>, S), EvalError> {
    config.validate()?;
    let o = outcomes(predictions, truth, Execution::Parallel)?;
    let points = config
        .threshold_grid
        .iter()
        .map(|t| pr_of(&o, t))
        .collect::<Result<Vec<_>, _>>()?;
    let auc = pr_auc(&points);
    Ok((points, auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics<S> {
    pub n_images: usize,
    pub top1: S,
    pub top5: S,
    pub mrr: S,
}

fn rank_metrics<S: Scalar>(o: &[ImageOutcome<S>], k_limit: usize) -> Result<RankMetrics<S>, EvalError> {
    let limit = |k: usize| k.min(k_limit);
    Ok(RankMetrics {
        n_images: o.len(),
        top1: top_k_of(o, limit(1))?,
        top5: top_k_of(o, limit(5))?,
        mrr: mrr_of(o, limit(5))?,
    })
}

fn per_source_of<S: Scalar>(
    o: &[ImageOutcome<S>],
    truth: &GroundTruth,
    k_limit: usize,
) -> Result<BTreeMap<Source, RankMetrics<S>>, EvalError> {
    let mut groups: BTreeMap<Source, Vec<ImageOutcome<S>>> = BTreeMap::new();
    for x in o {
        let source = truth
            .source_of
            .get(&x.image_id)
            .ok_or_else(|| EvalError::MissingSource(x.image_id.clone()))?;
        groups.entry(*source).or_default().push(x.clone());
    }
    groups
        .into_iter()
        .map(|(s, g)| Ok((s, rank_metrics(&g, k_limit)?)))
        .collect()
}

pub fn per_source_report<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
) -> Result<BTreeMap<Source, RankMetrics<S>>, EvalError> {
    per_source_of(&outcomes(predictions, truth, Execution::Parallel)?, truth, usize::MAX)
}

/// SHA-256 over the sorted image ids, one per line.
pub fn image_set_digest<'a, I: IntoIterator<Item = &'a ImageId>>(ids: I) -> String {
    let sorted: BTreeSet<&ImageId> = ids.into_iter().collect();
    let mut hasher = Sha256::new();
    for id in sorted {
        hasher.update(id.as_str().as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Full evaluation of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<S> {
    pub providers: Vec<String>,
    pub n_images: usize,
    pub n_species: usize,
    pub image_set_digest: String,
    pub k_limit: usize,
    pub top1: S,
    pub top5: S,
    pub mrr: S,
    pub reference: PrPoint<S>,
    pub auc: S,
    pub pr_points: Vec<PrPoint<S>>,
    pub per_source: BTreeMap<Source, RankMetrics<S>>,
}

impl<S: Scalar> PrPoint<S> {
    pub fn to_f64(&self) -> PrPoint<f64> {
        PrPoint {
            threshold: self.threshold.to_f64(),
            precision: self.precision.as_ref().map(Scalar::to_f64),
            recall: self.recall.to_f64(),
            excluded_species: self.excluded_species,
        }
    }
}

impl<S: Scalar> RankMetrics<S> {
    pub fn to_f64(&self) -> RankMetrics<f64> {
        RankMetrics {
            n_images: self.n_images,
            top1: self.top1.to_f64(),
            top5: self.top5.to_f64(),
            mrr: self.mrr.to_f64(),
        }
    }
}

impl<S: Scalar> EvalReport<S> {
    /// Rounds every value to the nearest `f64`.
    pub fn to_f64(&self) -> EvalReport<f64> {
        EvalReport {
            providers: self.providers.clone(),
            n_images: self.n_images,
            n_species: self.n_species,
            image_set_digest: self.image_set_digest.clone(),
            k_limit: self.k_limit,
            top1: self.top1.to_f64(),
            top5: self.top5.to_f64(),
            mrr: self.mrr.to_f64(),
            reference: self.reference.to_f64(),
            auc: self.auc.to_f64(),
            pr_points: self.pr_points.iter().map(PrPoint::to_f64).collect(),
            per_source: self.per_source.iter().map(|(s, m)| (*s, m.to_f64())).collect(),
        }
    }
}

pub fn evaluate<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
    config: &EvalConfig<S>,
) -> Result<EvalReport<S>, EvalError> {
    evaluate_with(predictions, truth, config, Execution::Parallel)
}

pub fn evaluate_with<S: Scalar>(
    predictions: &[PredictionRecord<S>],
    truth: &GroundTruth,
    config: &EvalConfig<S>,
    execution: Execution,
) -> Result<EvalReport<S>, EvalError> {
    config.validate()?;
    let o = outcomes(predictions, truth, execution)?;
    let overall = rank_metrics(&o, config.k_limit)?;
    let pr_points = config
        .threshold_grid
        .iter()
        .map(|t| pr_of(&o, t))
        .collect::<Result<Vec<_>, _>>()?;
    let auc = pr_auc(&pr_points);
    let providers: BTreeSet<&str> = predictions.iter().map(|p| p.provider_id.as_str()).collect();
    let species: HashSet<&str> = o.iter().map(|x| x.truth.as_str()).collect();
    Ok(EvalReport {
        providers: providers.into_iter().map(str::to_string).collect(),
        n_images: o.len(),
        n_species: species.len(),
        image_set_digest: image_set_digest(o.iter().map(|x| &x.image_id)),
        k_limit: config.k_limit,
        top1: overall.top1,
        top5: overall.top5,
        mrr: overall.mrr,
        reference: pr_of(&o, &config.reference_threshold)?,
        auc,
        pr_points,
        per_source: per_source_of(&o, truth, config.k_limit)?,
    })
}

/// `threshold,precision,recall` rows for charting; undefined precision is
/// written as an empty field.
pub fn pr_points_csv<S: Scalar>(points: &[PrPoint<S>]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        let precision = p.precision.as_ref().map(|v| v.to_f64().to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.threshold.to_f64(), precision, p.recall.to_f64()));
    }
    out
}
