//! Metric-wise differences between two reports over the same images.

use serde::{Deserialize, Serialize};

use crate::scalar::{round_half_even, Scalar};

use super::{EvalError, EvalReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow<S> {
    /// `overall` or a source name.
    pub scope: String,
    pub metric: String,
    pub a: S,
    pub b: S,
    /// `b - a`, unrounded.
    pub delta: S,
    /// `delta` rounded half-to-even to two decimals, with sign.
    pub delta_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable<S> {
    pub provider_a: Vec<String>,
    pub provider_b: Vec<String>,
    pub rows: Vec<DeltaRow<S>>,
}

impl<S: Scalar> DeltaTable<S> {
    pub fn get(&self, scope: &str, metric: &str) -> Option<&DeltaRow<S>> {
        self.rows.iter().find(|r| r.scope == scope && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,metric,a,b,delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scope,
                r.metric,
                r.a.to_f64(),
                r.b.to_f64(),
                r.delta_display
            ));
        }
        out
    }
}

pub fn format_delta(delta: f64) -> String {
    let rounded = round_half_even(delta, 2);
    if rounded == 0.0 {
        "0.00".to_string()
    } else {
        format!("{rounded:+.2}")
    }
}

pub fn compare_reports<S: Scalar>(a: &EvalReport<S>, b: &EvalReport<S>) -> Result<DeltaTable<S>, EvalError> {
    if a.n_images != b.n_images || a.image_set_digest != b.image_set_digest {
        return Err(EvalError::MismatchedImageSets);
    }
    let mut rows = Vec::new();
    let mut push = |scope: &str, metric: &str, x: &S, y: &S| {
        let delta = y.clone() - x.clone();
        rows.push(DeltaRow {
            scope: scope.to_string(),
            metric: metric.to_string(),
            a: x.clone(),
            b: y.clone(),
            delta_display: format_delta(delta.to_f64()),
            delta,
        });
    };
    push("overall", "top1", &a.top1, &b.top1);
    push("overall", "top5", &a.top5, &b.top5);
    push("overall", "mrr", &a.mrr, &b.mrr);
    if let (Some(pa), Some(pb)) = (&a.reference.precision, &b.reference.precision) {
        push("overall", "precision", pa, pb);
    }
    push("overall", "recall", &a.reference.recall, &b.reference.recall);
    push("overall", "auc", &a.auc, &b.auc);
    for (source, ma) in &a.per_source {
        if let Some(mb) = b.per_source.get(source) {
            let scope = source.as_str();
            push(scope, "top1", &ma.top1, &mb.top1);
            push(scope, "top5", &ma.top5, &mb.top5);
            push(scope, "mrr", &ma.mrr, &mb.mrr);
        }
    }
    Ok(DeltaTable {
        provider_a: a.providers.clone(),
        provider_b: b.providers.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{evaluate, EvalConfig, GroundTruth, PredictionRecord};
    use crate::ingest::{ImageId, Source};

    fn report(correct: &[bool]) -> EvalReport<f64> {
        let mut truth = GroundTruth::default();
        let preds: Vec<PredictionRecord<f64>> = correct
            .iter()
            .enumerate()
            .map(|(i, ok)| {
                let id = ImageId(format!("img{i}"));
                truth.insert(id.clone(), "a", Source::FloraOn);
                let label = if *ok { "a" } else { "b" };
                PredictionRecord {
                    image_id: id,
                    provider_id: "m".into(),
                    ranked: vec![(label.to_string(), 0.9)],
                    is_full_distribution: false,
                }
            })
            .collect();
        evaluate(&preds, &truth, &EvalConfig::default()).unwrap()
    }

    #[test]
    fn display_rounding() {
        assert_eq!(format_delta(0.80 - 0.75), "+0.05");
        assert_eq!(format_delta(-0.125), "-0.12");
        assert_eq!(format_delta(0.0), "0.00");
        assert_eq!(format_delta(-0.001), "0.00");
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = report(&[true, false, true]);
        let table = compare_reports(&r, &r).unwrap();
        assert!(table.rows.iter().all(|row| row.delta == 0.0 && row.delta_display == "0.00"));
        assert!(table.get("FloraOn", "mrr").is_some());
    }

    #[test]
    fn signed_difference() {
        let a = report(&[true, false, false, false]);
        let b = report(&[true, true, false, false]);
        let table = compare_reports(&a, &b).unwrap();
        let top1 = table.get("overall", "top1").unwrap();
        assert_eq!((top1.delta, top1.delta_display.as_str()), (0.25, "+0.25"));
    }

    #[test]
    fn mismatched_sets() {
        let a = report(&[true, false]);
        let b = report(&[true, false, true]);
        assert_eq!(compare_reports(&a, &b).unwrap_err(), EvalError::MismatchedImageSets);
    }
}
