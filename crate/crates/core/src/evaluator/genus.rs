//! Species-to-genus score aggregation.

use std::collections::BTreeMap;

use crate::catalog::SpeciesCatalog;
use crate::scalar::Scalar;

use super::{rank_order, EvalError, GroundTruth, PredictionRecord};

fn genus_label<'c>(catalog: &'c SpeciesCatalog, label: &str) -> Result<&'c str, EvalError> {
    let id = catalog
        .resolve_label(label)
        .ok_or_else(|| EvalError::UnknownTaxon(label.to_string()))?;
    catalog
        .genus_of(&id)
        .map_err(|_| EvalError::UnknownTaxon(label.to_string()))
}

/// Sums species scores per genus and re-ranks by the usual tie rule.
pub fn genus_aggregate<S: Scalar>(
    prediction: &PredictionRecord<S>,
    catalog: &SpeciesCatalog,
) -> Result<PredictionRecord<S>, EvalError> {
    let mut by_genus: BTreeMap<&str, Vec<S>> = BTreeMap::new();
    for (label, score) in &prediction.ranked {
        by_genus
            .entry(genus_label(catalog, label)?)
            .or_default()
            .push(score.clone());
    }
    let mut ranked: Vec<(String, S)> = by_genus
        .into_iter()
        .map(|(g, scores)| (g.to_string(), S::sum(scores)))
        .collect();
    ranked.sort_by(rank_order);
    Ok(PredictionRecord {
        image_id: prediction.image_id.clone(),
        provider_id: prediction.provider_id.clone(),
        ranked,
        is_full_distribution: prediction.is_full_distribution,
    })
}

/// Replaces each truth label by its genus.
pub fn genus_truth(truth: &GroundTruth, catalog: &SpeciesCatalog) -> Result<GroundTruth, EvalError> {
    let mut out = GroundTruth {
        truth: BTreeMap::new(),
        source_of: truth.source_of.clone(),
    };
    for (id, label) in &truth.truth {
        out.truth.insert(id.clone(), genus_label(catalog, label)?.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TaxonRow;
    use crate::ingest::{ImageId, Source};

    fn catalog(names: &[&str]) -> SpeciesCatalog {
        SpeciesCatalog::from_rows(names.iter().map(|n| TaxonRow::new(n, &[]))).unwrap()
    }

    fn pred(scores: &[(&str, f64)]) -> PredictionRecord<f64> {
        PredictionRecord {
            image_id: ImageId::from("i"),
            provider_id: "m".into(),
            ranked: scores.iter().map(|(l, s)| (l.to_string(), *s)).collect(),
            is_full_distribution: true,
        }
    }

    #[test]
    fn sums_per_genus() {
        let cat = catalog(&["Acer campestre", "Acer pseudoplatanus", "Betula pendula"]);
        let p = pred(&[("Betula pendula", 0.4), ("Acer campestre", 0.3), ("Acer pseudoplatanus", 0.3)]);
        let g = genus_aggregate(&p, &cat).unwrap();
        assert_eq!(g.ranked, vec![("Acer".to_string(), 0.6), ("Betula".to_string(), 0.4)]);
        assert!(g.is_full_distribution);
    }

    #[test]
    fn unknown_label() {
        let cat = catalog(&["Acer campestre"]);
        let err = genus_aggregate(&pred(&[("Nope nope", 1.0)]), &cat).unwrap_err();
        assert_eq!(err, EvalError::UnknownTaxon("Nope nope".into()));
    }

    #[test]
    fn truth_mapping() {
        let cat = catalog(&["Acer campestre"]);
        let mut t = GroundTruth::default();
        t.insert(ImageId::from("i"), "acer  campestre", Source::FloraOn);
        let g = genus_truth(&t, &cat).unwrap();
        assert_eq!(g.truth[&ImageId::from("i")], "Acer");
        assert_eq!(g.source_of, t.source_of);
    }
}
