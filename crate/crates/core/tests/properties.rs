use std::collections::BTreeMap;

use phytoset::catalog::{SpeciesCatalog, TaxonId, TaxonRow};
use phytoset::evaluator::{
    evaluate_with, genus_aggregate, mrr_at_5, pr_at_threshold, rank_order, top_k, EvalConfig, Execution,
    GroundTruth, PredictionRecord,
};
use phytoset::identify::{label_confidence, make_suggestions, Confidence, ConfidencePolicy};
use phytoset::ingest::{read_entries, write_entries, ImageEntry, ImageId, Source};
use phytoset::sampler::{sample_dataset, write_manifest, SamplingPolicy};
use phytoset::splitter::{assign_splits, export_training_csv, parse_training_csv, Split, SplitPolicy};
use phytoset::{Exact, Scalar};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOURCES: [Source; 5] = [Source::FloraOn, Source::PlantNet, Source::ObservationOrg, Source::INaturalist, Source::Other];

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("Genus{} species{i}", i % 4)).collect()
}

/// Random predictions with coarse scores so ties are common.
fn instance(seed: u64, max_images: usize, max_labels: usize) -> (Vec<PredictionRecord<f64>>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = labels(rng.random_range(1..=max_labels));
    let n = rng.random_range(1..=max_images);
    let mut truth = GroundTruth::default();
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let id = ImageId(format!("img{i:04}"));
        truth.insert(id.clone(), names[rng.random_range(0..names.len())].clone(), SOURCES[rng.random_range(0..5)]);
        let mut listed = names.clone();
        listed.shuffle(&mut rng);
        listed.truncate(rng.random_range(0..=names.len()));
        let mut ranked: Vec<(String, f64)> = listed
            .into_iter()
            .map(|l| (l, rng.random_range(0..=20) as f64 / 20.0))
            .collect();
        ranked.sort_by(rank_order);
        preds.push(PredictionRecord { image_id: id, provider_id: "m".into(), ranked, is_full_distribution: false });
    }
    (preds, truth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_metric_ordering(seed in any::<u64>()) {
        let (p, t) = instance(seed, 80, 12);
        let mut last = 0.0;
        for k in 1..=12 {
            let v = top_k(&p, &t, k).unwrap();
            prop_assert!(v >= last);
            last = v;
        }
        let mrr = mrr_at_5(&p, &t).unwrap();
        prop_assert!(top_k(&p, &t, 1).unwrap() <= mrr + 1e-15);
        prop_assert!(mrr <= top_k(&p, &t, 5).unwrap() + 1e-15);
    }

    #[test]
    fn recall_nonincreasing_in_threshold(seed in any::<u64>()) {
        let (p, t) = instance(seed, 80, 12);
        let mut last = f64::INFINITY;
        for i in 0..=100u64 {
            let r = pr_at_threshold(&p, &t, &(i as f64 / 100.0)).unwrap().recall;
            prop_assert!(r <= last + 1e-15);
            last = r;
        }
    }

    #[test]
    fn parallel_equals_sequential(seed in any::<u64>()) {
        let (p, t) = instance(seed, 120, 15);
        let config = EvalConfig::default();
        let a = evaluate_with(&p, &t, &config, Execution::Parallel).unwrap();
        let b = evaluate_with(&p, &t, &config, Execution::Sequential).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_and_float_agree(seed in any::<u64>()) {
        let (p, t) = instance(seed, 60, 10);
        let exact: Vec<PredictionRecord<Exact>> = p.iter().map(|r| r.convert().unwrap()).collect();
        let config = EvalConfig::<Exact>::default();
        let e = evaluate_with(&exact, &t, &config, Execution::Parallel).unwrap();
        let f = evaluate_with(&p, &t, &EvalConfig::default(), Execution::Parallel).unwrap();
        prop_assert!((e.mrr.to_f64() - f.mrr).abs() < 1e-12);
        prop_assert!((e.auc.to_f64() - f.auc).abs() < 1e-9);
    }

    #[test]
    fn genus_mass_and_dominance(seed in any::<u64>()) {
        let (p, t) = instance(seed, 40, 16);
        let names = labels(16);
        let catalog = SpeciesCatalog::from_rows(names.iter().map(|n| TaxonRow::new(n, &[]))).unwrap();
        for pred in &p {
            let g = genus_aggregate(pred, &catalog).unwrap();
            let species_mass: f64 = Scalar::sum(pred.ranked.iter().map(|(_, s)| *s));
            let genus_mass: f64 = Scalar::sum(g.ranked.iter().map(|(_, s)| *s));
            prop_assert!((species_mass - genus_mass).abs() <= 1e-12);
            let truth = &t.truth[&pred.image_id];
            let genus = truth.split(' ').next().unwrap();
            let species_score = pred.ranked.iter().find(|(l, _)| l == truth).map_or(0.0, |(_, s)| *s);
            let genus_score = g.ranked.iter().find(|(l, _)| l == genus).map_or(0.0, |(_, s)| *s);
            prop_assert!(genus_score >= species_score);
            prop_assert!(g.validate().is_ok() || species_mass > 1.0);
        }
    }

    #[test]
    fn confidence_bands_partition(score in 0.0f64..=1.0, other in 0.0f64..=1.0) {
        let policy = ConfidencePolicy::default();
        let band = label_confidence(&score, &policy).unwrap();
        let expected = if score > 0.7 { Confidence::High } else if score >= 0.4 { Confidence::Medium } else { Confidence::Low };
        prop_assert_eq!(band, expected);
        let (lo, hi) = if score <= other { (score, other) } else { (other, score) };
        prop_assert!(label_confidence(&lo, &policy).unwrap() <= label_confidence(&hi, &policy).unwrap());
    }

    #[test]
    fn suggestions_preserve_order(seed in any::<u64>()) {
        let (p, _) = instance(seed, 10, 12);
        let catalog = SpeciesCatalog::from_rows(labels(12).iter().map(|n| TaxonRow::new(n, &[]))).unwrap();
        let policy = ConfidencePolicy::default();
        for pred in &p {
            let r = make_suggestions(pred, &catalog, &policy).unwrap();
            let expected: Vec<(&str, f64)> = pred
                .ranked
                .iter()
                .filter(|(_, s)| *s >= 0.15)
                .take(5)
                .map(|(l, s)| (l.as_str(), *s))
                .collect();
            let got: Vec<(&str, f64)> = r.suggestions.iter().map(|s| (s.canonical_name.as_str(), s.score)).collect();
            prop_assert_eq!(got, expected);
        }
    }
}

fn inventory(seed: u64) -> Vec<ImageEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for s in 0..rng.random_range(1..6) {
        let taxon = TaxonId(format!("Taxon t{s}"));
        for source in SOURCES {
            for i in 0..rng.random_range(0..90) {
                entries.push(ImageEntry::new(&format!("https://img/{s}/{source}/{i}.jpg"), taxon.clone(), source));
            }
        }
    }
    entries
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampler_bounds_and_priority(seed in any::<u64>(), sample_seed in any::<u64>()) {
        let entries = inventory(seed);
        let policy = SamplingPolicy { seed: sample_seed, ..SamplingPolicy::default() };
        let Ok(manifest) = sample_dataset(&entries, &policy) else { return Ok(()); };
        let mut available: BTreeMap<(&TaxonId, Source), usize> = BTreeMap::new();
        for e in &entries {
            *available.entry((&e.taxon_id, e.source)).or_default() += 1;
        }
        let mut taken: BTreeMap<(&TaxonId, Source), usize> = BTreeMap::new();
        for e in &manifest.entries {
            prop_assert!(e.source != Source::Other);
            *taken.entry((&e.taxon_id, e.source)).or_default() += 1;
        }
        for (taxon, &count) in &manifest.per_species_counts {
            prop_assert!((50..=200).contains(&count));
            for (rank, &source) in policy.priority.iter().enumerate() {
                if taken.get(&(taxon, source)).copied().unwrap_or(0) > 0 {
                    for &earlier in &policy.priority[..rank] {
                        prop_assert_eq!(
                            taken.get(&(taxon, earlier)).copied().unwrap_or(0),
                            available.get(&(taxon, earlier)).copied().unwrap_or(0)
                        );
                    }
                }
            }
        }
        prop_assert_eq!(manifest.per_source_counts.values().sum::<usize>(), manifest.len());
        prop_assert_eq!(manifest.per_species_counts.values().sum::<usize>(), manifest.len());

        let mut shuffled = entries.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let again = sample_dataset(&shuffled, &policy).unwrap();
        let names: BTreeMap<TaxonId, String> = manifest.per_species_counts.keys().map(|t| (t.clone(), t.0.clone())).collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_manifest(&mut a, &manifest, &names).unwrap();
        write_manifest(&mut b, &again, &names).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_sizes_and_round_trip(seed in any::<u64>(), split_seed in any::<u64>()) {
        let entries = inventory(seed);
        let Ok(manifest) = sample_dataset(&entries, &SamplingPolicy::default()) else { return Ok(()); };
        let policy = SplitPolicy { seed: split_seed, ..SplitPolicy::default() };
        let splits = assign_splits(&manifest, &policy).unwrap();
        prop_assert_eq!(&splits, &assign_splits(&manifest, &policy).unwrap());
        for (taxon, &n) in &manifest.per_species_counts {
            let of = |s: Split| manifest.entries.iter().filter(|e| &e.taxon_id == taxon && splits.get(&e.image_id) == Some(s)).count();
            prop_assert_eq!(of(Split::Validation), n / 10);
            prop_assert_eq!(of(Split::Test), n / 10);
            prop_assert_eq!(of(Split::Train), n - 2 * (n / 10));
        }
        let names: BTreeMap<TaxonId, String> = manifest.per_species_counts.keys().map(|t| (t.clone(), t.0.clone())).collect();
        let csv = export_training_csv(&manifest, &splits, &names, None).unwrap();
        let mut parsed = parse_training_csv(&csv).unwrap();
        let mut expected: Vec<(Split, String, String)> = manifest
            .entries
            .iter()
            .map(|e| (splits.get(&e.image_id).unwrap(), e.uri.clone(), e.taxon_id.0.replace(' ', "_")))
            .collect();
        parsed.sort();
        expected.sort();
        prop_assert_eq!(parsed, expected);
    }

    #[test]
    fn entries_file_round_trip(seed in any::<u64>()) {
        let entries = inventory(seed);
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).unwrap();
        prop_assert_eq!(read_entries(buf.as_slice()).unwrap(), entries);
    }
}
