//! Synthetic corpus and binary runner shared by the CLI test targets.
#![allow(dead_code)]

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phytoset::ingest::{write_dwca, write_occurrence_table, Coordinates, OccurrenceRecord, Source};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPECIES: [&str; 12] = [
    "Quercus robur",
    "Quercus ilex",
    "Quercus suber",
    "Pinus pinea",
    "Pinus pinaster",
    "Pinus sylvestris",
    "Acer campestre",
    "Acer pseudoplatanus",
    "Olea europaea",
    "Fraxinus angustifolia",
    "Salix alba",
    "Salix atrocinerea",
];

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub catalog: PathBuf,
    /// `SOURCE=PATH` arguments for `ingest`.
    pub inputs: Vec<String>,
    pub images: usize,
}

impl Corpus {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn path_str(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

/// Writes a catalog and four source exports. `per_source(i)` gives the image
/// counts for species `i` in priority order. FloraOn and Pl@ntNet come as
/// delimited tables, Observation.org and iNaturalist as archives. One record
/// per source uses an unknown name and one lies outside the region.
pub fn build_corpus(seed: u64, per_source: impl Fn(usize) -> [usize; 4]) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dir.path().join("catalog.csv");
    let mut text = String::from("canonical_name,synonyms\n");
    for name in SPECIES {
        let syn = if name == "Quercus ilex" { "Quercus rotundifolia" } else { "" };
        text.push_str(&format!("{name},{syn}\n"));
    }
    std::fs::write(&catalog, text).unwrap();

    let sources = [Source::FloraOn, Source::PlantNet, Source::ObservationOrg, Source::INaturalist];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut images = 0;
    for (k, source) in sources.into_iter().enumerate() {
        let mut records = Vec::new();
        for (i, name) in SPECIES.iter().enumerate() {
            let mut remaining = per_source(i)[k];
            images += remaining;
            let mut occ = 0;
            while remaining > 0 {
                let n = rng.random_range(1..=3).min(remaining);
                remaining -= n;
                let raw = if *name == "Quercus ilex" && occ % 5 == 0 { "Quercus rotundifolia" } else { *name };
                records.push(OccurrenceRecord {
                    occurrence_id: format!("{k}-{i}-{occ}"),
                    raw_name: raw.to_string(),
                    source,
                    image_uris: (0..n)
                        .map(|j| format!("https://img.example/{source}/{i}/{occ}-{j}.jpg"))
                        .collect(),
                    coordinates: Coordinates::new(rng.random_range(36.0..43.0), rng.random_range(-9.5..-6.0)),
                });
                occ += 1;
            }
        }
        records.push(OccurrenceRecord {
            occurrence_id: format!("{k}-unknown"),
            raw_name: "Nonexistent plant".into(),
            source,
            image_uris: vec![format!("https://img.example/{source}/unknown.jpg")],
            coordinates: None,
        });
        records.push(OccurrenceRecord {
            occurrence_id: format!("{k}-far"),
            raw_name: SPECIES[0].into(),
            source,
            image_uris: vec![format!("https://img.example/{source}/far.jpg")],
            coordinates: Coordinates::new(-33.9, 18.4),
        });
        records.shuffle(&mut rng);
        let path = if k < 2 {
            let p = dir.path().join(format!("{source}.tsv"));
            write_occurrence_table(File::create(&p).unwrap(), &records).unwrap();
            p
        } else {
            let p = dir.path().join(format!("{source}.zip"));
            write_dwca(File::create(&p).unwrap(), &records).unwrap();
            p
        };
        inputs.push(format!("{source}={}", path.display()));
    }
    Corpus { dir, catalog, inputs, images }
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phytoset"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Deterministic classifier stand-in keyed by the image reference: the true
/// label is first about 70% of the time, further down or missing otherwise.
pub fn synthetic_scores(image_ref: &str, truth: &str) -> Vec<(String, f64)> {
    let digest = Sha256::digest(image_ref.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    let mut labels: Vec<&str> = SPECIES.iter().copied().filter(|s| *s != truth).collect();
    labels.shuffle(&mut rng);
    let position = match rng.random_range(0..100) {
        0..70 => 0,
        70..90 => rng.random_range(1..5),
        _ => 5,
    };
    let mut ranked: Vec<&str> = labels[..5].to_vec();
    if position < 5 {
        ranked[4] = truth;
        ranked.swap(position, 4);
    }
    let mut weights: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
    weights.sort_by(|a, b| b.partial_cmp(a).unwrap());
    weights[0] += rng.random_range(0.0..3.0);
    let mass: f64 = rng.random_range(0.7..1.0);
    let total: f64 = weights.iter().sum();
    ranked
        .into_iter()
        .zip(weights)
        .map(|(l, w)| (l.to_string(), (w / total * mass * 1e6).round() / 1e6))
        .collect()
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}
