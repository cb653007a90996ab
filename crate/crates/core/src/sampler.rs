//! Deduplication and bounded, source-prioritized sampling of image entries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{LabelNames, TaxonId};
use crate::ingest::{ImageEntry, ImageId, Source};
use crate::rng::taxon_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub min_images: usize,
    pub max_images: usize,
    /// Sources in consumption order; unlisted sources are never sampled.
    pub priority: Vec<Source>,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            min_images: 50,
            max_images: 200,
            priority: vec![
                Source::FloraOn,
                Source::PlantNet,
                Source::ObservationOrg,
                Source::INaturalist,
            ],
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("invalid sampling policy: {0}")]
    InvalidPolicy(String),
    #[error("no species has at least {0} images")]
    EmptyResult(usize),
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.min_images == 0 || self.max_images == 0 {
            return Err(SamplerError::InvalidPolicy("bounds must be positive".into()));
        }
        if self.min_images > self.max_images {
            return Err(SamplerError::InvalidPolicy(format!(
                "min_images {} exceeds max_images {}",
                self.min_images, self.max_images
            )));
        }
        let unique: HashSet<_> = self.priority.iter().collect();
        if unique.len() != self.priority.len() {
            return Err(SamplerError::InvalidPolicy("priority repeats a source".into()));
        }
        Ok(())
    }

    /// Position of `source` in the priority list, if sampled at all.
    pub fn rank(&self, source: Source) -> Option<usize> {
        self.priority.iter().position(|&s| s == source)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    /// Copies removed because the same URI appeared again under the same taxon.
    pub same_species_dupes: usize,
    /// Distinct URIs dropped because they were labeled with several taxa.
    pub cross_species_dupes: usize,
    /// Entries removed with those URIs.
    pub cross_species_entries: usize,
}

/// Collapses repeated URIs. Same-taxon copies keep the highest-priority
/// source; URIs labeled with more than one taxon are removed entirely.
/// Output is sorted by image id.
pub fn dedup_entries(entries: Vec<ImageEntry>, priority: &[Source]) -> (Vec<ImageEntry>, DedupStats) {
    let rank = |s: Source| priority.iter().position(|&p| p == s).unwrap_or(priority.len());
    let mut groups: BTreeMap<ImageId, Vec<ImageEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.image_id.clone()).or_default().push(e);
    }
    let mut stats = DedupStats::default();
    let mut kept = Vec::with_capacity(groups.len());
    for (_, mut group) in groups {
        let first_taxon = &group[0].taxon_id;
        if group.iter().any(|e| &e.taxon_id != first_taxon) {
            stats.cross_species_dupes += 1;
            stats.cross_species_entries += group.len();
            continue;
        }
        stats.same_species_dupes += group.len() - 1;
        group.sort_by_key(|e| (rank(e.source), e.source));
        kept.push(group.swap_remove(0));
    }
    (kept, stats)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRawStats {
    pub images: usize,
    pub species: usize,
    pub species_ge_min: usize,
}

/// Per-source and overall inventory of raw entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStats {
    pub min_images: usize,
    pub per_source: BTreeMap<Source, SourceRawStats>,
    pub total_images: usize,
    pub total_species: usize,
    pub species_ge_min: usize,
}

pub fn raw_stats(entries: &[ImageEntry], min_images: usize) -> RawStats {
    let mut by_source: BTreeMap<Source, HashMap<&TaxonId, usize>> = BTreeMap::new();
    let mut by_taxon: HashMap<&TaxonId, usize> = HashMap::new();
    for e in entries {
        *by_source.entry(e.source).or_default().entry(&e.taxon_id).or_default() += 1;
        *by_taxon.entry(&e.taxon_id).or_default() += 1;
    }
    let per_source = by_source
        .into_iter()
        .map(|(source, counts)| {
            let stats = SourceRawStats {
                images: counts.values().sum(),
                species: counts.len(),
                species_ge_min: counts.values().filter(|&&c| c >= min_images).count(),
            };
            (source, stats)
        })
        .collect();
    RawStats {
        min_images,
        per_source,
        total_images: entries.len(),
        total_species: by_taxon.len(),
        species_ge_min: by_taxon.values().filter(|&&c| c >= min_images).count(),
    }
}

/// Sampled dataset. Entries are sorted by (taxon id, image id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ImageEntry>,
    pub per_species_counts: BTreeMap<TaxonId, usize>,
    pub per_source_counts: BTreeMap<Source, usize>,
    pub policy: SamplingPolicy,
}

impl DatasetManifest {
    /// Builds a manifest from already-sampled entries, recomputing counts.
    pub fn from_entries(mut entries: Vec<ImageEntry>, policy: SamplingPolicy) -> Self {
        entries.sort_by(|a, b| (&a.taxon_id, &a.image_id).cmp(&(&b.taxon_id, &b.image_id)));
        let mut per_species_counts = BTreeMap::new();
        let mut per_source_counts = BTreeMap::new();
        for e in &entries {
            *per_species_counts.entry(e.taxon_id.clone()).or_insert(0) += 1;
            *per_source_counts.entry(e.source).or_insert(0) += 1;
        }
        DatasetManifest {
            entries,
            per_species_counts,
            per_source_counts,
            policy,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn sample_species(taxon: &TaxonId, mut pool: Vec<ImageEntry>, policy: &SamplingPolicy) -> Vec<ImageEntry> {
    pool.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut rng = taxon_rng(policy.seed, taxon);
    let mut budget = policy.max_images;
    let mut chosen = Vec::with_capacity(budget.min(pool.len()));
    for &source in &policy.priority {
        if budget == 0 {
            break;
        }
        let available: Vec<&ImageEntry> = pool.iter().filter(|e| e.source == source).collect();
        let take = available.len().min(budget);
        if take == available.len() {
            chosen.extend(available.into_iter().cloned());
        } else {
            let mut picks = index::sample(&mut rng, available.len(), take).into_vec();
            picks.sort_unstable();
            chosen.extend(picks.into_iter().map(|i| available[i].clone()));
        }
        budget -= take;
    }
    chosen
}

/// Drops species with fewer than `min_images` eligible images and fills each
/// remaining species' budget of `max_images` source by source, in priority
/// order, with a uniform seeded subset of each source. Only sources in the
/// priority list count towards eligibility.
pub fn sample_dataset(entries: &[ImageEntry], policy: &SamplingPolicy) -> Result<DatasetManifest, SamplerError> {
    policy.validate()?;
    let mut by_taxon: BTreeMap<&TaxonId, Vec<ImageEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| policy.rank(e.source).is_some()) {
        by_taxon.entry(&e.taxon_id).or_default().push(e.clone());
    }
    let eligible: Vec<(&TaxonId, Vec<ImageEntry>)> = by_taxon
        .into_iter()
        .filter(|(_, pool)| pool.len() >= policy.min_images)
        .collect();
    if eligible.is_empty() {
        return Err(SamplerError::EmptyResult(policy.min_images));
    }
    let sampled: Vec<Vec<ImageEntry>> = eligible
        .into_par_iter()
        .map(|(taxon, pool)| sample_species(taxon, pool, policy))
        .collect();
    Ok(DatasetManifest::from_entries(
        sampled.into_iter().flatten().collect(),
        policy.clone(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceShare {
    pub images: usize,
    pub species: usize,
    /// Share of all manifest images, in percent.
    pub percent: f64,
    /// `percent` rounded half-to-even to one decimal.
    pub percent_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_images: usize,
    pub total_species: usize,
    pub per_source: BTreeMap<Source, SourceShare>,
    /// Image count per species to number of species with that count.
    pub histogram: BTreeMap<usize, usize>,
    pub species_at_max: usize,
    pub max_images: usize,
}

impl DatasetStats {
    pub fn species_with_at_least(&self, n: usize) -> usize {
        self.histogram.range(n..).map(|(_, s)| s).sum()
    }
}

/// `100 * part / whole` rounded half-to-even to one decimal, computed on
/// integers so the tie decision is exact.
pub fn percent_one_decimal(part: usize, whole: usize) -> String {
    if whole == 0 {
        return "0.0".into();
    }
    let numerator = part as u128 * 1000;
    let whole = whole as u128;
    let (mut tenths, rem) = (numerator / whole, numerator % whole);
    if rem * 2 > whole || (rem * 2 == whole && tenths % 2 == 1) {
        tenths += 1;
    }
    format!("{}.{}", tenths / 10, tenths % 10)
}

pub fn manifest_stats(manifest: &DatasetManifest) -> DatasetStats {
    let total = manifest.len();
    let mut species_per_source: BTreeMap<Source, HashSet<&TaxonId>> = BTreeMap::new();
    for e in &manifest.entries {
        species_per_source.entry(e.source).or_default().insert(&e.taxon_id);
    }
    let per_source = manifest
        .per_source_counts
        .iter()
        .map(|(&source, &images)| {
            let share = SourceShare {
                images,
                species: species_per_source.get(&source).map_or(0, HashSet::len),
                percent: if total == 0 { 0.0 } else { 100.0 * images as f64 / total as f64 },
                percent_display: percent_one_decimal(images, total),
            };
            (source, share)
        })
        .collect();
    let mut histogram = BTreeMap::new();
    for &count in manifest.per_species_counts.values() {
        *histogram.entry(count).or_insert(0) += 1;
    }
    let max = manifest.policy.max_images;
    DatasetStats {
        total_images: total,
        total_species: manifest.per_species_counts.len(),
        per_source,
        species_at_max: manifest.per_species_counts.values().filter(|&&c| c == max).count(),
        histogram,
        max_images: max,
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("no canonical name for taxon `{0}`")]
    UnknownTaxon(TaxonId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MANIFEST_HEADER: [&str; 5] = ["image_id", "uri", "taxon_id", "canonical_name", "source"];

/// Writes `image_id,uri,taxon_id,canonical_name,source` rows sorted by
/// (canonical name, image id), LF line endings.
pub fn write_manifest<W: Write>(
    writer: W,
    manifest: &DatasetManifest,
    names: &impl LabelNames,
) -> Result<(), ManifestError> {
    let mut rows = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let name = names
            .canonical_name(&e.taxon_id)
            .ok_or_else(|| ManifestError::UnknownTaxon(e.taxon_id.clone()))?;
        rows.push((name, e));
    }
    rows.sort_by(|a, b| (a.0, &a.1.image_id).cmp(&(b.0, &b.1.image_id)));
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| ManifestError::Io(e.into());
    csv.write_record(MANIFEST_HEADER).map_err(io)?;
    for (name, e) in rows {
        csv.write_record([e.image_id.as_str(), &e.uri, e.taxon_id.as_str(), name, e.source.as_str()])
            .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a manifest file, returning it with the taxon-to-name map it carries.
pub fn read_manifest<R: Read>(
    reader: R,
    policy: SamplingPolicy,
) -> Result<(DatasetManifest, BTreeMap<TaxonId, String>), ManifestError> {
    let mut csv = csv::Reader::from_reader(reader);
    let malformed = |e: csv::Error| ManifestError::Malformed {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let headers = csv.headers().map_err(malformed)?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(ManifestError::Malformed {
            line: 1,
            message: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }
    let mut entries = Vec::new();
    let mut names = BTreeMap::new();
    for record in csv.records() {
        let record = record.map_err(malformed)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| ManifestError::Malformed { line, message };
        let source: Source = record[4].parse().map_err(|e: crate::ingest::UnknownSource| bad(e.to_string()))?;
        let entry = ImageEntry::new(&record[1], TaxonId::from(&record[2]), source);
        if entry.image_id.as_str() != &record[0] {
            return Err(bad(format!("image_id does not match uri `{}`", entry.uri)));
        }
        names.insert(entry.taxon_id.clone(), record[3].to_string());
        entries.push(entry);
    }
    Ok((DatasetManifest::from_entries(entries, policy), names))
}
