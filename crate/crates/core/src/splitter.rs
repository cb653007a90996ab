//! Seeded per-species train/validation/test splits and the training import file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{LabelNames, TaxonId};
use crate::ingest::{ImageEntry, ImageId, Source};
use crate::rng::taxon_rng;
use crate::sampler::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Validation => "VALIDATION",
            Split::Test => "TEST",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(Split::Train),
            "VALIDATION" | "VALIDATE" => Ok(Split::Validation),
            "TEST" => Ok(Split::Test),
            _ => Err(SplitError::Malformed {
                line: 0,
                message: format!("unknown split `{s}`"),
            }),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid split fractions {0:?}: must be nonnegative and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("splits and manifest disagree on image `{0}`")]
    InconsistentSplit(ImageId),
    #[error("label `{0}` contains the field delimiter")]
    LabelContainsDelimiter(String),
    #[error("uri `{0}` contains the field delimiter or a line break")]
    UriContainsDelimiter(String),
    #[error("no canonical name for taxon `{0}`")]
    UnknownTaxon(TaxonId),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for SplitError {
    fn from(e: std::io::Error) -> Self {
        SplitError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<(), SplitError> {
        let f = [self.train, self.validation, self.test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidFractions(f));
        }
        Ok(())
    }

    /// (train, validation, test) sizes for a species with `n` images.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.29 * 100 < 29.
        let floor = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let validation = floor(self.validation).min(n);
        let test = floor(self.test).min(n - validation);
        (n - validation - test, validation, test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<ImageId, Split>,
}

impl SplitAssignment {
    pub fn get(&self, id: &ImageId) -> Option<Split> {
        self.assignment.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }
}

/// Splits `n` across groups in proportion to `weights` (which sum to at least
/// `n`) by largest remainder. Remainder ties go to the earlier position in
/// `tie_order`, capped by each group's weight.
fn allocate(n: usize, weights: &[usize], tie_order: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut quota: Vec<usize> = weights.iter().map(|w| n * w / total).collect();
    let mut left = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let rank = |g: usize| tie_order.iter().position(|&t| t == g).unwrap_or(usize::MAX);
    // exact remainder of n * w / total, compared as integers
    order.sort_by(|&a, &b| {
        let (ra, rb) = ((n * weights[a]) % total, (n * weights[b]) % total);
        rb.cmp(&ra).then(rank(a).cmp(&rank(b)))
    });
    while left > 0 {
        for &g in &order {
            if left > 0 && quota[g] < weights[g] {
                quota[g] += 1;
                left -= 1;
            }
        }
    }
    quota
}

/// Per species, `floor(n * validation)` images go to validation,
/// `floor(n * test)` to test and the remainder to train. The draw is
/// stratified by source: each source's images are shuffled with the
/// species' seeded stream and the validation/test quotas are shared among
/// sources in proportion to their counts, so every split keeps the
/// species' source mix up to rounding.
pub fn assign_splits(manifest: &DatasetManifest, policy: &SplitPolicy) -> Result<SplitAssignment, SplitError> {
    policy.validate()?;
    if manifest.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    let mut by_taxon: BTreeMap<&TaxonId, BTreeMap<Source, Vec<&ImageId>>> = BTreeMap::new();
    for e in &manifest.entries {
        by_taxon
            .entry(&e.taxon_id)
            .or_default()
            .entry(e.source)
            .or_default()
            .push(&e.image_id);
    }
    let per_taxon: Vec<Vec<(ImageId, Split)>> = by_taxon
        .into_par_iter()
        .map(|(taxon, groups)| {
            let mut rng = taxon_rng(policy.seed, taxon);
            let mut groups: Vec<Vec<&ImageId>> = groups.into_values().collect();
            for ids in &mut groups {
                ids.sort();
                ids.dedup();
                ids.shuffle(&mut rng);
            }
            let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
            let mut tie_order: Vec<usize> = (0..groups.len()).collect();
            tie_order.shuffle(&mut rng);
            let (_, n_val, n_test) = policy.sizes(counts.iter().sum());
            let val = allocate(n_val, &counts, &tie_order);
            let rest: Vec<usize> = counts.iter().zip(&val).map(|(c, v)| c - v).collect();
            let test = allocate(n_test, &rest, &tie_order);
            let mut out = Vec::with_capacity(counts.iter().sum());
            for (g, ids) in groups.into_iter().enumerate() {
                for (i, id) in ids.into_iter().enumerate() {
                    let split = if i < val[g] {
                        Split::Validation
                    } else if i < val[g] + test[g] {
                        Split::Test
                    } else {
                        Split::Train
                    };
                    out.push((id.clone(), split));
                }
            }
            out
        })
        .collect();
    Ok(SplitAssignment {
        assignment: per_taxon.into_iter().flatten().collect(),
    })
}

fn check_coverage(manifest: &DatasetManifest, splits: &SplitAssignment) -> Result<(), SplitError> {
    let ids: HashSet<&ImageId> = manifest.entries.iter().map(|e| &e.image_id).collect();
    if let Some(e) = manifest.entries.iter().find(|e| !splits.assignment.contains_key(&e.image_id)) {
        return Err(SplitError::InconsistentSplit(e.image_id.clone()));
    }
    if let Some(id) = splits.assignment.keys().find(|id| !ids.contains(id)) {
        return Err(SplitError::InconsistentSplit(id.clone()));
    }
    Ok(())
}

/// Source by split contingency table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub counts: BTreeMap<Source, BTreeMap<Split, usize>>,
    pub split_totals: BTreeMap<Split, usize>,
    pub source_totals: BTreeMap<Source, usize>,
    pub total: usize,
}

pub fn split_report(manifest: &DatasetManifest, splits: &SplitAssignment) -> Result<SplitReport, SplitError> {
    check_coverage(manifest, splits)?;
    let mut report = SplitReport::default();
    for split in Split::ALL {
        report.split_totals.insert(split, 0);
    }
    for e in &manifest.entries {
        let split = splits.assignment[&e.image_id];
        *report.counts.entry(e.source).or_default().entry(split).or_insert(0) += 1;
        *report.split_totals.get_mut(&split).expect("all splits present") += 1;
        *report.source_totals.entry(e.source).or_insert(0) += 1;
        report.total += 1;
    }
    Ok(report)
}

/// Import label: canonical name with whitespace replaced by underscores.
pub fn sanitize_label(name: &str) -> Result<String, SplitError> {
    let label = name.split_whitespace().collect::<Vec<_>>().join("_");
    if label.contains(',') {
        return Err(SplitError::LabelContainsDelimiter(label));
    }
    Ok(label)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixRewrite {
    pub from: String,
    pub to: String,
}

impl PrefixRewrite {
    pub fn apply<'a>(&self, uri: &'a str) -> std::borrow::Cow<'a, str> {
        match uri.strip_prefix(self.from.as_str()) {
            Some(rest) => format!("{}{rest}", self.to).into(),
            None => uri.into(),
        }
    }
}

/// Training import document: `SPLIT,URI,LABEL` lines sorted by (label, uri),
/// LF terminated, no header.
pub fn export_training_csv(
    manifest: &DatasetManifest,
    splits: &SplitAssignment,
    names: &impl LabelNames,
    rewrite: Option<&PrefixRewrite>,
) -> Result<String, SplitError> {
    if manifest.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    check_coverage(manifest, splits)?;
    let mut rows = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let name = names
            .canonical_name(&e.taxon_id)
            .ok_or_else(|| SplitError::UnknownTaxon(e.taxon_id.clone()))?;
        let label = sanitize_label(name)?;
        let uri = match rewrite {
            Some(r) => r.apply(&e.uri).into_owned(),
            None => e.uri.clone(),
        };
        if uri.contains([',', '\n', '\r']) {
            return Err(SplitError::UriContainsDelimiter(uri));
        }
        rows.push((label, uri, splits.assignment[&e.image_id]));
    }
    rows.sort();
    let mut out = String::with_capacity(rows.len() * 64);
    for (label, uri, split) in rows {
        out.push_str(split.as_str());
        out.push(',');
        out.push_str(&uri);
        out.push(',');
        out.push_str(&label);
        out.push('\n');
    }
    Ok(out)
}

/// Parses an import document back into (split, uri, label) triples.
pub fn parse_training_csv(text: &str) -> Result<Vec<(Split, String, String)>, SplitError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let line_no = i as u64 + 1;
            let mut parts = line.splitn(3, ',');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(split), Some(uri), Some(label)) if !label.contains(',') => {
                    let split = split.parse().map_err(|_| SplitError::Malformed {
                        line: line_no,
                        message: format!("unknown split `{split}`"),
                    })?;
                    Ok((split, uri.to_string(), label.to_string()))
                }
                _ => Err(SplitError::Malformed {
                    line: line_no,
                    message: "expected SPLIT,URI,LABEL".into(),
                }),
            }
        })
        .collect()
}

/// Writes `image_id,split` rows sorted by image id.
pub fn write_splits<W: Write>(mut writer: W, splits: &SplitAssignment) -> Result<(), SplitError> {
    writer.write_all(b"image_id,split\n")?;
    for (id, split) in &splits.assignment {
        writeln!(writer, "{id},{split}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_splits<R: Read>(reader: R) -> Result<SplitAssignment, SplitError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut assignment = BTreeMap::new();
    for record in csv.records() {
        let record = record.map_err(|e| SplitError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(SplitError::Malformed {
                line,
                message: "expected image_id,split".into(),
            });
        }
        let split = record[1].parse().map_err(|_| SplitError::Malformed {
            line,
            message: format!("unknown split `{}`", &record[1]),
        })?;
        if assignment.insert(ImageId::from(&record[0]), split).is_some() {
            return Err(SplitError::Malformed {
                line,
                message: format!("image `{}` assigned twice", &record[0]),
            });
        }
    }
    Ok(SplitAssignment { assignment })
}

/// Entries of the manifest that fall in `split`.
pub fn entries_in<'a>(
    manifest: &'a DatasetManifest,
    splits: &'a SplitAssignment,
    split: Split,
) -> impl Iterator<Item = &'a ImageEntry> + 'a {
    manifest
        .entries
        .iter()
        .filter(move |e| splits.get(&e.image_id) == Some(split))
}
