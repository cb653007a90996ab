//! Species universe: canonical binomials, synonyms and genus derivation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque, stable taxon identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaxonId(pub String);

impl TaxonId {
    pub fn new(id: impl Into<String>) -> Self {
        TaxonId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaxonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaxonId {
    fn from(s: &str) -> Self {
        TaxonId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonRecord {
    pub taxon_id: TaxonId,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
    pub genus: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("catalog has no rows")]
    EmptyCatalog,
    #[error("duplicate canonical name `{0}`")]
    DuplicateCanonical(String),
    #[error("name `{0}` is listed for more than one taxon")]
    DuplicateSynonym(String),
    #[error("duplicate taxon id `{0}`")]
    DuplicateTaxonId(String),
    #[error("`{0}` is not a binomial (needs at least two tokens)")]
    MalformedBinomial(String),
    #[error("catalog is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("unknown taxon `{0}`")]
    UnknownTaxon(TaxonId),
    #[error("catalog line {line}: {message}")]
    Csv { line: u64, message: String },
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn name_key(raw: &str) -> String {
    normalize_name(raw).to_lowercase()
}

/// Options for reading a catalog file.
#[derive(Debug, Clone)]
pub struct CatalogFormat {
    pub delimiter: u8,
    pub synonym_delimiter: char,
}

impl Default for CatalogFormat {
    fn default() -> Self {
        CatalogFormat {
            delimiter: b',',
            synonym_delimiter: ';',
        }
    }
}

/// Immutable species catalog with a name index over canonical names and synonyms.
#[derive(Debug, Clone, Default)]
pub struct SpeciesCatalog {
    taxa: Vec<TaxonRecord>,
    by_id: HashMap<TaxonId, usize>,
    name_index: HashMap<String, TaxonId>,
}

/// Outcome of name resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Resolved(TaxonId),
    Unresolved,
}

impl Resolution {
    pub fn taxon_id(self) -> Option<TaxonId> {
        match self {
            Resolution::Resolved(id) => Some(id),
            Resolution::Unresolved => None,
        }
    }
}

/// One catalog row before validation.
#[derive(Debug, Clone, Default)]
pub struct TaxonRow {
    pub taxon_id: Option<String>,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
}

impl TaxonRow {
    pub fn new(canonical_name: &str, synonyms: &[&str]) -> Self {
        TaxonRow {
            taxon_id: None,
            canonical_name: canonical_name.to_string(),
            synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SpeciesCatalog {
    /// Builds a catalog from rows. Taxa without an explicit id use their
    /// normalized canonical name as id.
    pub fn from_rows<I: IntoIterator<Item = TaxonRow>>(rows: I) -> Result<Self, CatalogError> {
        let mut catalog = SpeciesCatalog::default();
        let mut canonical_keys: HashMap<String, TaxonId> = HashMap::new();
        let mut pending = Vec::new();

        for row in rows {
            let canonical = normalize_name(&row.canonical_name);
            let genus = canonical
                .split(' ')
                .next()
                .filter(|_| canonical.split(' ').count() >= 2)
                .ok_or_else(|| CatalogError::MalformedBinomial(row.canonical_name.clone()))?
                .to_string();
            let taxon_id = TaxonId(
                row.taxon_id
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .unwrap_or_else(|| canonical.clone()),
            );
            if catalog.by_id.contains_key(&taxon_id) {
                return Err(CatalogError::DuplicateTaxonId(taxon_id.0));
            }
            let key = name_key(&canonical);
            if canonical_keys.insert(key, taxon_id.clone()).is_some() {
                return Err(CatalogError::DuplicateCanonical(canonical));
            }
            catalog.by_id.insert(taxon_id.clone(), catalog.taxa.len());
            pending.push(row.synonyms);
            catalog.taxa.push(TaxonRecord {
                taxon_id,
                canonical_name: canonical,
                synonyms: Vec::new(),
                genus,
            });
        }
        if catalog.taxa.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }

        catalog.name_index = canonical_keys.clone();
        for (taxon, synonyms) in catalog.taxa.iter_mut().zip(pending) {
            for raw in synonyms {
                let synonym = normalize_name(&raw);
                if synonym.is_empty() {
                    continue;
                }
                if synonym.split(' ').count() < 2 {
                    return Err(CatalogError::MalformedBinomial(raw));
                }
                let key = name_key(&synonym);
                match catalog.name_index.get(&key) {
                    Some(owner) if *owner == taxon.taxon_id => {
                        // Repeated synonym or the taxon's own canonical name.
                        continue;
                    }
                    Some(_) => return Err(CatalogError::DuplicateSynonym(synonym)),
                    None => {}
                }
                catalog.name_index.insert(key, taxon.taxon_id.clone());
                taxon.synonyms.push(synonym);
            }
        }
        Ok(catalog)
    }

    /// Reads a delimited catalog with a header row. Columns: `canonical_name`,
    /// optional `synonyms` and optional `taxon_id`.
    pub fn load<R: Read>(reader: R, format: &CatalogFormat) -> Result<Self, CatalogError> {
        let mut csv = csv::ReaderBuilder::new()
            .delimiter(format.delimiter)
            .flexible(true)
            .from_reader(reader);
        let headers = csv.headers().map_err(csv_err)?.clone();
        if headers.iter().all(|h| h.trim().is_empty()) {
            return Err(CatalogError::EmptyCatalog);
        }
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let name_col = col("canonical_name").ok_or(CatalogError::MissingColumn("canonical_name"))?;
        let syn_col = col("synonyms");
        let id_col = col("taxon_id");

        let mut rows = Vec::new();
        for record in csv.records() {
            let record = record.map_err(csv_err)?;
            let field = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("");
            let synonyms = field(syn_col)
                .split(format.synonym_delimiter)
                .map(str::to_string)
                .filter(|s| !s.trim().is_empty())
                .collect();
            rows.push(TaxonRow {
                taxon_id: id_col.map(|_| field(id_col).to_string()),
                canonical_name: field(Some(name_col)).to_string(),
                synonyms,
            });
        }
        Self::from_rows(rows)
    }

    pub fn taxa(&self) -> &[TaxonRecord] {
        &self.taxa
    }

    pub fn len(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxa.is_empty()
    }

    pub fn get(&self, id: &TaxonId) -> Option<&TaxonRecord> {
        self.by_id.get(id).map(|&i| &self.taxa[i])
    }

    /// Matches `raw` against canonical names and synonyms, ignoring case and
    /// surrounding or repeated whitespace.
    pub fn resolve_name(&self, raw: &str) -> Resolution {
        match self.name_index.get(&name_key(raw)) {
            Some(id) => Resolution::Resolved(id.clone()),
            None => Resolution::Unresolved,
        }
    }

    /// Resolves a label that is either a taxon id or a catalog name.
    pub fn resolve_label(&self, label: &str) -> Option<TaxonId> {
        let id = TaxonId::from(label);
        if self.by_id.contains_key(&id) {
            return Some(id);
        }
        self.resolve_name(label).taxon_id()
    }

    pub fn genus_of(&self, id: &TaxonId) -> Result<&str, CatalogError> {
        self.get(id)
            .map(|t| t.genus.as_str())
            .ok_or_else(|| CatalogError::UnknownTaxon(id.clone()))
    }

    /// Taxon id to canonical name, for writers that need display labels.
    pub fn names(&self) -> BTreeMap<TaxonId, String> {
        self.taxa
            .iter()
            .map(|t| (t.taxon_id.clone(), t.canonical_name.clone()))
            .collect()
    }
}

/// Lookup of display names by taxon id.
pub trait LabelNames {
    fn canonical_name(&self, id: &TaxonId) -> Option<&str>;
}

impl LabelNames for SpeciesCatalog {
    fn canonical_name(&self, id: &TaxonId) -> Option<&str> {
        self.get(id).map(|t| t.canonical_name.as_str())
    }
}

impl LabelNames for BTreeMap<TaxonId, String> {
    fn canonical_name(&self, id: &TaxonId) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

fn csv_err(e: csv::Error) -> CatalogError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    CatalogError::Csv {
        line,
        message: e.to_string(),
    }
}
