//! Occurrence ingestion: archive and table parsing, region filtering and
//! labeling of image entries against the catalog.

mod dwca;
mod table;

pub use dwca::{parse_dwca, parse_dwca_bytes, write_dwca, DwcaError};
pub use table::{
    parse_occurrence_table, write_occurrence_table, ColumnMap, TableError,
};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{SpeciesCatalog, TaxonId};

/// Image provider of an occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    FloraOn,
    PlantNet,
    ObservationOrg,
    #[serde(rename = "iNaturalist")]
    INaturalist,
    Other,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::FloraOn,
        Source::PlantNet,
        Source::ObservationOrg,
        Source::INaturalist,
        Source::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::FloraOn => "FloraOn",
            Source::PlantNet => "PlantNet",
            Source::ObservationOrg => "ObservationOrg",
            Source::INaturalist => "iNaturalist",
            Source::Other => "Other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown source `{0}`")]
pub struct UnknownSource(pub String);

impl FromStr for Source {
    type Err = UnknownSource;

    /// Accepts the canonical spelling and common variants such as
    /// `Pl@ntNet` or `Observation.org`, ignoring case and punctuation.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "floraon" => Ok(Source::FloraOn),
            "plntnet" | "plantnet" => Ok(Source::PlantNet),
            "observationorg" | "observation" => Ok(Source::ObservationOrg),
            "inaturalist" | "inat" => Ok(Source::INaturalist),
            "other" => Ok(Source::Other),
            _ => Err(UnknownSource(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub latitude: f64,
    pub longitude: f64,
}

impl Coordinates {
    /// Both values must parse and lie in range, otherwise the point is absent.
    pub fn parse(lat: &str, lon: &str) -> Option<Self> {
        let latitude: f64 = lat.trim().parse().ok()?;
        let longitude: f64 = lon.trim().parse().ok()?;
        Self::new(latitude, longitude)
    }

    pub fn new(latitude: f64, longitude: f64) -> Option<Self> {
        ((-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude))
            .then_some(Coordinates {
                latitude,
                longitude,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceRecord {
    pub occurrence_id: String,
    pub raw_name: String,
    pub source: Source,
    pub image_uris: Vec<String>,
    pub coordinates: Option<Coordinates>,
}

/// Content identifier of an image: lowercase hex of the first 128 bits of
/// SHA-256 over the trimmed URI.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl ImageId {
    pub fn from_uri(uri: &str) -> Self {
        let digest = Sha256::digest(uri.trim().as_bytes());
        let mut hex = String::with_capacity(32);
        for byte in &digest[..16] {
            hex.push_str(&format!("{byte:02x}"));
        }
        ImageId(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: ImageId,
    pub uri: String,
    pub taxon_id: TaxonId,
    pub source: Source,
}

impl ImageEntry {
    pub fn new(uri: &str, taxon_id: TaxonId, source: Source) -> Self {
        let uri = uri.trim().to_string();
        ImageEntry {
            image_id: ImageId::from_uri(&uri),
            uri,
            taxon_id,
            source,
        }
    }
}

/// Inclusive lat/lon bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionFilter {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub keep_missing_coords: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid region: latitude [{min_lat}, {max_lat}], longitude [{min_lon}, {max_lon}]")]
pub struct InvalidRegion {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl RegionFilter {
    pub fn new(
        min_lat: f64,
        max_lat: f64,
        min_lon: f64,
        max_lon: f64,
        keep_missing_coords: bool,
    ) -> Result<Self, InvalidRegion> {
        if !(min_lat <= max_lat && min_lon <= max_lon) {
            return Err(InvalidRegion {
                min_lat,
                max_lat,
                min_lon,
                max_lon,
            });
        }
        Ok(RegionFilter {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
            keep_missing_coords,
        })
    }

    pub fn globe() -> Self {
        RegionFilter {
            min_lat: -90.0,
            max_lat: 90.0,
            min_lon: -180.0,
            max_lon: 180.0,
            keep_missing_coords: true,
        }
    }

    pub fn contains(&self, record: &OccurrenceRecord) -> bool {
        match record.coordinates {
            None => self.keep_missing_coords,
            Some(c) => {
                (self.min_lat..=self.max_lat).contains(&c.latitude)
                    && (self.min_lon..=self.max_lon).contains(&c.longitude)
            }
        }
    }
}

impl Default for RegionFilter {
    /// Box around the European continent.
    fn default() -> Self {
        RegionFilter {
            min_lat: 27.0,
            max_lat: 72.0,
            min_lon: -32.0,
            max_lon: 45.0,
            keep_missing_coords: true,
        }
    }
}

pub fn filter_region(records: Vec<OccurrenceRecord>, filter: &RegionFilter) -> Vec<OccurrenceRecord> {
    records.into_iter().filter(|r| filter.contains(r)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub resolved_records: usize,
    pub entries: usize,
    /// Unresolvable raw names and how many records carried them.
    pub unresolved: BTreeMap<String, usize>,
}

/// Labels every image of every resolvable record. Does not deduplicate.
pub fn build_image_entries(
    records: &[OccurrenceRecord],
    catalog: &SpeciesCatalog,
) -> (Vec<ImageEntry>, IngestStats) {
    let mut stats = IngestStats {
        records: records.len(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    for record in records {
        match catalog.resolve_name(&record.raw_name).taxon_id() {
            Some(taxon) => {
                stats.resolved_records += 1;
                entries.extend(
                    record
                        .image_uris
                        .iter()
                        .filter(|u| !u.trim().is_empty())
                        .map(|uri| ImageEntry::new(uri, taxon.clone(), record.source)),
                );
            }
            None => {
                *stats
                    .unresolved
                    .entry(crate::catalog::normalize_name(&record.raw_name))
                    .or_default() += 1;
            }
        }
    }
    stats.entries = entries.len();
    (entries, stats)
}

#[derive(Debug, Error)]
pub enum EntriesError {
    #[error("entries line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("entries file is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const ENTRIES_HEADER: [&str; 4] = ["image_id", "uri", "taxon_id", "source"];

/// Writes entries as `image_id,uri,taxon_id,source` with LF line endings.
pub fn write_entries<W: Write>(writer: W, entries: &[ImageEntry]) -> Result<(), EntriesError> {
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| EntriesError::Io(e.into());
    csv.write_record(ENTRIES_HEADER).map_err(io)?;
    for e in entries {
        csv.write_record([e.image_id.as_str(), &e.uri, e.taxon_id.as_str(), e.source.as_str()])
            .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_entries<R: Read>(reader: R) -> Result<Vec<ImageEntry>, EntriesError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| malformed(&e, e.to_string()))?
        .clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(EntriesError::MissingColumn(name))
    };
    let (id_c, uri_c, taxon_c, source_c) =
        (col("image_id")?, col("uri")?, col("taxon_id")?, col("source")?);
    let mut entries = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| malformed(&e, e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("");
        let source = get(source_c)
            .parse::<Source>()
            .map_err(|e| EntriesError::Malformed {
                line,
                message: e.to_string(),
            })?;
        let entry = ImageEntry::new(get(uri_c), TaxonId::from(get(taxon_c)), source);
        if entry.image_id.as_str() != get(id_c) {
            return Err(EntriesError::Malformed {
                line,
                message: format!("image_id does not match uri `{}`", entry.uri),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn malformed(e: &csv::Error, message: String) -> EntriesError {
    EntriesError::Malformed {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message,
    }
}
