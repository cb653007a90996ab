use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Coordinates, OccurrenceRecord, Source};

/// Column names of a plain occurrence export. One row per image; rows sharing
/// an id belong to the same occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub name: String,
    pub image_uri: String,
    pub latitude: Option<String>,
    pub longitude: Option<String>,
    /// Column holding a per-row source; `default_source` applies otherwise.
    pub source: Option<String>,
    pub default_source: Source,
    pub delimiter: u8,
    /// Splits one cell into several URIs when set.
    pub uri_separator: Option<char>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            name: "scientificName".into(),
            image_uri: "identifier".into(),
            latitude: Some("decimalLatitude".into()),
            longitude: Some("decimalLongitude".into()),
            source: None,
            default_source: Source::Other,
            delimiter: b',',
            uri_separator: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("occurrence table is missing column `{0}`")]
    MissingColumn(String),
    #[error("column map does not name a `{0}` column")]
    UnmappedColumn(&'static str),
    #[error("occurrence table has no data rows")]
    EmptyInput,
    #[error("occurrence table line {line}: empty occurrence id")]
    EmptyId { line: u64 },
    #[error("occurrence table line {line}: {message}")]
    Malformed { line: u64, message: String },
}

pub fn parse_occurrence_table<R: Read>(
    reader: R,
    map: &ColumnMap,
) -> Result<Vec<OccurrenceRecord>, TableError> {
    for (label, value) in [("id", &map.id), ("name", &map.name), ("image_uri", &map.image_uri)] {
        if value.trim().is_empty() {
            return Err(TableError::UnmappedColumn(label));
        }
    }
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(map.delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers().map_err(malformed)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    };
    let id_c = find(&map.id)?;
    let name_c = find(&map.name)?;
    let uri_c = find(&map.image_uri)?;
    let lat_c = map.latitude.as_deref().map(find).transpose()?;
    let lon_c = map.longitude.as_deref().map(find).transpose()?;
    let source_c = map.source.as_deref().map(find).transpose()?;

    let mut records: Vec<OccurrenceRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in csv.records() {
        let row = row.map_err(malformed)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let id = get(id_c);
        if id.is_empty() {
            return Err(TableError::EmptyId { line });
        }
        let uris: Vec<String> = match map.uri_separator {
            Some(sep) => get(uri_c)
                .split(sep)
                .map(str::trim)
                .filter(|u| !u.is_empty())
                .map(str::to_string)
                .collect(),
            None => Some(get(uri_c))
                .filter(|u| !u.is_empty())
                .map(str::to_string)
                .into_iter()
                .collect(),
        };
        match index.get(id) {
            Some(&i) => records[i].image_uris.extend(uris),
            None => {
                let source = match source_c.map(get).filter(|s| !s.is_empty()) {
                    Some(s) => s.parse().map_err(|e: super::UnknownSource| TableError::Malformed {
                        line,
                        message: e.to_string(),
                    })?,
                    None => map.default_source,
                };
                let coordinates = match (lat_c, lon_c) {
                    (Some(a), Some(b)) => Coordinates::parse(get(a), get(b)),
                    _ => None,
                };
                index.insert(id.to_string(), records.len());
                records.push(OccurrenceRecord {
                    occurrence_id: id.to_string(),
                    raw_name: get(name_c).to_string(),
                    source,
                    image_uris: uris,
                    coordinates,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(TableError::EmptyInput);
    }
    Ok(records)
}

/// Writes one row per image (or one row with an empty URI for image-less
/// records) in the default column layout, tab separated.
pub fn write_occurrence_table<W: Write>(
    writer: W,
    records: &[OccurrenceRecord],
) -> std::io::Result<()> {
    let mut csv = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    csv.write_record(["id", "scientificName", "decimalLatitude", "decimalLongitude", "identifier", "source"])?;
    for r in records {
        let (lat, lon) = r
            .coordinates
            .map(|c| (c.latitude.to_string(), c.longitude.to_string()))
            .unwrap_or_default();
        let uris: Vec<&str> = if r.image_uris.is_empty() {
            vec![""]
        } else {
            r.image_uris.iter().map(String::as_str).collect()
        };
        for uri in uris {
            csv.write_record([
                r.occurrence_id.as_str(),
                &r.raw_name,
                &lat,
                &lon,
                uri,
                r.source.as_str(),
            ])?;
        }
    }
    csv.flush()
}

fn malformed(e: csv::Error) -> TableError {
    TableError::Malformed {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}
