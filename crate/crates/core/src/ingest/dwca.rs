//! Darwin Core Archive reader.
//!
//! Only the occurrence core and a single multimedia extension are read. The
//! descriptor's delimiters, quote character, header-line count and column
//! indices are honored.

use std::collections::HashMap;
use std::io::{Cursor, Read, Seek};

use thiserror::Error;
use zip::ZipArchive;

use super::{Coordinates, OccurrenceRecord, Source};

#[derive(Debug, Error)]
pub enum DwcaError {
    #[error("archive has no meta.xml descriptor")]
    MissingDescriptor,
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("data file `{0}` declared by the descriptor is not in the archive")]
    CoreFileMissing(String),
    #[error("{0} declares no identifier column to join on")]
    JoinKeyMissing(&'static str),
    #[error("duplicate occurrence id `{0}` in core")]
    DuplicateOccurrenceId(String),
    #[error("{file} line {line}: {message}")]
    Malformed {
        file: String,
        line: u64,
        message: String,
    },
    #[error("archive: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A core or extension table as declared in meta.xml.
#[derive(Debug, Clone)]
struct TableSpec {
    row_type: String,
    location: String,
    delimiter: u8,
    quote: Option<u8>,
    header_lines: usize,
    key_index: Option<usize>,
    /// Local term name to column index or constant default.
    fields: HashMap<String, FieldSource>,
}

#[derive(Debug, Clone)]
enum FieldSource {
    Column(usize),
    Constant(String),
}

impl TableSpec {
    fn value<'a>(&'a self, term: &str, row: &'a [String]) -> Option<&'a str> {
        match self.fields.get(term)? {
            FieldSource::Column(i) => row.get(*i).map(String::as_str),
            FieldSource::Constant(c) => Some(c.as_str()),
        }
    }
}

fn local_name(uri: &str) -> &str {
    uri.rsplit(['/', '#', ':']).next().unwrap_or(uri)
}

fn unescape(attr: &str) -> String {
    attr.replace("\\t", "\t")
        .replace("\\n", "\n")
        .replace("\\r", "\r")
}

fn single_byte(attr: &str, what: &str) -> Result<Option<u8>, DwcaError> {
    let value = unescape(attr);
    match value.as_bytes() {
        [] => Ok(None),
        [b] => Ok(Some(*b)),
        _ => Err(DwcaError::MalformedDescriptor(format!(
            "{what} must be a single byte, got `{attr}`"
        ))),
    }
}

fn parse_table(node: roxmltree::Node<'_, '_>, key_tag: &str) -> Result<TableSpec, DwcaError> {
    let bad = |m: String| DwcaError::MalformedDescriptor(m);
    let row_type = node.attribute("rowType").unwrap_or_default().to_string();
    let location = node
        .descendants()
        .find(|n| n.has_tag_name("location"))
        .and_then(|n| n.text())
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| bad(format!("table `{row_type}` has no files/location")))?;
    let delimiter = single_byte(node.attribute("fieldsTerminatedBy").unwrap_or(","), "fieldsTerminatedBy")?
        .ok_or_else(|| bad("fieldsTerminatedBy is empty".into()))?;
    let quote = single_byte(node.attribute("fieldsEnclosedBy").unwrap_or("\""), "fieldsEnclosedBy")?;
    let header_lines = match node.attribute("ignoreHeaderLines") {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| bad(format!("ignoreHeaderLines `{v}` is not a count")))?,
        None => 0,
    };
    let index_of = |n: roxmltree::Node<'_, '_>| -> Result<Option<usize>, DwcaError> {
        n.attribute("index")
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| bad(format!("index `{v}` is not a column number")))
            })
            .transpose()
    };

    let mut key_index = None;
    let mut fields = HashMap::new();
    for child in node.children().filter(|n| n.is_element()) {
        let tag = child.tag_name().name();
        if tag == key_tag {
            key_index = index_of(child)?;
        } else if tag == "field" {
            let term = child
                .attribute("term")
                .ok_or_else(|| bad("field without term".into()))?;
            let source = match (index_of(child)?, child.attribute("default")) {
                (Some(i), _) => FieldSource::Column(i),
                (None, Some(d)) => FieldSource::Constant(d.to_string()),
                (None, None) => return Err(bad(format!("field `{term}` has neither index nor default"))),
            };
            fields.insert(local_name(term).to_string(), source);
        }
    }
    Ok(TableSpec {
        row_type,
        location,
        delimiter,
        quote,
        header_lines,
        key_index,
        fields,
    })
}

fn is_multimedia(row_type: &str) -> bool {
    matches!(local_name(row_type), "Multimedia" | "Audubon" | "Media")
}

struct Descriptor {
    core: TableSpec,
    multimedia: Option<TableSpec>,
}

fn parse_descriptor(xml: &str) -> Result<Descriptor, DwcaError> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| DwcaError::MalformedDescriptor(e.to_string()))?;
    let root = doc.root_element();
    let core_node = root
        .children()
        .find(|n| n.has_tag_name("core"))
        .ok_or_else(|| DwcaError::MalformedDescriptor("no <core> element".into()))?;
    let core = parse_table(core_node, "id")?;
    if local_name(&core.row_type) != "Occurrence" {
        return Err(DwcaError::MalformedDescriptor(format!(
            "core row type `{}` is not an occurrence core",
            core.row_type
        )));
    }
    if !core.fields.contains_key("scientificName") {
        return Err(DwcaError::MalformedDescriptor(
            "core declares no scientificName field".into(),
        ));
    }
    let multimedia = root
        .children()
        .filter(|n| n.has_tag_name("extension"))
        .find(|n| is_multimedia(n.attribute("rowType").unwrap_or_default()))
        .map(|n| parse_table(n, "coreid"))
        .transpose()?;
    Ok(Descriptor { core, multimedia })
}

fn read_rows(spec: &TableSpec, bytes: &[u8]) -> Result<Vec<Vec<String>>, DwcaError> {
    let mut builder = csv::ReaderBuilder::new();
    builder
        .delimiter(spec.delimiter)
        .has_headers(false)
        .flexible(true);
    match spec.quote {
        Some(q) => builder.quote(q),
        None => builder.quoting(false),
    };
    let mut rows = Vec::new();
    for (i, record) in builder.from_reader(bytes).byte_records().enumerate() {
        let record = record.map_err(|e| DwcaError::Malformed {
            file: spec.location.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if i < spec.header_lines {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push(
            record
                .iter()
                .map(|f| String::from_utf8_lossy(f).trim().to_string())
                .collect(),
        );
    }
    Ok(rows)
}

fn read_entry<R: Read + Seek>(zip: &mut ZipArchive<R>, name: &str) -> Result<Option<Vec<u8>>, DwcaError> {
    match zip.by_name(name) {
        Ok(mut file) => {
            let mut buf = Vec::new();
            file.read_to_end(&mut buf)?;
            Ok(Some(buf))
        }
        Err(zip::result::ZipError::FileNotFound) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn parse_dwca_bytes(archive: &[u8], source: Source) -> Result<Vec<OccurrenceRecord>, DwcaError> {
    parse_dwca(Cursor::new(archive), source)
}

/// Reads every occurrence of the archive core, attaching the image URIs of
/// the multimedia extension. All records get `source`, since archives are
/// exported per publishing dataset.
pub fn parse_dwca<R: Read + Seek>(archive: R, source: Source) -> Result<Vec<OccurrenceRecord>, DwcaError> {
    let mut zip = ZipArchive::new(archive)?;
    let meta_name = zip
        .file_names()
        .filter(|n| *n == "meta.xml" || n.ends_with("/meta.xml"))
        .min_by_key(|n| n.len())
        .map(str::to_string)
        .ok_or(DwcaError::MissingDescriptor)?;
    let prefix = &meta_name[..meta_name.len() - "meta.xml".len()];
    let meta = read_entry(&mut zip, &meta_name)?.ok_or(DwcaError::MissingDescriptor)?;
    let descriptor = parse_descriptor(&String::from_utf8_lossy(&meta))?;

    let mut load = |spec: &TableSpec| -> Result<Vec<Vec<String>>, DwcaError> {
        let path = format!("{prefix}{}", spec.location);
        let bytes = read_entry(&mut zip, &path)?.ok_or(DwcaError::CoreFileMissing(spec.location.clone()))?;
        read_rows(spec, &bytes)
    };

    let core = &descriptor.core;
    let core_rows = load(core)?;
    let id_of = |row: &[String]| -> Result<String, DwcaError> {
        match core.key_index {
            Some(i) => Ok(row.get(i).cloned().unwrap_or_default()),
            None if descriptor.multimedia.is_none() => core
                .value("occurrenceID", row)
                .map(str::to_string)
                .ok_or(DwcaError::JoinKeyMissing("core")),
            None => Err(DwcaError::JoinKeyMissing("core")),
        }
    };

    let mut records = Vec::with_capacity(core_rows.len());
    let mut by_id: HashMap<String, usize> = HashMap::with_capacity(core_rows.len());
    for (line, row) in core_rows.iter().enumerate() {
        let occurrence_id = id_of(row)?;
        if occurrence_id.is_empty() {
            return Err(DwcaError::Malformed {
                file: core.location.clone(),
                line: (line + core.header_lines + 1) as u64,
                message: "empty occurrence id".into(),
            });
        }
        if by_id.insert(occurrence_id.clone(), records.len()).is_some() {
            return Err(DwcaError::DuplicateOccurrenceId(occurrence_id));
        }
        let coordinates = match (core.value("decimalLatitude", row), core.value("decimalLongitude", row)) {
            (Some(lat), Some(lon)) => Coordinates::parse(lat, lon),
            _ => None,
        };
        records.push(OccurrenceRecord {
            occurrence_id,
            raw_name: core.value("scientificName", row).unwrap_or_default().to_string(),
            source,
            image_uris: Vec::new(),
            coordinates,
        });
    }

    if let Some(media) = &descriptor.multimedia {
        let key = media.key_index.ok_or(DwcaError::JoinKeyMissing("multimedia extension"))?;
        for row in load(media)? {
            let kind = media.value("type", &row).unwrap_or("");
            if !kind.is_empty() && !kind.eq_ignore_ascii_case("StillImage") {
                continue;
            }
            let uri = media
                .value("identifier", &row)
                .filter(|u| !u.is_empty())
                .or_else(|| media.value("accessURI", &row))
                .unwrap_or("");
            if uri.is_empty() {
                continue;
            }
            let Some(core_id) = row.get(key) else { continue };
            if let Some(&i) = by_id.get(core_id) {
                records[i].image_uris.push(uri.to_string());
            }
        }
    }
    Ok(records)
}

const META_XML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<archive xmlns="http://rs.tdwg.org/dwc/text/" metadata="eml.xml">
  <core encoding="UTF-8" fieldsTerminatedBy="\t" linesTerminatedBy="\n" fieldsEnclosedBy="" ignoreHeaderLines="1" rowType="http://rs.tdwg.org/dwc/terms/Occurrence">
    <files><location>occurrence.txt</location></files>
    <id index="0"/>
    <field index="0" term="http://rs.tdwg.org/dwc/terms/occurrenceID"/>
    <field index="1" term="http://rs.tdwg.org/dwc/terms/scientificName"/>
    <field index="2" term="http://rs.tdwg.org/dwc/terms/decimalLatitude"/>
    <field index="3" term="http://rs.tdwg.org/dwc/terms/decimalLongitude"/>
  </core>
  <extension encoding="UTF-8" fieldsTerminatedBy="\t" linesTerminatedBy="\n" fieldsEnclosedBy="" ignoreHeaderLines="1" rowType="http://rs.gbif.org/terms/1.0/Multimedia">
    <files><location>multimedia.txt</location></files>
    <coreid index="0"/>
    <field index="1" term="http://purl.org/dc/terms/type"/>
    <field index="2" term="http://purl.org/dc/terms/identifier"/>
  </extension>
</archive>
"#;

/// Writes records as a minimal archive: tab-separated occurrence core and a
/// multimedia extension. Field values must not contain tabs or newlines.
pub fn write_dwca<W: std::io::Write + Seek>(writer: W, records: &[OccurrenceRecord]) -> Result<(), DwcaError> {
    use std::io::Write;
    let mut core = String::from("gbifID\tscientificName\tdecimalLatitude\tdecimalLongitude\n");
    let mut media = String::from("gbifID\ttype\tidentifier\n");
    for r in records {
        let (lat, lon) = r
            .coordinates
            .map(|c| (c.latitude.to_string(), c.longitude.to_string()))
            .unwrap_or_default();
        core.push_str(&format!("{}\t{}\t{lat}\t{lon}\n", r.occurrence_id, r.raw_name));
        for uri in &r.image_uris {
            media.push_str(&format!("{}\tStillImage\t{uri}\n", r.occurrence_id));
        }
    }
    let mut zip = zip::ZipWriter::new(writer);
    let options = zip::write::SimpleFileOptions::default();
    for (name, body) in [("meta.xml", META_XML), ("occurrence.txt", &core), ("multimedia.txt", &media)] {
        zip.start_file(name, options)?;
        zip.write_all(body.as_bytes())?;
    }
    zip.finish()?;
    Ok(())
}
