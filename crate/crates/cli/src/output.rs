//! Atomic file output with provenance sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Written next to every output as `<file>.meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &'static str) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: None,
            inputs: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex(&Sha256::digest(bytes)),
        });
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads an input and records its digest.
pub fn read_input(path: &Path, provenance: &mut Provenance) -> anyhow::Result<Vec<u8>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    provenance.input(path, &bytes);
    Ok(bytes)
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_output(path: &Path, bytes: &[u8], provenance: &Provenance) -> anyhow::Result<()> {
    write_atomic(path, bytes)?;
    let mut meta = serde_json::to_vec_pretty(provenance)?;
    meta.push(b'\n');
    write_atomic(&sidecar(path), &meta)
}

/// Writes to `path` when given, stdout otherwise.
pub fn emit(path: Option<&Path>, bytes: &[u8], provenance: &Provenance) -> anyhow::Result<()> {
    match path {
        Some(p) => write_output(p, bytes, provenance),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
