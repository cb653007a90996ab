use std::path::{Path, PathBuf};

use anyhow::Context;
use phytoset::ingest::{ColumnMap, RegionFilter};
use phytoset::sampler::SamplingPolicy;
use phytoset::splitter::SplitPolicy;
use phytoset::{Config as EvalConfig, Policy};
use phytoset_service::ServiceConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub entries: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub columns: ColumnMap,
    pub region_filter: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            columns: ColumnMap::default(),
            region_filter: true,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub region: RegionFilter,
    pub sampling: SamplingPolicy,
    pub split: SplitPolicy,
    pub eval: EvalConfig,
    pub confidence: Policy,
    pub serve: ServiceConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
