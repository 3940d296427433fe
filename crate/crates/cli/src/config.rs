use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use mmrag_core::training::NoisePlacement;

/// Declarative settings shared by every subcommand. Command-line flags
/// override anything set here. Remote credentials are never read from this
/// file; see `mmrag_core::pipeline::API_KEY_ENV`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub paths: Paths,
    pub retrieval: Retrieval,
    pub hnsw: Hnsw,
    pub backend: Backend,
    pub training: Training,
    pub eval: Eval,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub index: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retrieval {
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub truncation_limit: Option<usize>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hnsw {
    pub max_degree: Option<usize>,
    pub ef_construction: Option<usize>,
    pub ef_search: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backend {
    pub kind: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub seed: Option<u64>,
    pub noise_placement: Option<NoisePlacement>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub tolerance: Option<f64>,
    pub bucket_width: Option<usize>,
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
