//! Optional run-config files (TOML or JSON) and flag overrides.
//!
//! Precedence, lowest first: built-in defaults, the section of the file
//! (`[synth]`, `[train]`, ...), top-level `seed`/`out`/`data` keys in the
//! file, command-line flags.

use std::path::{Path, PathBuf};

use cecf_core::{SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub train: Option<TrainConfig>,
    pub sweep: Option<SweepSection>,
    pub analyze: Option<AnalyzeSection>,
    pub gradcheck: Option<GradcheckSection>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub checkpoint: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub samples: Option<usize>,
    pub permutations: Option<usize>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    pub epsilon: Option<f64>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            context: format!("reading config {}", path.display()),
            source,
        })?;
        let bad = |e: String| CliError::Usage(format!("config {}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| bad(e.to_string())),
        }
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Picks the first present value, or fails with a usage error naming `what`.
pub fn require<T>(what: &str, options: impl IntoIterator<Item = Option<T>>) -> Result<T, CliError> {
    options
        .into_iter()
        .flatten()
        .next()
        .ok_or_else(|| CliError::Usage(format!("missing {what} (flag or config file)")))
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub const DEFAULT_GAMMAS: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

/// What gets echoed to `config.json` before a command runs.
#[derive(Debug, Serialize)]
pub struct Echo<'a, T: Serialize> {
    pub command: &'a str,
    #[serde(flatten)]
    pub settings: T,
}
