//! The run manifest: everything a finished run claims about itself.
//!
//! The manifest is kept in memory, appended to as phases finish, and
//! rewritten atomically (write-to-temp then rename) after each append. All
//! fields except `timings` are deterministic functions of the config and
//! seeds; [`RunManifest::comparable_json`] strips the timings so two runs
//! can be compared byte-for-byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub round: u32,
    pub checkpoint: String,
    /// Final-epoch mean training loss of the phase, when it trained.
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundAlpha {
    pub round: u32,
    pub alpha: f64,
    /// Whether α came from automatic selection (vs a fixed config value).
    pub auto: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSizes {
    pub round: u32,
    pub pseudo_labeled: usize,
    pub consistent_source: usize,
    pub removed_source: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub round: u32,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub phase: String,
    pub round: u32,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub start_unix_ms: u64,
    pub end_unix_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub phases: Vec<PhaseRecord>,
    pub alphas: Vec<RoundAlpha>,
    pub set_sizes: Vec<RoundSizes>,
    pub removed_source_ids: Vec<RemovalRecord>,
    pub metrics: Vec<MetricRow>,
    pub warnings: Vec<String>,
    /// Wall-clock bookkeeping; excluded from determinism comparisons.
    pub timings: BTreeMap<String, PhaseTiming>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> RunManifest {
        RunManifest {
            format_version: MANIFEST_VERSION,
            config_hash,
            seed,
            phases: Vec::new(),
            alphas: Vec::new(),
            set_sizes: Vec::new(),
            removed_source_ids: Vec::new(),
            metrics: Vec::new(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Atomic rewrite: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("in-memory serialization");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    /// The manifest serialized with timings removed, for byte comparisons.
    pub fn comparable_json(&self) -> String {
        let mut clone = self.clone();
        clone.timings.clear();
        serde_json::to_string_pretty(&clone).expect("in-memory serialization")
    }
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
