//! Versioned checkpoint container shared by the relation heads and the
//! graph classifier. Checkpoints embed the ontology fingerprint and refuse
//! to load against a different ontology.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "catsg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("ontology fingerprint mismatch: checkpoint {found:#018x}, current {expected:#018x}")]
    FingerprintMismatch { expected: u64, found: u64 },
}

/// Self-describing container: kind tag, ontology fingerprint, a config
/// snapshot, and flat parameter arrays with their shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub ontology_fingerprint: u64,
    pub config: serde_json::Value,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(kind: &str, fingerprint: u64, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            ontology_fingerprint: fingerprint,
            config,
            shapes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load and verify format, kind, and ontology fingerprint.
    pub fn load(
        path: impl AsRef<Path>,
        expected_kind: &str,
        expected_fingerprint: u64,
    ) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported container {:?} v{}",
                ck.format, ck.version
            )));
        }
        if ck.kind != expected_kind {
            return Err(CheckpointError::Format(format!(
                "checkpoint kind {:?}, expected {:?}",
                ck.kind, expected_kind
            )));
        }
        if ck.ontology_fingerprint != expected_fingerprint {
            return Err(CheckpointError::FingerprintMismatch {
                expected: expected_fingerprint,
                found: ck.ontology_fingerprint,
            });
        }
        Ok(ck)
    }
}
