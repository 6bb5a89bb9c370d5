use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};

pub const CHECKPOINT_FORMAT: &str = "shapeflow-checkpoint";
const VERSION: u32 = 1;

/// Named parameter stores plus model metadata, saved as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `gan`, `completer`, ...
    pub kind: String,
    pub stores: BTreeMap<String, ParamStore>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: &str, stores: BTreeMap<String, ParamStore>, meta: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            stores,
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != VERSION {
            return Err(NnError::Format(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), NnError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, c.to_json())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}
