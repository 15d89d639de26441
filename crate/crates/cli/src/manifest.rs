use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::csvio::write_bytes;
use crate::error::CliResult;

/// Record written next to every set of outputs.
///
/// `config` holds the fully resolved settings; passing the manifest back
/// via `--config` repeats the run. Wall-clock timing is kept out of it
/// (see `timing.json`) so that reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub input_digest: Option<String>,
    pub config: BTreeMap<String, Value>,
    /// Quantities computed during the run, e.g. a rule-of-thumb bandwidth.
    pub derived: BTreeMap<String, Value>,
    /// SHA-256 of each output file.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            input_digest: None,
            config: BTreeMap::new(),
            derived: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.config.insert(key.to_string(), value.into());
    }

    pub fn derive(&mut self, key: &str, value: impl Into<Value>) {
        self.derived.insert(key.to_string(), value.into());
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        write_bytes(&dir.join("manifest.json"), text.as_bytes()).map(|_| ())
    }
}
