use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Content hash of one run input, computed git-style over
/// `"blob <len>\0" + bytes` with SHA-256.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(bytes);
        Self {
            name: name.to_string(),
            sha256: hex::encode(h.finalize()),
        }
    }

    /// Hash over the `name:hash` lines of all inputs.
    pub fn combined(inputs: &[InputDigest]) -> String {
        let mut h = Sha256::new();
        for i in inputs {
            h.update(format!("{}:{}\n", i.name, i.sha256).as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Fully resolved config in `key = value` form, overrides applied.
    pub config: String,
    pub config_source: String,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub input_hash: String,
    pub inputs: Vec<InputDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}
