//! Content hashes and the provenance header carried by every output file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "leakhunt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of a generated artifact: everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Named input hashes (network, databases, meters).
    pub hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Effective configuration, as JSON.
    pub config: serde_json::Value,
}

impl RunHeader {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            hashes: BTreeMap::new(),
            seed: None,
            config,
        }
    }

    pub fn with_hash(mut self, name: &str, hash: impl Into<String>) -> Self {
        self.hashes.insert(name.to_string(), hash.into());
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Comment lines (`# key: value`) for the top of a CSV file.
    pub fn to_comment_block(&self) -> String {
        let mut out = format!("# {} {}\n# command: {}\n", self.tool, self.version, self.command);
        for (k, v) in &self.hashes {
            out.push_str(&format!("# hash.{k}: {v}\n"));
        }
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        out.push_str(&format!("# config: {}\n", self.config));
        out
    }

    /// Recovers a header from the leading comment lines of a CSV file.
    pub fn parse_comment_block(text: &str) -> Option<RunHeader> {
        let mut lines = text.lines().take_while(|l| l.starts_with('#'));
        let first = lines.next()?.trim_start_matches('#').trim();
        let (tool, version) = first.split_once(' ')?;
        let mut header = RunHeader::new("", serde_json::Value::Null);
        header.tool = tool.to_string();
        header.version = version.to_string();
        for line in lines {
            let (key, value) = line.trim_start_matches('#').trim().split_once(": ")?;
            match key {
                "command" => header.command = value.to_string(),
                "seed" => header.seed = Some(value.parse().ok()?),
                "config" => header.config = serde_json::from_str(value).ok()?,
                k => {
                    let name = k.strip_prefix("hash.")?;
                    header.hashes.insert(name.to_string(), value.to_string());
                }
            }
        }
        Some(header)
    }
}

/// Strips leading `#` comment lines.
pub fn strip_comment_block(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        match rest.find('\n') {
            Some(i) => rest = &rest[i + 1..],
            None => return "",
        }
    }
    rest
}
