use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";

/// Written next to a command's outputs. `config_hash` covers the config
/// sections the command reads and the contents of its inputs, so a changed
/// config or a changed upstream artifact shows up as a different hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the command name, the serialized config parts and the input
/// file hashes.
pub fn config_hash<T: Serialize>(command: &str, parts: &T, inputs: &BTreeMap<String, String>) -> String {
    let doc = serde_json::json!({ "command": command, "config": parts, "inputs": inputs });
    sha256_hex(doc.to_string().as_bytes())
}

pub struct Stage {
    pub dir: PathBuf,
    pub command: &'static str,
    pub hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: &'static [&'static str],
}

pub enum Status {
    UpToDate,
    Run,
}

impl Stage {
    pub fn new<T: Serialize>(
        dir: PathBuf,
        command: &'static str,
        parts: &T,
        inputs: &[(&str, &Path)],
        outputs: &'static [&'static str],
    ) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        for (name, path) in inputs {
            map.insert(name.to_string(), file_hash(path)?);
        }
        Ok(Self {
            dir,
            command,
            hash: config_hash(command, parts, &map),
            inputs: map,
            outputs,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Skips when the outputs exist and were made from the same config and
    /// inputs; refuses to overwrite outputs from a different one unless
    /// `force`.
    pub fn check(&self, force: bool) -> Result<Status, Failure> {
        let existing: Vec<&str> = self.outputs.iter().copied().filter(|o| self.path(o).exists()).collect();
        if force || existing.is_empty() {
            return Ok(Status::Run);
        }
        let current = std::fs::read(self.path(MANIFEST))
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok());
        if let Some(m) = current {
            let intact = existing.len() == self.outputs.len()
                && self.outputs.iter().all(|o| {
                    m.outputs.get(*o).is_some_and(|h| file_hash(&self.path(o)).is_ok_and(|f| &f == h))
                });
            if m.config_hash == self.hash && intact {
                return Ok(Status::UpToDate);
            }
        }
        Err(Failure::Config(format!(
            "{} already holds outputs of a different configuration or inputs; pass --force to overwrite",
            self.dir.display()
        )))
    }

    pub fn finish(&self) -> Result<Manifest, Failure> {
        let mut outputs = BTreeMap::new();
        for o in self.outputs {
            outputs.insert(o.to_string(), file_hash(&self.path(o))?);
        }
        let m = Manifest {
            command: self.command.to_string(),
            config_hash: self.hash.clone(),
            inputs: self.inputs.clone(),
            outputs,
        };
        lowshot::write_json(&self.path(MANIFEST), &m)?;
        Ok(m)
    }
}
