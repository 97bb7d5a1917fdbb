use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Written next to every set of outputs so a run can be traced back to its
/// inputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub dataset_hash: String,
    pub timestamp: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, dataset_hash: String) -> Self {
        Self {
            command: command.to_string(),
            config,
            dataset_hash,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")
    }
}

/// `sha256:<hex>` of the dataset file and, if given, its manifest.
pub fn dataset_hash(data: &Path, manifest: Option<&Path>) -> io::Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(data)?);
    if let Some(m) = manifest {
        hasher.update(b"\0manifest\0");
        hasher.update(fs::read(m)?);
    }
    Ok(format!("sha256:{}", hex::encode(hasher.finalize())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_covers_dataset_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (a, m) = (dir.path().join("a.csv"), dir.path().join("m.json"));
        fs::write(&a, "abc").unwrap();
        fs::write(&m, "{}").unwrap();
        // sha256("abc")
        assert_eq!(
            dataset_hash(&a, None).unwrap(),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_ne!(dataset_hash(&a, None).unwrap(), dataset_hash(&a, Some(&m)).unwrap());
    }

    #[test]
    fn manifest_has_utc_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        RunManifest::new("synth", serde_json::json!({"m": 2}), "sha256:00".into()).write(dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert!(v["timestamp"].as_str().unwrap().ends_with('Z'));
        assert_eq!(v["config"]["m"], 2);
    }
}
