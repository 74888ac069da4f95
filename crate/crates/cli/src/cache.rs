//! Content-addressed stage cache.
//!
//! A stage's key hashes its name, the tool version, its configuration and the
//! bytes of every input file. The record kept under `.cache/` also holds the
//! hash of every output, so deleted or edited outputs force a rerun.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CACHE_DIR: &str = ".cache";

pub fn hash_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    io::copy(&mut f, &mut h)?;
    Ok(format!("{:x}", h.finalize()))
}

/// Accumulates everything a stage's outputs depend on.
pub struct KeyBuilder {
    hasher: Sha256,
    inputs: BTreeMap<String, String>,
}

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut hasher = Sha256::new();
        for part in [stage, env!("CARGO_PKG_VERSION")] {
            hasher.update(part.as_bytes());
            hasher.update([0]);
        }
        KeyBuilder {
            hasher,
            inputs: BTreeMap::new(),
        }
    }

    pub fn config<T: Serialize>(mut self, cfg: &T) -> Self {
        self.hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
        self.hasher.update([0]);
        self
    }

    /// Adds a file under a stable name (not its absolute path).
    pub fn input(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.inputs.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn finish(self) -> (String, BTreeMap<String, String>) {
        let mut h = self.hasher;
        for (name, digest) in &self.inputs {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update([0]);
        }
        (format!("{:x}", h.finalize()), self.inputs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    /// Output path relative to the run directory, and its content hash.
    pub outputs: BTreeMap<String, String>,
}

fn record_path(run: &Path, stage: &str) -> PathBuf {
    run.join(CACHE_DIR).join(format!("{stage}.json"))
}

pub fn load_record(run: &Path, stage: &str) -> Option<StageRecord> {
    let text = std::fs::read_to_string(record_path(run, stage)).ok()?;
    serde_json::from_str(&text).ok()
}

/// True when the stored record has `key` and every recorded output is intact.
pub fn is_fresh(run: &Path, stage: &str, key: &str) -> bool {
    let Some(rec) = load_record(run, stage) else {
        return false;
    };
    rec.key == key
        && rec
            .outputs
            .iter()
            .all(|(rel, digest)| hash_file(&run.join(rel)).is_ok_and(|d| &d == digest))
}

pub fn store_record(run: &Path, stage: &str, key: &str, outputs: &[PathBuf]) -> io::Result<StageRecord> {
    let mut hashes = BTreeMap::new();
    for rel in outputs {
        hashes.insert(rel.to_string_lossy().replace('\\', "/"), hash_file(&run.join(rel))?);
    }
    let rec = StageRecord {
        stage: stage.to_string(),
        key: key.to_string(),
        outputs: hashes,
    };
    let path = record_path(run, stage);
    std::fs::create_dir_all(path.parent().expect("cache dir"))?;
    let mut text = serde_json::to_string_pretty(&rec).expect("record serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(hash_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn key_depends_on_config_and_input_bytes_not_location() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        std::fs::write(&a, b"one").unwrap();
        std::fs::write(&b, b"one").unwrap();
        let key = |path: &Path, cfg: u32| {
            let mut k = KeyBuilder::new("s").config(&cfg);
            k.input("x", path).unwrap();
            k.finish().0
        };
        assert_eq!(key(&a, 1), key(&b, 1));
        assert_ne!(key(&a, 1), key(&a, 2));
        std::fs::write(&b, b"two").unwrap();
        assert_ne!(key(&a, 1), key(&b, 1));
    }

    #[test]
    fn record_goes_stale_when_an_output_changes() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path();
        std::fs::write(run.join("out.txt"), b"data").unwrap();
        store_record(run, "s", "k1", &[PathBuf::from("out.txt")]).unwrap();
        assert!(is_fresh(run, "s", "k1"));
        assert!(!is_fresh(run, "s", "k2"));
        std::fs::write(run.join("out.txt"), b"edited").unwrap();
        assert!(!is_fresh(run, "s", "k1"));
        std::fs::remove_file(run.join("out.txt")).unwrap();
        assert!(!is_fresh(run, "s", "k1"));
        assert!(!is_fresh(run, "missing", "k1"));
    }
}
