//! Workdir layout, manifest bookkeeping, and the advisory lock.
//!
//! Layout is fixed so later commands and studies can locate prior stages:
//! datasets/, checkpoints/, reports/, transcripts/, manifest.json, .lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use super::CliError;

pub struct Workdir {
    pub root: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    /// Relative artifact path -> sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Workdir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        for sub in ["datasets", "checkpoints", "reports", "transcripts"] {
            fs::create_dir_all(root.join(sub))
                .map_err(|e| CliError::io(format!("cannot create workdir: {e}")))?;
        }
        Ok(Workdir {
            root: root.to_path_buf(),
        })
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn read_manifest(&self) -> Result<Option<Manifest>, CliError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::io(format!("cannot read manifest: {e}")))?;
        let manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::corrupt(format!("manifest parse error: {e}")))?;
        Ok(Some(manifest))
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(manifest)
            .map_err(|e| CliError::io(format!("manifest serialization: {e}")))?;
        fs::write(self.manifest_path(), text)
            .map_err(|e| CliError::io(format!("cannot write manifest: {e}")))?;
        Ok(())
    }

    /// Validates the stored config hash and returns the manifest to extend.
    pub fn manifest_for(&self, config_hash: &str, force: bool) -> Result<Manifest, CliError> {
        match self.read_manifest()? {
            None => Ok(Manifest {
                config_hash: config_hash.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                artifacts: BTreeMap::new(),
            }),
            Some(mut m) => {
                if m.config_hash != config_hash && !force {
                    return Err(CliError::config(format!(
                        "workdir was produced with a different config (hash {} vs {}); \
                         pass --force to overwrite",
                        m.config_hash, config_hash
                    )));
                }
                if m.config_hash != config_hash {
                    eprintln!(
                        "note: overwriting workdir; prior config hash {}",
                        m.config_hash
                    );
                    m.artifacts.clear();
                    m.config_hash = config_hash.to_string();
                }
                Ok(m)
            }
        }
    }

    /// Records a freshly written artifact in the manifest map.
    pub fn record(&self, manifest: &mut Manifest, path: &Path) -> Result<(), CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::io(format!("cannot hash artifact: {e}")))?;
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        manifest.artifacts.insert(rel, hex(&Sha256::digest(&bytes)));
        Ok(())
    }

    /// Verifies a previously recorded artifact against its stored checksum.
    pub fn verify(&self, manifest: &Manifest, rel: &str) -> Result<(), CliError> {
        let Some(expected) = manifest.artifacts.get(rel) else {
            return Err(CliError::data(format!(
                "artifact {rel} is not in the manifest; run the producing command first"
            )));
        };
        let bytes = fs::read(self.root.join(rel))
            .map_err(|e| CliError::io(format!("cannot read artifact {rel}: {e}")))?;
        let got = hex(&Sha256::digest(&bytes));
        if &got != expected {
            return Err(CliError::corrupt(format!(
                "artifact {rel} does not match its manifest checksum"
            )));
        }
        Ok(())
    }

    pub fn acquire_lock(&self) -> Result<LockGuard, CliError> {
        let path = self.lock_path();
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::busy(
                format!(
                    "workdir is locked by another command (remove {} if stale)",
                    path.display()
                ),
            )),
            Err(e) => Err(CliError::io(format!("cannot create lock: {e}"))),
        }
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let guard = wd.acquire_lock().unwrap();
        assert!(wd.acquire_lock().is_err());
        drop(guard);
        assert!(wd.acquire_lock().is_ok());
    }

    #[test]
    fn manifest_detects_config_drift_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let mut m = wd.manifest_for("aaa", false).unwrap();
        let artifact = wd.datasets().join("x.bin");
        fs::write(&artifact, b"hello").unwrap();
        wd.record(&mut m, &artifact).unwrap();
        wd.write_manifest(&m).unwrap();

        assert!(wd.manifest_for("bbb", false).is_err());
        assert!(wd.manifest_for("aaa", false).is_ok());
        wd.verify(&m, "datasets/x.bin").unwrap();
        fs::write(&artifact, b"tampered").unwrap();
        assert!(wd.verify(&m, "datasets/x.bin").is_err());
        assert!(wd.verify(&m, "datasets/missing.bin").is_err());
    }
}
