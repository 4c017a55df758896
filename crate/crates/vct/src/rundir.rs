//! Run-directory layout, the single-writer lock and the hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const COMPARE_FILE: &str = "compare.csv";
const TMP_SUFFIX: &str = ".tmp";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let p = self.path(name);
        fs::read(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn read_string(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    /// Write to a sibling temp file, then rename over the target.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.path(name);
        let tmp = self.path(&format!("{name}{TMP_SUFFIX}"));
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| CliError::io(&target, e))
    }

    pub fn lock(&self) -> Result<RunLock> {
        RunLock::acquire(&self.path(LOCK_FILE))
    }

    /// Every regular file except the manifest itself, the lock and temp files.
    fn artifact_names(&self) -> Result<Vec<String>> {
        let entries = fs::read_dir(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&self.root, e))?;
            let is_file = entry.file_type().map(|t| t.is_file()).unwrap_or(false);
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_file && name != MANIFEST_FILE && name != LOCK_FILE && !name.ends_with(TMP_SUFFIX) {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn write_manifest(&self) -> Result<Manifest> {
        let mut files = BTreeMap::new();
        for name in self.artifact_names()? {
            files.insert(name.clone(), sha256_hex(&self.read(&name)?));
        }
        let manifest = Manifest { files };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write_atomic(MANIFEST_FILE, format!("{text}\n").as_bytes())?;
        Ok(manifest)
    }

    /// Every listed file matches its hash and every artifact is listed.
    pub fn verify_manifest(&self) -> Result<Manifest> {
        let text = self.read_string(MANIFEST_FILE)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Manifest(format!("unreadable manifest: {e}")))?;
        for (name, hash) in &manifest.files {
            let bytes = self
                .read(name)
                .map_err(|_| CliError::Manifest(format!("listed file `{name}` is missing")))?;
            if &sha256_hex(&bytes) != hash {
                return Err(CliError::Manifest(format!("hash mismatch for `{name}`")));
            }
        }
        for name in self.artifact_names()? {
            if !manifest.files.contains_key(&name) {
                return Err(CliError::Manifest(format!("file `{name}` is not listed")));
            }
        }
        Ok(manifest)
    }

    pub fn finish(&self) -> Result<Manifest> {
        self.write_manifest()?;
        self.verify_manifest()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// File name to lowercase hex sha256.
    pub files: BTreeMap<String, String>,
}

/// Held for the duration of a command; removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn process_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

impl RunLock {
    fn acquire(path: &Path) -> Result<RunLock> {
        let me = std::process::id();
        match fs::OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(mut f) => {
                writeln!(f, "{me}").map_err(|e| CliError::io(path, e))?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(path)
                    .ok()
                    .and_then(|s| s.trim().parse::<u32>().ok());
                match holder {
                    Some(pid) if pid == me || process_alive(pid) => {
                        return Err(CliError::Lock(format!(
                            "{} is held by process {pid}",
                            path.display()
                        )))
                    }
                    // Stale: the holder is gone.
                    _ => fs::write(path, format!("{me}\n")).map_err(|e| CliError::io(path, e))?,
                }
            }
            Err(e) => return Err(CliError::io(path, e)),
        }
        Ok(RunLock {
            path: path.to_path_buf(),
        })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
