//! Ordered single-writer file emission and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bohmclock::export::{write_table, Table};
use bohmclock::{Error, Result, RunConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Keyed by path relative to the output directory.
    pub files: BTreeMap<String, FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn read_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

/// Files whose recorded checksum no longer matches, or that are missing.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter_map(|(name, entry)| match sha256_file(&dir.join(name)) {
            Ok(sum) if sum == entry.sha256 => None,
            Ok(_) => Some(format!("{name}: checksum mismatch")),
            Err(_) => Some(format!("{name}: missing or unreadable")),
        })
        .collect()
}

pub struct Emitter<'a> {
    pub dir: PathBuf,
    pub config: &'a RunConfig,
    pub plots: bool,
    command: String,
    files: Vec<PathBuf>,
}

impl<'a> Emitter<'a> {
    pub fn new(dir: &Path, config: &'a RunConfig, plots: bool, command: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            plots,
            command: command.to_string(),
            files: Vec::new(),
        })
    }

    pub fn table(&mut self, table: &Table) -> Result<()> {
        let paths = write_table(&self.dir, table, self.config)?;
        self.files.extend(paths);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(format!("{name}.json"));
        fs::write(&path, to_json(value)?)?;
        self.files.push(path);
        Ok(())
    }

    pub fn svg(&mut self, name: &str, content: String) -> Result<()> {
        if !self.plots {
            return Ok(());
        }
        let path = self.dir.join(format!("{name}.svg"));
        fs::write(&path, content)?;
        self.files.push(path);
        Ok(())
    }

    /// Records checksums of everything written, merging with an existing
    /// manifest from earlier commands in the same directory.
    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let digest = self.config.digest();
        let t = now();
        let mut manifest = match read_manifest(&self.dir)? {
            Some(m) if m.config_digest == digest => m,
            _ => RunManifest {
                tool: "bohmclock".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config_digest: digest,
                created_unix: t,
                updated_unix: t,
                files: BTreeMap::new(),
            },
        };
        manifest.updated_unix = t;
        for path in &self.files {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let entry = FileEntry {
                sha256: sha256_file(path)?,
                bytes: fs::metadata(path)?.len(),
                command: self.command.clone(),
            };
            manifest.files.insert(name, entry);
        }
        fs::write(self.dir.join(MANIFEST), to_json(&manifest)?)?;
        Ok(self.files)
    }
}
