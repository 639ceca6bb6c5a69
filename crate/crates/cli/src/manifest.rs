use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use trajconv::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct FileFingerprint {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fingerprint(path: &Path) -> Result<FileFingerprint> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileFingerprint { path: path.display().to_string(), bytes: data.len() as u64, sha256: hex(&Sha256::digest(&data)) })
}

/// Everything needed to re-execute a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    /// Fully materialized configuration (TOML).
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub datasets: BTreeMap<String, FileFingerprint>,
    pub inputs: Vec<FileFingerprint>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "trajconv",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: None,
            seed: None,
            datasets: BTreeMap::new(),
            inputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.to_string();
        self.write(dir)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Output directory: `explicit` if given, else
/// `$TRAJCONV_RUN_ROOT/<command>-<config hash>-<timestamp>`.
pub fn run_dir(explicit: Option<&Path>, command: &str, config_text: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => {
            let root = std::env::var_os("TRAJCONV_RUN_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            let hash = hex(&Sha256::digest(format!("{command}\n{config_text}").as_bytes()));
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            let base = root.join(format!("{command}-{}-{stamp}", &hash[..12]));
            let mut dir = base.clone();
            let mut k = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
