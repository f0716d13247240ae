//! Run manifests: what was run, with which settings, on which input bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a String");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config: BTreeMap<String, Value>,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config: BTreeMap::new(),
            config_sha256: String::new(),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let digest = InputDigest { path: path.to_path_buf(), sha256: sha256_file(path)? };
        self.inputs.insert(role.to_string(), digest);
        Ok(())
    }

    /// Records the effective settings and writes the manifest next to
    /// `anchor`: `<anchor>.manifest.json` for files, `<anchor>/manifest.json`
    /// for directories.
    pub fn write(&mut self, anchor: &Path, config: &BTreeMap<String, Value>) -> Result<PathBuf, CliError> {
        let canonical = serde_json::to_string(config).expect("config is plain data");
        self.config = config.clone();
        self.config_sha256 = hex(&Sha256::digest(canonical.as_bytes()));
        let path = if anchor.is_dir() {
            anchor.join("manifest.json")
        } else {
            let mut name = anchor.as_os_str().to_os_string();
            name.push(".manifest.json");
            PathBuf::from(name)
        };
        let mut text = serde_json::to_string_pretty(self).expect("manifest is plain data");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
