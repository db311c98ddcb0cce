//! Run manifests: the command line, its effective configuration, and SHA-256
//! digests of every input and output, written next to the primary output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Working directory the relative paths in `argv` resolve against.
    pub cwd: PathBuf,
    pub config: serde_json::Value,
    pub model_id: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects digests while a command runs.
#[derive(Debug, Default)]
pub struct Recorder {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub model_id: Option<String>,
}

impl Recorder {
    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Writes `bytes` to `path` and records its digest.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_file(path, bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(self, command: &str, argv: &[String], config: serde_json::Value, primary: &Path) -> CliResult<()> {
        let cwd = std::env::current_dir().map_err(|e| CliError::Io(PathBuf::from("."), e))?;
        let m = Manifest {
            tool: "atc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            cwd,
            config,
            model_id: self.model_id,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        write_file(&sidecar_path(primary), text.as_bytes())
    }
}

pub fn load(path: &Path) -> CliResult<Manifest> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Digest mismatches between the recorded map and the files on disk.
pub fn diff(recorded: &BTreeMap<String, String>, base: &Path) -> CliResult<Vec<String>> {
    let mut bad = Vec::new();
    for (p, h) in recorded {
        let path = base.join(p);
        match std::fs::read(&path) {
            Ok(b) if &sha256_hex(&b) == h => {}
            Ok(_) => bad.push(format!("{p} changed")),
            Err(e) => bad.push(format!("{p}: {e}")),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_keeps_full_name() {
        assert_eq!(sidecar_path(Path::new("out/m.atcm")), PathBuf::from("out/m.atcm.manifest.json"));
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
