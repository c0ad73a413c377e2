use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::VERSION;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Failed,
    Interrupted,
}

/// Record of one command invocation, written before work starts and
/// finalized on exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub output_dir: PathBuf,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: Status,
    pub exit_code: Option<i32>,
    pub message: Option<String>,
    pub version: String,
    /// Files written, relative to `output_dir`.
    pub outputs: Vec<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            output_dir: output_dir.to_path_buf(),
            started_at: now(),
            finished_at: None,
            status: Status::Running,
            exit_code: None,
            message: None,
            version: VERSION.to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn path(&self) -> PathBuf {
        self.output_dir.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| CliError::io(&self.output_dir, e))?;
        let p = self.path();
        let tmp = p.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(self).map_err(adagcl::Error::from)?;
        std::fs::write(&tmp, body).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| CliError::io(&p, e))
    }

    pub fn finish(
        &mut self,
        status: Status,
        exit_code: i32,
        message: Option<String>,
    ) -> Result<(), CliError> {
        self.status = status;
        self.exit_code = Some(exit_code);
        self.message = message;
        self.finished_at = Some(now());
        self.write()
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(serde_json::from_slice(&bytes).map_err(adagcl::Error::from)?)
    }
}
