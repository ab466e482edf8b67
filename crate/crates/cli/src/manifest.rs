//! Self-describing record of one training run's inputs and artifacts.

use std::path::Path;
use std::time::SystemTime;

use hacbsr_core::optim::TrainConfig;
use hacbsr_core::sampling::SamplingConfig;

use crate::CliError;

/// Everything needed to reproduce a run and to locate what it wrote. Every
/// artifact file in the run directory is listed in `artifacts`, including
/// this manifest itself.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub started_utc: String,
    pub finished_utc: String,
    pub seed: u64,
    pub input: String,
    pub config: TrainConfig,
    pub sampling: SamplingConfig,
    pub artifacts: Vec<String>,
    pub outcome: String,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::io(format!("encoding {}: {e}", path.display())))?;
        std::fs::write(path, body + "\n")
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| CliError::args(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// Current wall-clock time as an RFC 3339 UTC string.
pub fn timestamp_now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}
