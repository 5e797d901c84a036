use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lsmtune::SystemConfig;

use crate::{CliError, CliResult, Command};

/// Everything needed to re-run a command and get byte-identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: Command,
    /// The system as resolved when the command ran; replays use it instead
    /// of re-reading the system file.
    pub system: Option<SystemConfig>,
    pub seeds: Vec<u64>,
    pub rng: Option<String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &Command, system: Option<SystemConfig>, seeds: Vec<u64>, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
            system,
            rng: (!seeds.is_empty()).then(|| lsmtune::workloads::RNG_ALGORITHM.to_string()),
            seeds,
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| CliError::Usage(format!("cannot write manifest {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", path.display())))
    }
}

/// `<path>.manifest.json` next to an output file.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
