//! Run configuration and the manifest written next to every output set.

use std::path::{Path, PathBuf};

use ethd_sim::calibration::{Compensator, SweepConfig};
use ethd_sim::device::DeviceParams;
use ethd_sim::dsp::FeatureConfig;
use ethd_sim::experiment::{Exp1Config, Exp2Config};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Fit the interaction term in two-way tables (needs replicates).
    pub interaction: bool,
    /// Permutations per pair in the one-way post-hoc comparison.
    pub n_perm: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            interaction: false,
            n_perm: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory. Not recorded in manifests, so a re-run elsewhere
    /// produces an identical artifact set.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub format: Format,
    pub device: DeviceParams,
    pub calibration: SweepConfig,
    /// Compensator used by the experiments, `k_cmd = a·k² + b·k + c`.
    pub compensator: [f64; 3],
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub analyze: FeatureConfig,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            format: Format::Csv,
            device: DeviceParams::default(),
            calibration: SweepConfig::default(),
            compensator: Compensator::reference().coeffs,
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            analyze: FeatureConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn compensator(&self) -> Compensator {
        Compensator {
            coeffs: self.compensator,
            ..Compensator::reference()
        }
    }

    /// Read a config file, or the config block of a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let block = match value.get("tool") {
            Some(_) => value
                .get("config")
                .cloned()
                .ok_or_else(|| CliError::Config("manifest has no config block".into()))?,
            None => value,
        };
        serde_json::from_value(block)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: Vec<String>, config: &RunConfig) -> Self {
        Self {
            tool: "ethd".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            seed: config.seed,
            config: config.clone(),
        }
    }
}
