use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pumpnet::calibrate::Defaults;
use pumpnet::pipeline::NetworkSetup;
use pumpnet::qkd::QkdParams;
use pumpnet::stats::MeasurementSetup;
use pumpnet::ChannelGrid;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// Optional overrides read from `--config`. Command-line flags win over the
/// file, the file wins over the defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Option<ChannelGrid>,
    pub jsi: Option<MeasurementSetup>,
    pub network: Option<NetworkSetup>,
    pub qkd: Option<QkdParams>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Parse a JSON file, reporting the file and the line/column of any error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid input", path.display()))
}

pub struct RunContext {
    pub run: RunConfig,
    pub defaults: Defaults,
}

impl RunContext {
    pub fn load(config: Option<&Path>, defaults: Option<&Path>) -> Result<Self> {
        let run = match config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        let defaults = match defaults {
            Some(p) => read_json(p)?,
            None => Defaults::embedded(),
        };
        Ok(RunContext { run, defaults })
    }

    pub fn jsi_setup(&self) -> MeasurementSetup {
        let mut s = self.run.jsi.unwrap_or(self.defaults.jsi.setup);
        if let Some(g) = self.run.grid {
            s.grid = g;
        }
        s
    }

    pub fn network_setup(&self) -> NetworkSetup {
        let mut s = self.run.network.unwrap_or(self.defaults.network.setup);
        if let Some(g) = self.run.grid {
            s.grid = g;
        }
        s
    }

    pub fn qkd(&self) -> QkdParams {
        self.run.qkd.clone().unwrap_or_else(|| self.defaults.qkd.clone())
    }

    pub fn seed(&self, flag: Option<u64>) -> Option<u64> {
        flag.or(self.run.seed)
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.run.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}
