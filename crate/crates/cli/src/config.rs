//! Config documents: a network description plus optional `[sparsity]` and
//! `[simulation]` tables whose values act as defaults for the flags.

use std::path::{Path, PathBuf};

use gridsafe_core::netmodel::{NetworkSpec, FOUR_BUS_TOML};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySection {
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub gamma_count: Option<usize>,
    pub epsilon: Option<f64>,
    pub rho: Option<f64>,
    pub max_admm_iters: Option<usize>,
    pub max_reweight_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub substeps: Option<usize>,
    pub plant: Option<String>,
    pub disturbance: Option<String>,
    pub ds: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub omega_band_hz: Option<f64>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    /// `None` for the built-in 4-bus case.
    pub path: Option<PathBuf>,
    pub sha256: String,
    pub network: NetworkSpec,
    pub sparsity: SparsitySection,
    pub simulation: SimulationSection,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    format!("{:x}", Sha256::digest(bytes))
}

pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let (text, label) = match path {
        Some(p) => (
            std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (FOUR_BUS_TOML.to_string(), "built-in 4-bus case".to_string()),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::usage(format!("{label}: {e}")))?;

    fn section<T: for<'de> Deserialize<'de> + Default>(
        table: &mut toml::Table,
        key: &str,
        label: &str,
    ) -> Result<T, CliError> {
        match table.remove(key) {
            None => Ok(T::default()),
            Some(v) => v
                .try_into()
                .map_err(|e: toml::de::Error| CliError::usage(format!("{label}: [{key}]: {e}"))),
        }
    }
    let sparsity = section(&mut table, "sparsity", &label)?;
    let simulation = section(&mut table, "simulation", &label)?;
    let network: NetworkSpec = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("{label}: {e}")))?;
    let network = network
        .validated()
        .map_err(|e| CliError::usage(format!("{label}: {e}")))?;
    Ok(LoadedConfig {
        path: path.map(Path::to_path_buf),
        sha256: sha256_hex(text.as_bytes()),
        network,
        sparsity,
        simulation,
    })
}
