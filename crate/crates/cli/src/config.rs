//! Experiment configuration. Every field has a default, so an empty file
//! describes the standard cart-pole experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spn_core::env::EnvSelector;
use spn_core::{GaConfig, GenomeMode, NetworkShape, NeuronConfig, WeightInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `cartpole`, `tcp:HOST:PORT` or `cmd:PROGRAM ARG...`.
    pub env: String,
    pub mode: GenomeMode,
    pub hidden: usize,
    pub weight_init: WeightInit,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Write the elite of every generation, not just the best one per run.
    pub checkpoint_every_generation: bool,
    pub ga: GaConfig,
    pub neuron: NeuronConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: "cartpole".into(),
            mode: GenomeMode::Connections,
            hidden: 64,
            weight_init: WeightInit::default(),
            runs: 10,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            workers: 1,
            checkpoint_every_generation: true,
            ga: GaConfig::default(),
            neuron: NeuronConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            bail!(spn_core::Error::Config("runs must be >= 1".into()));
        }
        if self.hidden == 0 {
            bail!(spn_core::Error::Config("hidden must be >= 1".into()));
        }
        self.ga.validate()?;
        self.neuron.validate()?;
        self.selector()?;
        Ok(())
    }

    pub fn selector(&self) -> Result<EnvSelector> {
        Ok(self.env.parse()?)
    }

    pub fn shape(&self, obs_dim: usize, act_dim: usize) -> Result<NetworkShape> {
        Ok(NetworkShape::new(obs_dim, self.hidden, act_dim)?)
    }
}
