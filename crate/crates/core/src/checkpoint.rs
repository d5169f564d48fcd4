//! Elite checkpoints: JSON documents carrying everything needed to rebuild
//! and re-run a policy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvFactory, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::evolution::{check_compatible, mean_std, GaConfig, Genome, SpnPolicy};
use crate::rng::{Purpose, StreamId};
use crate::spiking::{FixedWeights, NetworkShape, NeuronConfig, SpikeTally, SpnModel, WeightInit};

pub const FORMAT: &str = "spn-elite-checkpoint";
pub const VERSION: u32 = 1;
/// Weight matrices up to this many synapses are stored inline.
pub const INLINE_WEIGHT_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvSpec,
    pub shape: NetworkShape,
    pub neuron: NeuronConfig,
    pub ga: GaConfig,
    pub weight_init: WeightInit,
    pub weight_seed: u64,
    /// Present for small networks; otherwise regenerated from the seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<FixedWeights>,
    pub genome: Genome,
    pub run: usize,
    pub generation: usize,
    pub elite_id: usize,
    pub elite_mean_return: f64,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env: EnvSpec,
        model: &SpnModel,
        ga: GaConfig,
        genome: Genome,
        run: usize,
        generation: usize,
        elite_id: usize,
        elite_mean_return: f64,
    ) -> Self {
        let shape = model.shape();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            env,
            shape,
            neuron: model.neuron,
            ga,
            weight_init: model.weight_init,
            weight_seed: model.weight_seed,
            weights: (shape.synapses() <= INLINE_WEIGHT_LIMIT).then(|| model.weights.clone()),
            genome,
            run,
            generation,
            elite_id,
            elite_mean_return,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        self.shape.validate()?;
        self.neuron.validate()?;
        if self.genome.values.len() != self.shape.synapses() {
            return Err(Error::Shape(format!(
                "genome has {} values, shape {} needs {}",
                self.genome.values.len(),
                self.shape,
                self.shape.synapses()
            )));
        }
        if !self.genome.is_finite() {
            return Err(Error::NonFinite("checkpoint genome"));
        }
        if let Some(w) = &self.weights {
            if w.shape() != self.shape {
                return Err(Error::Shape(format!(
                    "stored weights are {}, checkpoint shape is {}",
                    w.shape(),
                    self.shape
                )));
            }
            FixedWeights::new(w.w1.clone(), w.w2.clone())?;
        }
        Ok(())
    }

    /// Rebuilds the model, preferring inline weights over the seed.
    pub fn model(&self) -> Result<SpnModel> {
        let mut model =
            SpnModel::with_init(self.shape, self.neuron, self.weight_init, self.weight_seed)?;
        if let Some(w) = &self.weights {
            model.weights = w.clone();
        }
        Ok(model)
    }

    /// Runs `episodes` fresh episodes with the checkpointed policy.
    pub fn evaluate(
        &self,
        factory: &dyn EnvFactory,
        episodes: usize,
        seed: u64,
    ) -> Result<EvalReport> {
        if episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        let spec = factory.spec();
        check_compatible(self.shape, spec).map_err(|_| {
            Error::Shape(format!(
                "checkpoint was trained on {} (obs_dim {}, {} actions, shape {}) but {} has obs_dim {} and {} actions",
                self.env.name,
                self.env.obs_dim,
                self.env.action.dim(),
                self.shape,
                spec.name,
                spec.obs_dim,
                spec.action.dim()
            ))
        })?;
        if spec.action.readout() != self.env.action.readout() {
            return Err(Error::Shape(format!(
                "checkpoint action space {:?} does not match {:?} of {}",
                self.env.action, spec.action, spec.name
            )));
        }
        let model = self.model()?;
        let net = self.genome.network(&model, self.ga.score_threshold)?;
        let mut env: Box<dyn Environment> = factory.make()?;
        let mut returns = Vec::with_capacity(episodes);
        let mut lengths = Vec::with_capacity(episodes);
        let mut tally = SpikeTally::default();
        for episode in 0..episodes {
            let mut policy = SpnPolicy::new(net.clone(), model.neuron, spec.action.readout());
            let ep_seed = StreamId::new(seed, 0, episode as u64, Purpose::Evaluation).key();
            let ep = crate::env::rollout(env.as_mut(), &mut policy, ep_seed, false)?;
            returns.push(ep.total_return);
            lengths.push(ep.length);
            tally.merge(policy.tally);
        }
        let (mean, std) = mean_std(&returns);
        Ok(EvalReport {
            episodes,
            mean_return: mean,
            std_return: std,
            returns,
            lengths,
            spike_rate: crate::energy::measure_rate(&tally, self.shape.h)?,
            tally,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    /// Measured over these episodes only.
    pub spike_rate: f64,
    pub tally: SpikeTally,
}
