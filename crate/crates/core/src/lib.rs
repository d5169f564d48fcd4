//! Spiking policy networks whose synaptic connections, rather than weights,
//! are evolved by a genetic algorithm with mirrored sampling, together with
//! operation-count energy accounting against a dense policy network.

pub mod checkpoint;
pub mod energy;
pub mod env;
pub mod error;
pub mod evolution;
pub mod rng;
pub mod spiking;

pub use error::{Error, Result};
pub use evolution::{GaConfig, Genome, GenomeMode};
pub use spiking::{NetworkShape, NeuronConfig, SpnModel, WeightInit};
