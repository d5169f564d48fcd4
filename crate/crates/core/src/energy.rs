//! Operation counting and energy accounting for spiking versus dense policy
//! networks, plus the data-efficiency bookkeeping of the GA.
//!
//! Dense layers cost one multiply-accumulate (MAC) per synapse per inference.
//! Spiking layers cost one accumulate (AC) per synapse per upstream spike,
//! i.e. `rate * f_in * f_out` ACs. The sensory layer of the spiking network
//! is not spiking (it projects the raw observation), so it is charged as a
//! dense layer, once per inference: its projection does not change across
//! the time window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spiking::{NetworkShape, SpikeTally};

/// Energy per operation in picojoules (45 nm CMOS).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants {
            e_mac: 4.6,
            e_ac: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerOpCount {
    pub f_in: usize,
    pub f_out: usize,
    /// Upstream spikes per neuron per inference; 1 for dense layers.
    pub rate: f64,
}

impl LayerOpCount {
    pub fn dense(f_in: usize, f_out: usize) -> Self {
        LayerOpCount {
            f_in,
            f_out,
            rate: 1.0,
        }
    }

    pub fn ops_dense(&self) -> u64 {
        (self.f_in * self.f_out) as u64
    }

    pub fn ops(&self) -> f64 {
        self.rate * self.ops_dense() as f64
    }
}

/// Layers of the dense network with this shape. The value network has the
/// same body with a single output unit.
pub fn dense_layers(shape: NetworkShape, value_net: bool) -> [LayerOpCount; 2] {
    let out = if value_net { 1 } else { shape.m };
    [
        LayerOpCount::dense(shape.n, shape.h),
        LayerOpCount::dense(shape.h, out),
    ]
}

pub fn dpn_inference_energy(shape: NetworkShape, value_net: bool, k: &EnergyConstants) -> f64 {
    dense_layers(shape, value_net)
        .iter()
        .map(|l| l.ops() * k.e_mac)
        .sum()
}

/// Dense sensory layer at `e_mac` plus the spiking middle-to-motor layer at
/// `rate_middle * h * m * e_ac`.
pub fn spn_inference_energy(
    shape: NetworkShape,
    rate_middle: f64,
    k: &EnergyConstants,
) -> Result<f64> {
    if !(rate_middle.is_finite() && rate_middle >= 0.0) {
        return Err(Error::Config(format!(
            "spike rate must be finite and >= 0, got {rate_middle}"
        )));
    }
    let input = LayerOpCount::dense(shape.n, shape.h);
    let spiking = LayerOpCount {
        f_in: shape.h,
        f_out: shape.m,
        rate: rate_middle,
    };
    Ok(input.ops() * k.e_mac + spiking.ops() * k.e_ac)
}

/// Middle-layer spikes per neuron per inference.
pub fn measure_rate(tally: &SpikeTally, h: usize) -> Result<f64> {
    if tally.inferences == 0 {
        return Err(Error::Config("no inferences recorded".into()));
    }
    if h == 0 {
        return Err(Error::Shape("middle layer is empty".into()));
    }
    Ok(tally.middle_spikes as f64 / (h as f64 * tally.inferences as f64))
}

/// Forward and backward pass counts during optimization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationCounts {
    pub dpn_forward: u64,
    pub dpn_backward: u64,
    pub dvn_forward: u64,
    pub dvn_backward: u64,
    pub spn_forward: u64,
}

impl OptimizationCounts {
    /// PPO that collects `steps` samples (one forward of each network per
    /// sample) and then trains both networks for `epochs` passes over them.
    pub fn ppo(steps: u64, epochs: u64) -> Self {
        OptimizationCounts {
            dpn_forward: steps * (1 + epochs),
            dpn_backward: steps * epochs,
            dvn_forward: steps * (1 + epochs),
            dvn_backward: steps * epochs,
            spn_forward: 0,
        }
    }

    pub fn with_ga_forward(mut self, spn_forward: u64) -> Self {
        self.spn_forward = spn_forward;
        self
    }
}

/// `(E_ppo, E_ga)` in pJ. A backward pass costs the same as a forward pass.
pub fn optimization_energy(
    counts: &OptimizationCounts,
    e_dpn: f64,
    e_dvn: f64,
    e_spn: f64,
) -> (f64, f64) {
    let ppo = e_dpn * (counts.dpn_forward + counts.dpn_backward) as f64
        + e_dvn * (counts.dvn_forward + counts.dvn_backward) as f64;
    let ga = e_spn * counts.spn_forward as f64;
    (ppo, ga)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyInputs {
    /// Generations needed to reach the reference return.
    pub generations: u64,
    pub population: u64,
    pub episode_length: u64,
    /// Elite-confirmation episodes per generation.
    pub elite_episodes: u64,
    pub reference_steps: u64,
}

impl EfficiencyInputs {
    pub fn new(generations: u64, population: u64, episode_length: u64) -> Self {
        EfficiencyInputs {
            generations,
            population,
            episode_length,
            elite_episodes: 10 * 10,
            reference_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataEfficiency {
    /// Steps consumed per generation.
    pub per_generation: u64,
    /// Steps consumed until the reference return was reached.
    pub total: u64,
    /// `total / reference_steps`.
    pub gamma: f64,
}

pub fn data_efficiency(inputs: &EfficiencyInputs) -> Result<DataEfficiency> {
    let EfficiencyInputs {
        generations,
        population,
        episode_length,
        elite_episodes,
        reference_steps,
    } = *inputs;
    if generations == 0 || population == 0 || episode_length == 0 || reference_steps == 0 {
        return Err(Error::Config(format!(
            "data-efficiency inputs must be positive: {inputs:?}"
        )));
    }
    let per_generation = population * episode_length + elite_episodes * episode_length;
    let total = generations * per_generation;
    Ok(DataEfficiency {
        per_generation,
        total,
        gamma: total as f64 / reference_steps as f64,
    })
}

/// How the spiking network's per-inference energy is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpnEnergySource {
    /// Measured middle-layer spike rate.
    Rate(f64),
    /// A per-inference energy in pJ taken as given.
    Given(f64),
}

/// Inputs for one row of the energy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEnergy {
    pub task: String,
    pub shape: NetworkShape,
    pub spn: SpnEnergySource,
    pub counts: OptimizationCounts,
    /// Steps the GA consumed, when known; drives the gamma column.
    pub ga_steps: Option<u64>,
    #[serde(default = "default_reference_steps")]
    pub reference_steps: u64,
}

fn default_reference_steps() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub task: String,
    pub e_infer_dpn: f64,
    pub e_infer_spn: f64,
    pub infer_ratio: f64,
    pub e_optim_ppo: f64,
    pub e_optim_ga: f64,
    pub optim_ratio: f64,
    pub gamma: Option<f64>,
}

impl TaskEnergy {
    pub fn row(&self, k: &EnergyConstants) -> Result<EnergyRow> {
        self.shape.validate()?;
        let e_dpn = dpn_inference_energy(self.shape, false, k);
        let e_dvn = dpn_inference_energy(self.shape, true, k);
        let e_spn = match self.spn {
            SpnEnergySource::Rate(rate) => spn_inference_energy(self.shape, rate, k)?,
            SpnEnergySource::Given(e) if e.is_finite() && e > 0.0 => e,
            SpnEnergySource::Given(e) => {
                return Err(Error::Config(format!("invalid SPN inference energy {e}")));
            }
        };
        let (ppo, ga) = optimization_energy(&self.counts, e_dpn, e_dvn, e_spn);
        Ok(EnergyRow {
            task: self.task.clone(),
            e_infer_dpn: e_dpn,
            e_infer_spn: e_spn,
            infer_ratio: e_dpn / e_spn,
            e_optim_ppo: ppo,
            e_optim_ga: ga,
            optim_ratio: ppo / ga,
            gamma: self
                .ga_steps
                .map(|steps| steps as f64 / self.reference_steps as f64),
        })
    }
}

/// Reference comparison for the three MuJoCo tasks: PPO trained for 1e6
/// steps with 25 epochs per batch, the GA stopped at the generation where it
/// matched PPO's return (61, 18 and 4 generations of 200 individuals over
/// 1000-step episodes), and the measured per-inference SPN energies.
pub fn mujoco_reference_tasks() -> Vec<TaskEnergy> {
    let ppo = OptimizationCounts::ppo(1_000_000, 25);
    [
        ("HalfCheetah-v2", (17, 64, 6), 5.2e3, 61),
        ("Swimmer-v2", (8, 64, 2), 2.41e3, 18),
        ("HumanoidStandup-v2", (376, 64, 17), 1.1e5, 4),
    ]
    .into_iter()
    .map(|(task, (n, h, m), e_spn, generations)| {
        let steps = data_efficiency(&EfficiencyInputs::new(generations, 200, 1000))
            .expect("positive inputs")
            .total;
        TaskEnergy {
            task: task.into(),
            shape: NetworkShape { n, h, m },
            spn: SpnEnergySource::Given(e_spn),
            counts: ppo.with_ga_forward(steps),
            ga_steps: Some(steps),
            reference_steps: 1_000_000,
        }
    })
    .collect()
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "task",
    "E_infer_dpn",
    "E_infer_spn",
    "ratio",
    "E_optim_ppo",
    "E_optim_ga",
    "ratio",
    "gamma",
];

/// Whitespace-aligned table, one header line then one line per row. Energies
/// are in pJ at full precision; a missing gamma prints as `-`.
pub fn render_table(rows: &[EnergyRow]) -> String {
    let cells: Vec<Vec<String>> =
        std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
            .chain(rows.iter().map(|r| {
                vec![
                    r.task.clone(),
                    r.e_infer_dpn.to_string(),
                    r.e_infer_spn.to_string(),
                    r.infer_ratio.to_string(),
                    r.e_optim_ppo.to_string(),
                    r.e_optim_ga.to_string(),
                    r.optim_ratio.to_string(),
                    r.gamma.map_or_else(|| "-".to_string(), |g| g.to_string()),
                ]
            }))
            .collect();
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
