//! `energy-report`: the reference table, a manually described task, or a
//! finished run directory.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use spn_core::energy::{
    data_efficiency, mujoco_reference_tasks, EfficiencyInputs, EnergyConstants, EnergyRow,
    OptimizationCounts, SpnEnergySource, TaskEnergy,
};
use spn_core::{Error, NetworkShape};

use crate::evolve::{ExperimentSummary, SUMMARY_FILE};

#[derive(Debug, Clone, Default, Args)]
pub struct EnergyArgs {
    /// Experiment directory written by `evolve`.
    #[arg(long, conflicts_with = "manual")]
    pub run_dir: Option<PathBuf>,
    /// Describe a single task with the flags below.
    #[arg(long)]
    pub manual: bool,
    #[arg(long, requires = "manual")]
    pub task: Option<String>,
    /// Network shape as `n,h,m`.
    #[arg(long, requires = "manual")]
    pub shape: Option<String>,
    /// Middle-layer spikes per neuron per inference.
    #[arg(long, conflicts_with = "e_spn")]
    pub rate: Option<f64>,
    /// Spiking-network inference energy in pJ, used as given.
    #[arg(long, requires = "manual")]
    pub e_spn: Option<f64>,
    /// Environment steps the GA consumed.
    #[arg(long, requires = "manual", conflicts_with_all = ["generations", "population", "episode_length"])]
    pub ga_steps: Option<u64>,
    #[arg(long, requires = "manual")]
    pub generations: Option<u64>,
    #[arg(long, requires = "manual")]
    pub population: Option<u64>,
    #[arg(long, requires = "manual")]
    pub episode_length: Option<u64>,
    /// Samples PPO collects.
    #[arg(long, default_value_t = 1_000_000)]
    pub ppo_steps: u64,
    /// Training passes PPO makes over its samples.
    #[arg(long, default_value_t = 25)]
    pub ppo_epochs: u64,
    #[arg(long, default_value_t = 4.6)]
    pub e_mac: f64,
    #[arg(long, default_value_t = 0.9)]
    pub e_ac: f64,
    /// Print JSON rows instead of the table.
    #[arg(long)]
    pub json: bool,
}

fn missing(what: &str) -> anyhow::Error {
    Error::Config(format!("--manual needs {what}")).into()
}

fn parse_shape(text: &str) -> Result<NetworkShape> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("shape must be n,h,m, got {text:?}")))?;
    match parts[..] {
        [n, h, m] => Ok(NetworkShape::new(n, h, m)?),
        _ => Err(Error::Config(format!("shape must be n,h,m, got {text:?}")).into()),
    }
}

fn manual_task(args: &EnergyArgs) -> Result<TaskEnergy> {
    let shape = parse_shape(args.shape.as_deref().ok_or_else(|| missing("--shape"))?)?;
    let spn = match (args.rate, args.e_spn) {
        (Some(r), None) => SpnEnergySource::Rate(r),
        (None, Some(e)) => SpnEnergySource::Given(e),
        _ => return Err(missing("one of --rate or --e-spn")),
    };
    let ga_steps = match (
        args.ga_steps,
        args.generations,
        args.population,
        args.episode_length,
    ) {
        (Some(s), ..) => s,
        (None, Some(g), Some(n), Some(t)) => {
            data_efficiency(&EfficiencyInputs::new(g, n, t))?.total
        }
        _ => {
            return Err(missing(
                "--ga-steps or all of --generations, --population and --episode-length",
            ))
        }
    };
    Ok(TaskEnergy {
        task: args.task.clone().unwrap_or_else(|| "manual".into()),
        shape,
        spn,
        counts: OptimizationCounts::ppo(args.ppo_steps, args.ppo_epochs).with_ga_forward(ga_steps),
        ga_steps: Some(ga_steps),
        reference_steps: args.ppo_steps,
    })
}

fn run_dir_task(dir: &std::path::Path, args: &EnergyArgs) -> Result<TaskEnergy> {
    let path = dir.join(SUMMARY_FILE);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: ExperimentSummary =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let ga_steps = summary.mean_cum_steps.round() as u64;
    Ok(TaskEnergy {
        task: summary.env.name,
        shape: summary.shape,
        spn: SpnEnergySource::Rate(summary.spike_rate),
        counts: OptimizationCounts::ppo(args.ppo_steps, args.ppo_epochs).with_ga_forward(ga_steps),
        ga_steps: Some(ga_steps),
        reference_steps: args.ppo_steps,
    })
}

pub fn energy_rows(args: &EnergyArgs) -> Result<Vec<EnergyRow>> {
    let k = EnergyConstants {
        e_mac: args.e_mac,
        e_ac: args.e_ac,
    };
    if !(k.e_mac > 0.0 && k.e_ac > 0.0) {
        return Err(Error::Config("energy constants must be positive".into()).into());
    }
    let tasks = if let Some(dir) = &args.run_dir {
        vec![run_dir_task(dir, args)?]
    } else if args.manual {
        vec![manual_task(args)?]
    } else {
        mujoco_reference_tasks()
    };
    tasks
        .iter()
        .map(|t| t.row(&k).map_err(anyhow::Error::from))
        .collect()
}
