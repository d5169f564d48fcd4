//! Multi-run experiments: learning-curve CSV, elite checkpoints and a summary.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spn_core::checkpoint::Checkpoint;
use spn_core::env::EnvSpec;
use spn_core::evolution::{mean_std, Evolution, GenerationReport};
use spn_core::rng::{Purpose, StreamId};
use spn_core::spiking::SpikeTally;
use spn_core::{NetworkShape, SpnModel};

use crate::config::ExperimentConfig;

pub const CSV_HEADER: [&str; 8] = [
    "run",
    "generation",
    "best",
    "mean",
    "std",
    "elite_mean",
    "cum_steps",
    "mean_rate",
];

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: usize,
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub elite_mean: f64,
    pub cum_steps: u64,
    pub mean_rate: f64,
}

impl MetricsRow {
    fn new(run: usize, r: &GenerationReport) -> Self {
        MetricsRow {
            run,
            generation: r.generation,
            best: r.best,
            mean: r.mean,
            std: r.std,
            elite_mean: r.elite_mean,
            cum_steps: r.cum_steps,
            mean_rate: r.mean_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub generations: usize,
    pub final_elite_mean: f64,
    pub best_elite_mean: f64,
    pub best_generation: usize,
    /// First generation whose elite mean reached the environment's step cap.
    pub solved_at: Option<usize>,
    pub cum_steps: u64,
    pub tally: SpikeTally,
    /// Middle-layer spikes per neuron per inference over the whole run.
    pub spike_rate: f64,
    pub best_checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub env: EnvSpec,
    pub shape: NetworkShape,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
    /// Over all runs; rates are measured, not reference values.
    pub tally: SpikeTally,
    pub spike_rate: f64,
    pub mean_cum_steps: f64,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn run_seed(master: u64, run: usize) -> u64 {
    StreamId::new(master, 0, run as u64, Purpose::RunSeed).key()
}

fn rate(tally: &SpikeTally, h: usize) -> f64 {
    if tally.inferences == 0 {
        0.0
    } else {
        tally.middle_spikes as f64 / (h as f64 * tally.inferences as f64)
    }
}

/// Runs every configured run in sequence. Progress lines go to `log`.
pub fn evolve(cfg: &ExperimentConfig, log: &mut dyn Write) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let factory = cfg
        .selector()?
        .open()
        .with_context(|| format!("opening environment {}", cfg.env))?;
    let spec = factory.spec().clone();
    let shape = cfg.shape(spec.obs_dim, spec.action.dim())?;

    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut csv = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(cfg.out_dir.join(METRICS_FILE))?;
    csv.write_record(CSV_HEADER)?;
    csv.flush()?;

    let mut runs = Vec::with_capacity(cfg.runs);
    let mut rows: Vec<MetricsRow> = Vec::new();
    for run in 0..cfg.runs {
        let seed = run_seed(cfg.seed, run);
        let model = SpnModel::with_init(shape, cfg.neuron, cfg.weight_init, seed)?;
        let run_dir = cfg.out_dir.join(format!("run_{run}"));
        std::fs::create_dir_all(&run_dir)?;
        let best_path = run_dir.join("best.json");

        let mut best: Option<(f64, usize)> = None;
        let mut tally = SpikeTally::default();
        let mut solved_at = None;
        let mut last: Option<GenerationReport> = None;
        let evolution = Evolution {
            cfg: &cfg.ga,
            model: &model,
            mode: cfg.mode,
            factory: factory.as_ref(),
            seed,
            workers: cfg.workers,
        };
        evolution
            .run(|outcome| {
                let r = outcome.report;
                let row = MetricsRow::new(run, r);
                csv.serialize(&row)
                    .map_err(|e| spn_core::Error::Io(std::io::Error::other(e)))?;
                csv.flush()?;
                rows.push(row);

                let ckpt = Checkpoint::new(
                    spec.clone(),
                    &model,
                    cfg.ga.clone(),
                    outcome.elite.clone(),
                    run,
                    r.generation,
                    r.elite_id,
                    r.elite_mean,
                );
                if cfg.checkpoint_every_generation {
                    ckpt.save(&run_dir.join(format!("gen_{:04}.json", r.generation)))?;
                }
                if best.is_none_or(|(m, _)| r.elite_mean > m) {
                    best = Some((r.elite_mean, r.generation));
                    ckpt.save(&best_path)?;
                }
                if solved_at.is_none() && r.elite_mean >= spec.max_steps as f64 {
                    solved_at = Some(r.generation);
                }
                tally.merge(r.tally);
                last = Some(r.clone());
                Ok(())
            })
            .map_err(anyhow::Error::from)
            .with_context(|| format!("run {run}"))?;

        let last = last.expect("at least one generation");
        let (best_mean, best_gen) = best.expect("at least one generation");
        writeln!(
            log,
            "run {run}: {} generations, final elite mean {}, best {} at generation {best_gen}, {} steps",
            last.generation + 1,
            last.elite_mean,
            best_mean,
            last.cum_steps
        )?;
        runs.push(RunSummary {
            run,
            seed,
            generations: last.generation + 1,
            final_elite_mean: last.elite_mean,
            best_elite_mean: best_mean,
            best_generation: best_gen,
            solved_at,
            cum_steps: last.cum_steps,
            tally,
            spike_rate: rate(&tally, shape.h),
            best_checkpoint: best_path,
        });
    }

    writeln!(log, "generation elite_mean half_std runs")?;
    for g in curve(&rows, |r| r.elite_mean) {
        writeln!(log, "{} {} {} {}", g.generation, g.mean, g.half_std, g.runs)?;
    }

    let total: SpikeTally = runs.iter().map(|r| r.tally).sum();
    let summary = ExperimentSummary {
        env: spec,
        shape,
        config: cfg.clone(),
        mean_cum_steps: runs.iter().map(|r| r.cum_steps as f64).sum::<f64>() / runs.len() as f64,
        spike_rate: rate(&total, shape.h),
        tally: total,
        runs,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(cfg.out_dir.join(SUMMARY_FILE), text)?;
    Ok(summary)
}

/// Cross-run statistics at one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub generation: usize,
    pub mean: f64,
    pub half_std: f64,
    pub runs: usize,
}

/// Mean and half the population std of `metric` across the runs that reached
/// each generation.
pub fn curve(rows: &[MetricsRow], metric: impl Fn(&MetricsRow) -> f64) -> Vec<CurvePoint> {
    let generations = rows.iter().map(|r| r.generation + 1).max().unwrap_or(0);
    (0..generations)
        .filter_map(|g| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.generation == g)
                .map(&metric)
                .collect();
            if values.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&values);
            Some(CurvePoint {
                generation: g,
                mean,
                half_std: std / 2.0,
                runs: values.len(),
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.iter().map(String::as_str).ne(CSV_HEADER) {
        anyhow::bail!(
            "{}: expected columns {}, found {}",
            path.display(),
            CSV_HEADER.join(","),
            header.join(",")
        );
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}", path.display(), i + 1)))
        .collect()
}
