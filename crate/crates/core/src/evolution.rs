//! Genetic algorithm over spiking-network genomes.
//!
//! Each generation: build the population (mirrored perturbations of zero in
//! generation 0, mirrored mutations of truncation-selected parents after),
//! score every individual on one episode, rank, re-evaluate the top
//! candidates on fresh episodes to pick the generation's elite, and keep the
//! top fraction as the next parent pool.
//!
//! All randomness comes from [`StreamId`]s keyed by (seed, generation,
//! index), and per-individual results are merged by index, so reports do not
//! depend on the worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{rollout, EnvFactory, Environment, Policy};
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamId, StreamRng};
use crate::spiking::{
    derive_mask, Action, ConnectionMask, FixedWeights, MaskedNetwork, Matrix, NetworkShape,
    NeuronConfig, Readout, SpikeTally, SpnModel,
};

/// What the genome values mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenomeMode {
    /// Connection scores thresholded into a mask over the fixed weights.
    #[default]
    Connections,
    /// The weights themselves, with every synapse connected.
    Weights,
}

/// Flat parameter vector: the n x h block (row-major) followed by the h x m
/// block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub mode: GenomeMode,
    pub values: Vec<f64>,
}

impl Genome {
    pub fn zeros(shape: NetworkShape, mode: GenomeMode) -> Self {
        Genome {
            mode,
            values: vec![0.0; shape.synapses()],
        }
    }

    /// Splits into the two layer matrices.
    pub fn layers(&self, shape: NetworkShape) -> Result<(Matrix, Matrix)> {
        if self.values.len() != shape.synapses() {
            return Err(Error::Shape(format!(
                "genome has {} values, network {shape} needs {}",
                self.values.len(),
                shape.synapses()
            )));
        }
        let (first, second) = self.values.split_at(shape.n * shape.h);
        Ok((
            Matrix::from_vec(shape.n, shape.h, first.to_vec())?,
            Matrix::from_vec(shape.h, shape.m, second.to_vec())?,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Builds the runnable network this genome describes on top of `model`.
    pub fn network(&self, model: &SpnModel, score_threshold: f64) -> Result<MaskedNetwork> {
        let shape = model.shape();
        if !self.is_finite() {
            return Err(Error::NonFinite("genome"));
        }
        let (a, b) = self.layers(shape)?;
        match self.mode {
            GenomeMode::Connections => {
                let mask = derive_mask(&a, &b, score_threshold)?;
                MaskedNetwork::new(&model.weights, &mask)
            }
            GenomeMode::Weights => {
                let weights = FixedWeights::new(a, b)?;
                MaskedNetwork::new(&weights, &ConnectionMask::all(shape, true))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub generations: usize,
    /// Must be even: individuals come in mirrored pairs.
    pub population: usize,
    pub sigma: f64,
    /// Fraction of the ranked population kept as parents.
    pub truncation: f64,
    pub score_threshold: f64,
    pub elite_candidates: usize,
    pub elite_episodes: usize,
    pub fitness_episodes: usize,
    /// Stop early once a generation's elite mean return reaches this value.
    pub stop_at_return: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            generations: 100,
            population: 200,
            sigma: 0.01,
            truncation: 0.25,
            score_threshold: 0.5,
            elite_candidates: 10,
            elite_episodes: 10,
            fitness_episodes: 1,
            stop_at_return: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.generations == 0 {
            return fail("generations must be >= 1".into());
        }
        if self.population == 0 || !self.population.is_multiple_of(2) {
            return fail(format!(
                "population must be a positive even number, got {}",
                self.population
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return fail(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.truncation > 0.0 && self.truncation <= 1.0) {
            return fail(format!(
                "truncation ratio must lie in (0, 1], got {}",
                self.truncation
            ));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return fail(format!(
                "score threshold must lie in (0, 1), got {}",
                self.score_threshold
            ));
        }
        if self.elite_candidates == 0 || self.elite_candidates > self.population {
            return fail(format!(
                "elite_candidates must lie in 1..={}, got {}",
                self.population, self.elite_candidates
            ));
        }
        if self.elite_episodes == 0 || self.fitness_episodes == 0 {
            return fail("episode counts must be >= 1".into());
        }
        Ok(())
    }

    pub fn parent_count(&self) -> usize {
        truncation_size(self.population, self.truncation)
    }
}

/// `ceil(ratio * n)`, at least 1 and at most `n`.
pub fn truncation_size(n: usize, ratio: f64) -> usize {
    // The small slack keeps products like 0.1 * 30 = 3.0000000000000004 at 3.
    let k = (ratio * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub id: usize,
    /// Mean return over the evaluated episodes.
    pub fitness: f64,
    pub episodes: usize,
    /// Environment steps consumed by all evaluated episodes.
    pub steps: u64,
    /// Key of the stream the episode seeds came from.
    pub stream: u64,
    pub tally: SpikeTally,
}

/// Spiking network acting as an environment policy, counting spikes as it goes.
#[derive(Debug, Clone)]
pub struct SpnPolicy {
    net: MaskedNetwork,
    neuron: NeuronConfig,
    readout: Readout,
    pub tally: SpikeTally,
}

impl SpnPolicy {
    pub fn new(net: MaskedNetwork, neuron: NeuronConfig, readout: Readout) -> Self {
        SpnPolicy {
            net,
            neuron,
            readout,
            tally: SpikeTally::default(),
        }
    }
}

impl Policy for SpnPolicy {
    fn act(&mut self, obs: &[f64]) -> Result<Action> {
        let (motor, spikes) = self.net.infer(obs, &self.neuron)?;
        self.tally.middle_spikes += spikes;
        self.tally.inferences += 1;
        Ok(Action::decode(&motor, self.readout))
    }
}

/// Checks that a network shape fits an environment's observation and action
/// spaces.
pub fn check_compatible(shape: NetworkShape, spec: &crate::env::EnvSpec) -> Result<()> {
    if shape.n != spec.obs_dim || shape.m != spec.action.dim() {
        return Err(Error::Shape(format!(
            "network {shape} expects obs_dim {} and {} actions, environment {} has obs_dim {} and {} actions",
            shape.n,
            shape.m,
            spec.name,
            spec.obs_dim,
            spec.action.dim()
        )));
    }
    Ok(())
}

/// Generation-0 population: `population / 2` mirrored pairs `(+sigma*eps,
/// -sigma*eps)` with `eps ~ N(0, I)` drawn from the pair's own stream.
pub fn init_population(
    cfg: &GaConfig,
    shape: NetworkShape,
    mode: GenomeMode,
    seed: u64,
) -> Result<Vec<Genome>> {
    if !cfg.population.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "population must be even for mirrored sampling, got {}",
            cfg.population
        )));
    }
    let zero = Genome::zeros(shape, mode);
    let mut population = Vec::with_capacity(cfg.population);
    for pair in 0..cfg.population / 2 {
        let mut rng = StreamId::new(seed, 0, pair as u64, Purpose::Perturbation).rng();
        let (plus, minus) = mutate(&zero, cfg.sigma, &mut rng);
        population.push(plus);
        population.push(minus);
    }
    Ok(population)
}

/// Mirrored mutation: `(parent + sigma*eps, parent - sigma*eps)`.
pub fn mutate(parent: &Genome, sigma: f64, rng: &mut impl Rng) -> (Genome, Genome) {
    let mut plus = parent.clone();
    let mut minus = parent.clone();
    for ((p, m), &base) in plus
        .values
        .iter_mut()
        .zip(minus.values.iter_mut())
        .zip(&parent.values)
    {
        let eps: f64 = rng.sample(StandardNormal);
        let delta = sigma * eps;
        *p = base + delta;
        *m = base - delta;
    }
    (plus, minus)
}

/// Next population from the parent pool. One parent draw per child pair,
/// uniform with replacement, from the generation's parent-draw stream.
pub fn vary(parents: &[Genome], cfg: &GaConfig, seed: u64, generation: u64) -> Result<Vec<Genome>> {
    if parents.is_empty() {
        return Err(Error::Config("cannot vary an empty parent pool".into()));
    }
    let mut draws = StreamId::new(seed, generation, 0, Purpose::ParentDraw).rng();
    let mut population = Vec::with_capacity(cfg.population);
    for pair in 0..cfg.population / 2 {
        let parent = &parents[draws.random_range(0..parents.len())];
        let mut rng = StreamId::new(seed, generation, pair as u64, Purpose::Perturbation).rng();
        let (plus, minus) = mutate(parent, cfg.sigma, &mut rng);
        population.push(plus);
        population.push(minus);
    }
    Ok(population)
}

/// Runs `episodes` episodes of the genome's policy with seeds drawn from
/// `stream`, returning the mean return.
pub fn evaluate(
    id: usize,
    genome: &Genome,
    model: &SpnModel,
    env: &mut dyn Environment,
    score_threshold: f64,
    episodes: usize,
    stream: StreamId,
) -> Result<FitnessRecord> {
    if episodes == 0 {
        return Err(Error::Config("need at least one episode".into()));
    }
    let readout = env.spec().action.readout();
    let mut policy = SpnPolicy::new(
        genome.network(model, score_threshold)?,
        model.neuron,
        readout,
    );
    let mut rng: StreamRng = stream.rng();
    let mut total = 0.0;
    let mut steps = 0u64;
    for episode in 0..episodes {
        let seed: u64 = rng.random();
        let ep = rollout(env, &mut policy, seed, false).map_err(|e| Error::Episode {
            context: format!("individual {id}"),
            episode,
            source: Box::new(e),
        })?;
        total += ep.total_return;
        steps += ep.length as u64;
    }
    Ok(FitnessRecord {
        id,
        fitness: total / episodes as f64,
        episodes,
        steps,
        stream: stream.key(),
        tally: policy.tally,
    })
}

/// Record indices ordered by fitness, best first; equal fitness goes to the
/// lower id.
pub fn ranking(records: &[FitnessRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .fitness
            .total_cmp(&records[a].fitness)
            .then(records[a].id.cmp(&records[b].id))
    });
    order
}

/// Ids of the `ceil(truncation * N)` best records, best first.
pub fn rank_and_select(records: &[FitnessRecord], truncation: f64) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Err(Error::Config(
            "cannot select from an empty population".into(),
        ));
    }
    let keep = truncation_size(records.len(), truncation);
    Ok(ranking(records)
        .into_iter()
        .take(keep)
        .map(|i| records[i].id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteOutcome {
    pub id: usize,
    pub mean_return: f64,
    /// One record per candidate, in the order given.
    pub candidates: Vec<FitnessRecord>,
    pub steps: u64,
    pub episodes: usize,
    pub tally: SpikeTally,
}

/// Re-evaluates each candidate on `episodes` fresh episodes (its own stream)
/// and returns the one with the highest mean; ties go to the lowest id.
#[allow(clippy::too_many_arguments)]
pub fn select_elite(
    candidates: &[(usize, &Genome)],
    model: &SpnModel,
    envs: &mut [Box<dyn Environment>],
    cfg: &GaConfig,
    seed: u64,
    generation: u64,
) -> Result<EliteOutcome> {
    if candidates.len() < cfg.elite_candidates {
        return Err(Error::Config(format!(
            "need {} elite candidates, population offered {}",
            cfg.elite_candidates,
            candidates.len()
        )));
    }
    let candidates = &candidates[..cfg.elite_candidates];
    let records = parallel_map(envs, candidates, |env, &(id, genome)| {
        let stream = StreamId::new(seed, generation, id as u64, Purpose::EliteEpisode);
        evaluate(
            id,
            genome,
            model,
            env,
            cfg.score_threshold,
            cfg.elite_episodes,
            stream,
        )
    })?;
    let best = records
        .iter()
        .reduce(|best, r| {
            if r.fitness > best.fitness || (r.fitness == best.fitness && r.id < best.id) {
                r
            } else {
                best
            }
        })
        .expect("at least one candidate");
    Ok(EliteOutcome {
        id: best.id,
        mean_return: best.fitness,
        steps: records.iter().map(|r| r.steps).sum(),
        episodes: records.iter().map(|r| r.episodes).sum(),
        tally: records.iter().map(|r| r.tally).sum(),
        candidates: records,
    })
}

/// Applies `f` to every item using one worker thread per environment.
/// Results come back in item order; on failure the error of the lowest
/// failing index is returned.
pub fn parallel_map<T, R, F>(envs: &mut [Box<dyn Environment>], items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&mut dyn Environment, &T) -> Result<R> + Sync,
{
    if envs.is_empty() {
        return Err(Error::Config("no environments to evaluate with".into()));
    }
    if envs.len() == 1 || items.len() <= 1 {
        let env = envs[0].as_mut();
        return items.iter().map(|item| f(env, item)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for env in envs.iter_mut().take(items.len()) {
            let (next, slots, f) = (&next, &slots, &f);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(env.as_mut(), &items[i]);
                let failed = out.is_err();
                *slots[i].lock().expect("result slot") = Some(out);
                if failed {
                    break;
                }
            });
        }
    });

    // Workers fill slots in fetch order and only stop after their own
    // failure, so any empty slot comes after an error slot.
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| match slot.into_inner().expect("result slot") {
            Some(r) => r,
            None => unreachable!("slot {i} skipped without an earlier failure"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub best_id: usize,
    pub elite_id: usize,
    pub elite_mean: f64,
    pub fitness_steps: u64,
    pub elite_steps: u64,
    pub elite_episodes: usize,
    pub cum_steps: u64,
    pub parents: Vec<usize>,
    pub tally: SpikeTally,
    /// Middle-layer spikes per neuron per inference over this generation.
    pub mean_rate: f64,
}

/// Everything the caller may want to persist after a generation.
#[derive(Debug, Clone)]
pub struct GenerationOutcome<'a> {
    pub report: &'a GenerationReport,
    pub elite: &'a Genome,
    pub records: &'a [FitnessRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub reports: Vec<GenerationReport>,
    pub elites: Vec<Genome>,
}

/// Drives one evolutionary run.
pub struct Evolution<'a> {
    pub cfg: &'a GaConfig,
    pub model: &'a SpnModel,
    pub mode: GenomeMode,
    pub factory: &'a dyn EnvFactory,
    pub seed: u64,
    pub workers: usize,
}

impl Evolution<'_> {
    /// Runs all generations, calling `observer` after each one. An error
    /// from the environment or the observer stops the run; everything the
    /// observer saw before that stays persisted.
    pub fn run(
        &self,
        mut observer: impl FnMut(&GenerationOutcome<'_>) -> Result<()>,
    ) -> Result<Vec<GenerationReport>> {
        self.cfg.validate()?;
        let shape = self.model.shape();
        check_compatible(shape, self.factory.spec())?;
        let workers = self.workers.max(1).min(self.cfg.population);
        let mut envs = (0..workers)
            .map(|_| self.factory.make())
            .collect::<Result<Vec<_>>>()?;

        let h = shape.h as f64;
        let mut reports = Vec::with_capacity(self.cfg.generations);
        let mut parents: Vec<Genome> = Vec::new();
        let mut cum_steps = 0u64;
        for generation in 0..self.cfg.generations {
            let gen = generation as u64;
            let population = if generation == 0 {
                init_population(self.cfg, shape, self.mode, self.seed)?
            } else {
                vary(&parents, self.cfg, self.seed, gen)?
            };

            let indexed: Vec<(usize, &Genome)> = population.iter().enumerate().collect();
            let records = parallel_map(&mut envs, &indexed, |env, &(id, genome)| {
                let stream = StreamId::new(self.seed, gen, id as u64, Purpose::Fitness);
                evaluate(
                    id,
                    genome,
                    self.model,
                    env,
                    self.cfg.score_threshold,
                    self.cfg.fitness_episodes,
                    stream,
                )
            })?;

            let order = ranking(&records);
            let parent_ids: Vec<usize> = order
                .iter()
                .take(self.cfg.parent_count())
                .map(|&i| records[i].id)
                .collect();
            let candidates: Vec<(usize, &Genome)> = order
                .iter()
                .take(self.cfg.elite_candidates)
                .map(|&i| (records[i].id, &population[records[i].id]))
                .collect();
            let elite = select_elite(&candidates, self.model, &mut envs, self.cfg, self.seed, gen)?;

            let fitness: Vec<f64> = records.iter().map(|r| r.fitness).collect();
            let (mean, std) = mean_std(&fitness);
            let fitness_steps: u64 = records.iter().map(|r| r.steps).sum();
            cum_steps += fitness_steps + elite.steps;
            let tally = records.iter().map(|r| r.tally).sum::<SpikeTally>() + elite.tally;
            let report = GenerationReport {
                generation,
                best: records[order[0]].fitness,
                mean,
                std,
                best_id: records[order[0]].id,
                elite_id: elite.id,
                elite_mean: elite.mean_return,
                fitness_steps,
                elite_steps: elite.steps,
                elite_episodes: elite.episodes,
                cum_steps,
                parents: parent_ids.clone(),
                tally,
                mean_rate: if tally.inferences == 0 {
                    0.0
                } else {
                    tally.middle_spikes as f64 / (h * tally.inferences as f64)
                },
            };
            observer(&GenerationOutcome {
                report: &report,
                elite: &population[elite.id],
                records: &records,
            })?;
            let reached = self
                .cfg
                .stop_at_return
                .is_some_and(|target| report.elite_mean >= target);
            reports.push(report);
            if reached {
                break;
            }
            parents = parent_ids
                .iter()
                .map(|&id| population[id].clone())
                .collect();
        }
        Ok(reports)
    }
}

/// Convenience wrapper collecting every report and elite genome.
pub fn run_evolution(
    cfg: &GaConfig,
    model: &SpnModel,
    mode: GenomeMode,
    factory: &dyn EnvFactory,
    seed: u64,
    workers: usize,
) -> Result<EvolutionResult> {
    let mut elites = Vec::new();
    let reports = Evolution {
        cfg,
        model,
        mode,
        factory,
        seed,
        workers,
    }
    .run(|outcome| {
        elites.push(outcome.elite.clone());
        Ok(())
    })?;
    Ok(EvolutionResult { reports, elites })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
