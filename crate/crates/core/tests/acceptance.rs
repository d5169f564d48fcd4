//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, then exits nonzero if any
//! criterion failed.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use spn_core::energy::{
    data_efficiency, dpn_inference_energy, optimization_energy, EfficiencyInputs, EnergyConstants,
    OptimizationCounts,
};
use spn_core::env::cartpole::CartPoleFactory;
use spn_core::env::toy::{ToyEnv, ToyFactory};
use spn_core::env::{EnvFactory, EnvSpec, Environment, StepResult};
use spn_core::evolution::{
    init_population, rank_and_select, run_evolution, truncation_size, Evolution, FitnessRecord,
    GenerationReport,
};
use spn_core::rng::{Purpose, StreamId};
use spn_core::spiking::{
    derive_mask, fires, forward, li_membrane, lif_membrane, Action, ConnectionMask, FixedWeights,
    MaskedNetwork, Matrix, Readout, SpikeTally,
};
use spn_core::{GaConfig, GenomeMode, NetworkShape, NeuronConfig, SpnModel, WeightInit};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(got: f64, want: f64, rel: f64) -> bool {
    ((got - want) / want).abs() <= rel
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shapes() -> [(&'static str, NetworkShape); 3] {
    [
        ("HalfCheetah", NetworkShape { n: 17, h: 64, m: 6 }),
        ("Swimmer", NetworkShape { n: 8, h: 64, m: 2 }),
        (
            "HumanoidStandup",
            NetworkShape {
                n: 376,
                h: 64,
                m: 17,
            },
        ),
    ]
}

fn table2_dense_inference() -> Outcome {
    let k = EnergyConstants::default();
    let mut detail = Vec::new();
    let mut ok = true;
    for ((name, shape), (rounded, exact)) in
        shapes()
            .into_iter()
            .zip([(6.77e3, 6771.2), (2.94e3, 2944.0), (1.16e5, 115699.2)])
    {
        let e = dpn_inference_energy(shape, false, &k);
        ok &= within(e, rounded, 0.01) && within(e, exact, 1e-12);
        detail.push(format!("{name} {e} pJ"));
    }
    check(ok, detail.join(", "))
}

fn table3_optimization() -> Outcome {
    let k = EnergyConstants::default();
    let cases = [
        (1.83e7, 5.2e3, 6.16e11, 9.52e10, 6.5),
        (5.4e6, 2.41e3, 2.85e11, 1.3e10, 21.9),
        (1.2e6, 1.1e5, 1.16e13, 1.32e11, 87.9),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for ((name, shape), (ga_forward, e_spn, want_ppo, want_ga, want_ratio)) in
        shapes().into_iter().zip(cases)
    {
        let counts = OptimizationCounts {
            dpn_forward: 26_000_000,
            dpn_backward: 25_000_000,
            dvn_forward: 26_000_000,
            dvn_backward: 25_000_000,
            spn_forward: ga_forward as u64,
        };
        assert_eq!(
            counts,
            OptimizationCounts::ppo(1_000_000, 25).with_ga_forward(ga_forward as u64)
        );
        let e_dpn = dpn_inference_energy(shape, false, &k);
        let e_dvn = dpn_inference_energy(shape, true, &k);
        let (ppo, ga) = optimization_energy(&counts, e_dpn, e_dvn, e_spn);
        let ratio = ppo / ga;
        ok &= within(ppo, want_ppo, 0.01)
            && within(ga, want_ga, 0.01)
            && within(ratio, want_ratio, 0.01);
        detail.push(format!("{name} {ppo:.4e}/{ga:.4e}={ratio:.3}"));
    }
    check(ok, detail.join(", "))
}

fn table1_data_efficiency() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (g, want_e, want_gamma) in [
        (61, 18_300_000, 18.3),
        (18, 5_400_000, 5.4),
        (4, 1_200_000, 1.2),
    ] {
        let d = data_efficiency(&EfficiencyInputs::new(g, 200, 1000)).map_err(|e| e.to_string())?;
        ok &= d.per_generation == 300_000 && d.total == want_e && d.gamma == want_gamma;
        detail.push(format!(
            "G={g}: A={} E={} gamma={}",
            d.per_generation, d.total, d.gamma
        ));
    }
    check(ok, detail.join(", "))
}

fn cartpole_runs() -> Outcome {
    let cfg = GaConfig {
        stop_at_return: Some(500.0),
        ..GaConfig::default()
    };
    let shape = NetworkShape { n: 4, h: 64, m: 2 };
    let neuron = NeuronConfig::default();
    let factory = CartPoleFactory::new();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut solved = 0;
    let mut detail = Vec::new();
    for run in 0..10u64 {
        let seed = StreamId::new(0, 0, run, Purpose::RunSeed).key();
        let model = SpnModel::new(shape, neuron, seed).map_err(|e| e.to_string())?;
        let result = run_evolution(
            &cfg,
            &model,
            GenomeMode::Connections,
            &factory,
            seed,
            workers,
        )
        .map_err(|e| e.to_string())?;
        let last = result.reports.last().expect("one generation");
        if last.elite_mean >= 500.0 {
            solved += 1;
            detail.push(format!("g{}", last.generation));
        } else {
            detail.push(format!(
                "max {}",
                result
                    .reports
                    .iter()
                    .map(|r| r.elite_mean)
                    .fold(0.0, f64::max)
            ));
        }
    }
    check(
        solved >= 8,
        format!("{solved}/10 runs reached 500 [{}]", detail.join(" ")),
    )
}

/// Step-by-step reference for one input neuron feeding one LIF neuron feeding
/// one LI neuron, all unit weights.
fn reference_trace(obs: f64) -> (Vec<f64>, Vec<bool>) {
    let (g, v_th) = (0.75, 0.5);
    let (mut v1, mut v2, mut s) = (0.0f64, 0.0f64, 0.0f64);
    let mut motor = Vec::new();
    let mut spikes = Vec::new();
    for _ in 0..4 {
        v1 = g * v1 * (1.0 - s) + 1.0 * obs;
        s = if v1 > v_th { 1.0 } else { 0.0 };
        v2 = g * v2 + 1.0 * s;
        motor.push(v2);
        spikes.push(s == 1.0);
    }
    (motor, spikes)
}

fn neuron_oracle() -> Outcome {
    let shape = NetworkShape { n: 1, h: 1, m: 1 };
    let weights = FixedWeights::new(Matrix::filled(1, 1, 1.0), Matrix::filled(1, 1, 1.0))
        .map_err(|e| e.to_string())?;
    let mask = ConnectionMask::all(shape, true);
    let cfg = NeuronConfig::default();
    let net = MaskedNetwork::new(&weights, &mask).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut detail = Vec::new();
    for (obs, want_action, want_spikes) in
        [(1.0, 2.734375, vec![1, 2, 3, 4]), (0.4, 1.5625, vec![2, 4])]
    {
        let (ref_motor, ref_spikes) = reference_trace(obs);
        let trace = net.infer_traced(&[obs], &cfg).map_err(|e| e.to_string())?;
        let motor: Vec<f64> = trace.motor_potential.iter().map(|v| v[0]).collect();
        let spikes: Vec<bool> = trace.middle_spikes.iter().map(|s| s[0]).collect();
        let at: Vec<usize> = spikes
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(t, _)| t + 1)
            .collect();
        let (action, tally) = forward(&[obs], &weights, &mask, &cfg, Readout::Continuous)
            .map_err(|e| e.to_string())?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ok &= bits(&motor) == bits(&ref_motor)
            && spikes == ref_spikes
            && at == want_spikes
            && action == Action::Continuous(vec![want_action])
            && tally.middle_spikes == want_spikes.len() as u64;
        detail.push(format!(
            "obs {obs}: action {motor:?}[max], spikes at {at:?}"
        ));
    }
    check(ok, detail.join("; "))
}

fn random_case(seed: u64) -> (FixedWeights, ConnectionMask, Vec<f64>, NeuronConfig) {
    let mut rng = StreamId::new(seed, 0, 0, Purpose::Evaluation).rng();
    let shape = NetworkShape {
        n: rng.random_range(1..8),
        h: rng.random_range(1..32),
        m: rng.random_range(1..6),
    };
    let weights = FixedWeights::random(shape, WeightInit::HeUniform, seed);
    let mut scores = |r, c| {
        let data = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    };
    let (s1, s2) = (scores(shape.n, shape.h), scores(shape.h, shape.m));
    let mask = derive_mask(&s1, &s2, 0.5).unwrap();
    let obs = (0..shape.n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let cfg = NeuronConfig {
        time_window: rng.random_range(1..9),
        decay: rng.random_range(0.05..=1.0),
        v_th: rng.random_range(0.0..2.0),
        ..NeuronConfig::default()
    };
    (weights, mask, obs, cfg)
}

const CASES: u64 = 300;

fn spike_binarity() -> Outcome {
    for seed in 0..CASES {
        let (w, x, obs, cfg) = random_case(seed);
        let trace = MaskedNetwork::new(&w, &x)
            .unwrap()
            .infer_traced(&obs, &cfg)
            .unwrap();
        let h = w.shape().h;
        let mut count = 0;
        for (v, s) in trace.middle_potential.iter().zip(&trace.middle_spikes) {
            for (&v, &s) in v.iter().zip(s) {
                if s != fires(v, &cfg) {
                    return Err(format!("case {seed}: spike flag disagrees with threshold"));
                }
                count += s as usize;
            }
        }
        if count > h * cfg.time_window {
            return Err(format!("case {seed}: {count} spikes exceed h*T'"));
        }
    }
    Ok(format!("{CASES} random networks, every spike is v > v_th"))
}

fn reset_on_fire() -> Outcome {
    for seed in 0..CASES {
        let (w, x, obs, cfg) = random_case(seed);
        let trace = MaskedNetwork::new(&w, &x)
            .unwrap()
            .infer_traced(&obs, &cfg)
            .unwrap();
        let first = &trace.middle_potential[0];
        for t in 1..cfg.time_window {
            for (j, &start) in first.iter().enumerate() {
                if trace.middle_spikes[t - 1][j] && trace.middle_potential[t][j] != start {
                    return Err(format!(
                        "case {seed}: neuron {j} did not restart at step {t}"
                    ));
                }
            }
        }
    }
    Ok(format!(
        "{CASES} random networks, post-spike potential equals the input current"
    ))
}

fn li_equals_lif_without_threshold() -> Outcome {
    let mut rng = StreamId::new(7, 0, 0, Purpose::Evaluation).rng();
    for case in 0..CASES {
        let cfg = NeuronConfig {
            decay: rng.random_range(0.05..=1.0),
            v_th: f64::INFINITY,
            ..NeuronConfig::default()
        };
        let (mut lif, mut li, mut fired) = (0.0, 0.0, false);
        for _ in 0..20 {
            let input = rng.random_range(-5.0..5.0);
            lif = lif_membrane(lif, fired, input, &cfg);
            fired = fires(lif, &cfg);
            li = li_membrane(li, input, &cfg);
            if fired || lif.to_bits() != li.to_bits() {
                return Err(format!("case {case}: LIF {lif} vs LI {li}"));
            }
        }
    }
    Ok(format!("{CASES} input sequences, bitwise equal"))
}

fn mask_weight_product() -> Outcome {
    for seed in 0..CASES {
        let (w, x, obs, cfg) = random_case(seed);
        let product = |w: &Matrix, x: &Matrix<bool>| {
            let data = w
                .data
                .iter()
                .zip(&x.data)
                .map(|(&w, &x)| if x { w } else { 0.0 })
                .collect();
            Matrix::from_vec(w.rows, w.cols, data).unwrap()
        };
        let gated = FixedWeights::new(product(&w.w1, &x.x1), product(&w.w2, &x.x2)).unwrap();
        let all = ConnectionMask::all(w.shape(), true);
        let a = MaskedNetwork::new(&w, &x)
            .unwrap()
            .infer(&obs, &cfg)
            .unwrap();
        let b = MaskedNetwork::new(&gated, &all)
            .unwrap()
            .infer(&obs, &cfg)
            .unwrap();
        if a != b {
            return Err(format!("case {seed}: {a:?} vs {b:?}"));
        }
    }
    Ok(format!(
        "{CASES} random networks, identical outputs and spike counts"
    ))
}

fn mirror_pairs() -> Outcome {
    let shape = NetworkShape { n: 4, h: 64, m: 2 };
    for seed in 0..20 {
        let pop =
            init_population(&GaConfig::default(), shape, GenomeMode::Connections, seed).unwrap();
        for pair in pop.chunks(2) {
            if pair[0]
                .values
                .iter()
                .zip(&pair[1].values)
                .any(|(a, b)| a + b != 0.0)
            {
                return Err(format!("seed {seed}: a mirrored pair does not cancel"));
            }
        }
    }
    Ok("20 populations of 200, every pair sums to exactly 0".into())
}

fn truncation() -> Outcome {
    for n in 1..=400usize {
        for percent in 1..=100usize {
            let eta = percent as f64 / 100.0;
            let want = (percent * n).div_ceil(100);
            let records: Vec<FitnessRecord> = (0..n)
                .map(|id| FitnessRecord {
                    id,
                    fitness: (id * 7919 % 101) as f64,
                    episodes: 1,
                    steps: 1,
                    stream: 0,
                    tally: SpikeTally::default(),
                })
                .collect();
            if n <= 50 {
                let kept = rank_and_select(&records, eta).unwrap().len();
                if kept != want {
                    return Err(format!("N={n} eta={eta}: kept {kept}, want {want}"));
                }
            }
            if truncation_size(n, eta) != want {
                return Err(format!("N={n} eta={eta}: size {}", truncation_size(n, eta)));
            }
        }
    }
    Ok("N in 1..=400, eta in 0.01..=1.00".into())
}

/// Counts resets and steps across every environment a factory hands out.
struct Counting<F> {
    inner: F,
    resets: Arc<AtomicU64>,
    steps: Arc<AtomicU64>,
}

struct CountingEnv {
    inner: Box<dyn Environment>,
    resets: Arc<AtomicU64>,
    steps: Arc<AtomicU64>,
}

impl Environment for CountingEnv {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> spn_core::Result<Vec<f64>> {
        self.resets.fetch_add(1, Ordering::SeqCst);
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> spn_core::Result<StepResult> {
        self.steps.fetch_add(1, Ordering::SeqCst);
        self.inner.step(action)
    }
}

impl<F: EnvFactory> EnvFactory for Counting<F> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn make(&self) -> spn_core::Result<Box<dyn Environment>> {
        Ok(Box::new(CountingEnv {
            inner: self.inner.make()?,
            resets: self.resets.clone(),
            steps: self.steps.clone(),
        }))
    }
}

/// Runs an evolution and records the (resets, steps) each generation used.
fn counted_run<F: EnvFactory>(
    factory: F,
    cfg: &GaConfig,
    h: usize,
    workers: usize,
) -> Result<Vec<(GenerationReport, u64, u64)>, String> {
    let counting = Counting {
        inner: factory,
        resets: Arc::new(AtomicU64::new(0)),
        steps: Arc::new(AtomicU64::new(0)),
    };
    let spec = counting.spec().clone();
    let shape = NetworkShape {
        n: spec.obs_dim,
        h,
        m: spec.action.dim(),
    };
    let model = SpnModel::new(shape, NeuronConfig::default(), 5).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    let (mut r0, mut s0) = (0, 0);
    Evolution {
        cfg,
        model: &model,
        mode: GenomeMode::Connections,
        factory: &counting,
        seed: 5,
        workers,
    }
    .run(|o| {
        let r = counting.resets.load(Ordering::SeqCst);
        let s = counting.steps.load(Ordering::SeqCst);
        out.push((o.report.clone(), r - r0, s - s0));
        (r0, s0) = (r, s);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok(out)
}

fn elite_episodes() -> Outcome {
    let cfg = GaConfig {
        generations: 3,
        ..GaConfig::default()
    };
    let gens = counted_run(CartPoleFactory::new(), &cfg, 64, 1)?;
    for (report, resets, _) in &gens {
        let elite = *resets - cfg.population as u64;
        if elite != 100 || report.elite_episodes != 100 {
            return Err(format!(
                "generation {}: {elite} elite episodes",
                report.generation
            ));
        }
    }
    Ok("cart-pole N=200: every generation ran 200 fitness + 10x10 elite episodes".into())
}

fn step_accounting() -> Outcome {
    let t = 50u64;
    let cfg = GaConfig {
        generations: 3,
        ..GaConfig::default()
    };
    let n = cfg.population as u64;
    let full = counted_run(ToyFactory(ToyEnv::new(1.0, t as usize)), &cfg, 16, 1)?;
    let mut prev = 0;
    for (report, _, steps) in &full {
        let increment = report.cum_steps - prev;
        prev = report.cum_steps;
        if increment != n * t + 100 * t || *steps != increment {
            return Err(format!(
                "full-length generation {}: increment {increment}",
                report.generation
            ));
        }
    }
    let cart = counted_run(CartPoleFactory::new(), &cfg, 64, 1)?;
    let mut prev = 0;
    for (report, _, steps) in &cart {
        let increment = report.cum_steps - prev;
        prev = report.cum_steps;
        if *steps != increment || increment > n * 500 + 100 * 500 {
            return Err(format!(
                "cart-pole generation {}: increment {increment}, counted {steps}",
                report.generation
            ));
        }
    }
    Ok(format!("full-length increments = N*T + 100*T = {}; cart-pole increments match counted steps and stay <= bound", n * t + 100 * t))
}

fn worker_determinism() -> Outcome {
    let cfg = GaConfig {
        generations: 4,
        population: 40,
        ..GaConfig::default()
    };
    let shape = NetworkShape { n: 4, h: 32, m: 2 };
    let model = SpnModel::new(shape, NeuronConfig::default(), 17).map_err(|e| e.to_string())?;
    let factory = CartPoleFactory::new();
    let runs: Vec<_> = [1, 4, 16]
        .into_iter()
        .map(|w| run_evolution(&cfg, &model, GenomeMode::Connections, &factory, 17, w))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let bits = |r: &spn_core::evolution::EvolutionResult| {
        let reports = serde_json::to_string(&r.reports).unwrap();
        let elites: Vec<Vec<u64>> = r
            .elites
            .iter()
            .map(|g| g.values.iter().map(|v| v.to_bits()).collect())
            .collect();
        (reports, elites)
    };
    let first = bits(&runs[0]);
    check(
        runs.iter().all(|r| bits(r) == first),
        "reports and elite genomes bitwise identical for 1, 4 and 16 workers".into(),
    )
}

fn main() {
    let criteria: [Criterion; 14] = [
        (
            "dense inference energy (3 tasks, 1%)",
            table2_dense_inference,
        ),
        (
            "optimization energy and ratios (3 tasks, 1%)",
            table3_optimization,
        ),
        ("data efficiency (exact)", table1_data_efficiency),
        ("neuron dynamics oracle (bitwise)", neuron_oracle),
        ("spike binarity", spike_binarity),
        ("reset on fire", reset_on_fire),
        (
            "LI equals LIF with infinite threshold",
            li_equals_lif_without_threshold,
        ),
        ("mask equals weight product", mask_weight_product),
        ("mirrored pairs sum to zero", mirror_pairs),
        ("truncation keeps ceil(eta*N)", truncation),
        ("elite uses 10x10 extra episodes", elite_episodes),
        ("per-generation step accounting", step_accounting),
        ("determinism under 1/4/16 workers", worker_determinism),
        (
            "cart-pole: >= 8/10 runs reach 500 within 100 generations",
            cartpole_runs,
        ),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
