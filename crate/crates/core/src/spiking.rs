//! Three-layer spiking policy network: a dense sensory projection into a
//! layer of leaky integrate-and-fire (LIF) neurons, whose binary spikes drive
//! a layer of leaky integrate (LI) motor neurons read out as the action.
//!
//! Synapses are gated by a binary [`ConnectionMask`]; the weights themselves
//! are drawn once and frozen in [`FixedWeights`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamId};

/// Layer sizes: `n` observation inputs, `h` middle neurons, `m` motor neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n: usize,
    pub h: usize,
    pub m: usize,
}

impl NetworkShape {
    pub fn new(n: usize, h: usize, m: usize) -> Result<Self> {
        let shape = NetworkShape { n, h, m };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.h == 0 || self.m == 0 {
            return Err(Error::Shape(format!(
                "all layer sizes must be >= 1, got ({}, {}, {})",
                self.n, self.h, self.m
            )));
        }
        Ok(())
    }

    /// Number of synapses, which is also the genome length.
    pub fn synapses(&self) -> usize {
        self.n * self.h + self.h * self.m
    }
}

impl std::fmt::Display for NetworkShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.n, self.h, self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    /// Simulation steps per observation.
    pub time_window: usize,
    pub decay: f64,
    pub v_th: f64,
    pub v_rest: f64,
    pub v_reset: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            time_window: 4,
            decay: 0.75,
            v_th: 0.5,
            v_rest: 0.0,
            v_reset: 0.0,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_window == 0 {
            return Err(Error::Config("time_window must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        // v_th = +inf is allowed: it turns the LIF layer into an LI layer.
        if self.v_th.is_nan() || !self.v_rest.is_finite() || !self.v_reset.is_finite() {
            return Err(Error::Config("neuron potentials must be numbers".into()));
        }
        Ok(())
    }
}

/// One LIF membrane update. A neuron that fired on the previous step starts
/// from `v_reset`; otherwise it leaks toward `v_rest`.
///
/// With `v_rest = v_reset = 0` this is `g * v * (1 - s) + input`.
#[inline]
pub fn lif_membrane(v_prev: f64, fired_prev: bool, input: f64, cfg: &NeuronConfig) -> f64 {
    let v = if fired_prev { cfg.v_reset } else { v_prev };
    cfg.v_rest + cfg.decay * (v - cfg.v_rest) + input
}

/// One LI membrane update: leaky integration with no firing or reset.
#[inline]
pub fn li_membrane(v_prev: f64, input: f64, cfg: &NeuronConfig) -> f64 {
    cfg.v_rest + cfg.decay * (v_prev - cfg.v_rest) + input
}

/// Strict threshold crossing.
#[inline]
pub fn fires(v: f64, cfg: &NeuronConfig) -> bool {
    v > cfg.v_th
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T = f64> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl Matrix<f64> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Distribution of the frozen weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    #[default]
    HeUniform,
    /// `U(-1 / sqrt(fan_in), 1 / sqrt(fan_in))`.
    UniformFanIn,
}

impl WeightInit {
    pub fn bound(self, fan_in: usize) -> f64 {
        let fan_in = fan_in as f64;
        match self {
            WeightInit::HeUniform => (6.0 / fan_in).sqrt(),
            WeightInit::UniformFanIn => 1.0 / fan_in.sqrt(),
        }
    }
}

/// Frozen synaptic weights: `w1` is n x h (sensory to middle), `w2` is h x m
/// (middle to motor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedWeights {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl FixedWeights {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols != w2.rows {
            return Err(Error::Shape(format!(
                "w1 is {}x{} but w2 is {}x{}",
                w1.rows, w1.cols, w2.rows, w2.cols
            )));
        }
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::NonFinite("fixed weights"));
        }
        Ok(FixedWeights { w1, w2 })
    }

    /// Each weight drawn from `U(-bound, bound)` with the bound given by
    /// `init` and the layer's fan-in (`n` for `w1`, `h` for `w2`).
    pub fn random(shape: NetworkShape, init: WeightInit, seed: u64) -> Self {
        let mut rng = StreamId::new(seed, 0, 0, Purpose::FixedWeights).rng();
        let mut draw = |rows: usize, cols: usize| {
            let bound = init.bound(rows);
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Matrix { rows, cols, data }
        };
        let w1 = draw(shape.n, shape.h);
        let w2 = draw(shape.h, shape.m);
        FixedWeights { w1, w2 }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            n: self.w1.rows,
            h: self.w1.cols,
            m: self.w2.cols,
        }
    }
}

/// Binary synapse gates matching [`FixedWeights`] entry for entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionMask {
    pub x1: Matrix<bool>,
    pub x2: Matrix<bool>,
}

impl ConnectionMask {
    pub fn all(shape: NetworkShape, value: bool) -> Self {
        ConnectionMask {
            x1: Matrix::filled(shape.n, shape.h, value),
            x2: Matrix::filled(shape.h, shape.m, value),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            n: self.x1.rows,
            h: self.x1.cols,
            m: self.x2.cols,
        }
    }

    /// Fraction of synapses that are connected.
    pub fn density(&self) -> f64 {
        let on = self
            .x1
            .data
            .iter()
            .chain(&self.x2.data)
            .filter(|&&b| b)
            .count();
        on as f64 / (self.x1.data.len() + self.x2.data.len()) as f64
    }
}

/// Keeps a synapse iff `sigmoid(score) >= s_th`.
///
/// The comparison is done in score space against `logit(s_th)`, which is
/// exactly 0 for `s_th = 0.5`, so tiny negative scores are never rounded into
/// the kept set by `exp`.
pub fn derive_mask(scores1: &Matrix, scores2: &Matrix, s_th: f64) -> Result<ConnectionMask> {
    if scores1.cols != scores2.rows {
        return Err(Error::Shape(format!(
            "score matrices disagree on the middle size: {}x{} vs {}x{}",
            scores1.rows, scores1.cols, scores2.rows, scores2.cols
        )));
    }
    if !(s_th > 0.0 && s_th < 1.0) {
        return Err(Error::Config(format!(
            "score threshold must lie in (0, 1), got {s_th}"
        )));
    }
    let cut = (s_th / (1.0 - s_th)).ln();
    let gate = |m: &Matrix| Matrix {
        rows: m.rows,
        cols: m.cols,
        data: m.data.iter().map(|&s| s >= cut).collect(),
    };
    Ok(ConnectionMask {
        x1: gate(scores1),
        x2: gate(scores2),
    })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// How motor potentials become an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn decode(motor: &[f64], readout: Readout) -> Action {
        match readout {
            Readout::Continuous => Action::Continuous(motor.to_vec()),
            Readout::Discrete => Action::Discrete(argmax(motor)),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Middle-layer spike count over some number of inferences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTally {
    pub middle_spikes: u64,
    pub inferences: u64,
}

impl SpikeTally {
    pub fn merge(&mut self, other: SpikeTally) {
        self.middle_spikes += other.middle_spikes;
        self.inferences += other.inferences;
    }
}

impl std::ops::Add for SpikeTally {
    type Output = SpikeTally;

    fn add(mut self, rhs: SpikeTally) -> SpikeTally {
        self.merge(rhs);
        self
    }
}

impl std::iter::Sum for SpikeTally {
    fn sum<I: Iterator<Item = SpikeTally>>(iter: I) -> SpikeTally {
        iter.fold(SpikeTally::default(), |a, b| a + b)
    }
}

/// Per-step record of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub middle_potential: Vec<Vec<f64>>,
    pub middle_spikes: Vec<Vec<bool>>,
    pub motor_potential: Vec<Vec<f64>>,
}

/// Weights with the mask already applied (`W` elementwise `X`), ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedNetwork {
    shape: NetworkShape,
    w1: Matrix,
    w2: Matrix,
}

impl MaskedNetwork {
    pub fn new(weights: &FixedWeights, mask: &ConnectionMask) -> Result<Self> {
        if weights.w1.dims() != mask.x1.dims() || weights.w2.dims() != mask.x2.dims() {
            return Err(Error::Shape(format!(
                "weights {} do not match mask {}",
                weights.shape(),
                mask.shape()
            )));
        }
        let apply = |w: &Matrix, x: &Matrix<bool>| Matrix {
            rows: w.rows,
            cols: w.cols,
            data: w
                .data
                .iter()
                .zip(&x.data)
                .map(|(&w, &x)| w * if x { 1.0 } else { 0.0 })
                .collect(),
        };
        Ok(MaskedNetwork {
            shape: weights.shape(),
            w1: apply(&weights.w1, &mask.x1),
            w2: apply(&weights.w2, &mask.x2),
        })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    /// Runs one inference and returns the per-motor maximum potential over
    /// the time window, plus the middle-layer spike count.
    pub fn infer(&self, obs: &[f64], cfg: &NeuronConfig) -> Result<(Vec<f64>, u64)> {
        let mut motor_max = vec![f64::NEG_INFINITY; self.shape.m];
        let spikes = self.run(obs, cfg, |_, _, _, v2| {
            for (best, &v) in motor_max.iter_mut().zip(v2) {
                if v > *best {
                    *best = v;
                }
            }
        })?;
        Ok((motor_max, spikes))
    }

    pub fn infer_traced(&self, obs: &[f64], cfg: &NeuronConfig) -> Result<Trace> {
        let mut trace = Trace {
            middle_potential: Vec::with_capacity(cfg.time_window),
            middle_spikes: Vec::with_capacity(cfg.time_window),
            motor_potential: Vec::with_capacity(cfg.time_window),
        };
        self.run(obs, cfg, |_, v1, s1, v2| {
            trace.middle_potential.push(v1.to_vec());
            trace.middle_spikes.push(s1.to_vec());
            trace.motor_potential.push(v2.to_vec());
        })?;
        Ok(trace)
    }

    fn run(
        &self,
        obs: &[f64],
        cfg: &NeuronConfig,
        mut observe: impl FnMut(usize, &[f64], &[bool], &[f64]),
    ) -> Result<u64> {
        let NetworkShape { n, h, m } = self.shape;
        if obs.len() != n {
            return Err(Error::Shape(format!(
                "observation has {} entries, network expects {n}",
                obs.len()
            )));
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }

        // The observation is the same at every step, so its projection is too.
        let mut current = vec![0.0; h];
        for (i, &o) in obs.iter().enumerate() {
            for (c, &w) in current.iter_mut().zip(self.w1.row(i)) {
                *c += w * o;
            }
        }

        let mut v1 = vec![0.0; h];
        let mut s1 = vec![false; h];
        let mut v2 = vec![0.0; m];
        let mut spikes = 0u64;
        for tau in 0..cfg.time_window {
            for j in 0..h {
                v1[j] = lif_membrane(v1[j], s1[j], current[j], cfg);
                s1[j] = fires(v1[j], cfg);
            }
            let mut motor_in = vec![0.0; m];
            for (j, _) in s1.iter().enumerate().filter(|(_, &s)| s) {
                spikes += 1;
                for (acc, &w) in motor_in.iter_mut().zip(self.w2.row(j)) {
                    *acc += w;
                }
            }
            for (v, input) in v2.iter_mut().zip(motor_in) {
                *v = li_membrane(*v, input, cfg);
            }
            observe(tau, &v1, &s1, &v2);
        }
        Ok(spikes)
    }
}

/// Single-observation inference from scratch (fresh membranes).
pub fn forward(
    obs: &[f64],
    weights: &FixedWeights,
    mask: &ConnectionMask,
    cfg: &NeuronConfig,
    readout: Readout,
) -> Result<(Action, SpikeTally)> {
    let net = MaskedNetwork::new(weights, mask)?;
    let (motor, spikes) = net.infer(obs, cfg)?;
    Ok((
        Action::decode(&motor, readout),
        SpikeTally {
            middle_spikes: spikes,
            inferences: 1,
        },
    ))
}

/// `tanh(W2^T relu(W1^T obs))`: the dense ReLU/Tanh network with the same
/// layer sizes, used as an operation-count reference.
pub fn dense_reference_forward(obs: &[f64], weights: &FixedWeights) -> Result<Vec<f64>> {
    let shape = weights.shape();
    if obs.len() != shape.n {
        return Err(Error::Shape(format!(
            "observation has {} entries, network expects {}",
            obs.len(),
            shape.n
        )));
    }
    let mut hidden = vec![0.0; shape.h];
    for (i, &o) in obs.iter().enumerate() {
        for (acc, &w) in hidden.iter_mut().zip(weights.w1.row(i)) {
            *acc += w * o;
        }
    }
    let mut out = vec![0.0; shape.m];
    for (j, &a) in hidden.iter().enumerate() {
        let a = a.max(0.0);
        for (acc, &w) in out.iter_mut().zip(weights.w2.row(j)) {
            *acc += w * a;
        }
    }
    Ok(out.into_iter().map(f64::tanh).collect())
}

/// Fixed random weights plus neuron constants. Combined with a mask this is a
/// runnable policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpnModel {
    pub neuron: NeuronConfig,
    pub weights: FixedWeights,
    pub weight_init: WeightInit,
    pub weight_seed: u64,
}

impl SpnModel {
    /// Model with [`WeightInit::HeUniform`] weights.
    pub fn new(shape: NetworkShape, neuron: NeuronConfig, weight_seed: u64) -> Result<Self> {
        Self::with_init(shape, neuron, WeightInit::default(), weight_seed)
    }

    pub fn with_init(
        shape: NetworkShape,
        neuron: NeuronConfig,
        weight_init: WeightInit,
        weight_seed: u64,
    ) -> Result<Self> {
        shape.validate()?;
        neuron.validate()?;
        Ok(SpnModel {
            neuron,
            weights: FixedWeights::random(shape, weight_init, weight_seed),
            weight_init,
            weight_seed,
        })
    }

    pub fn shape(&self) -> NetworkShape {
        self.weights.shape()
    }
}
