//! A trivial configurable environment for tests and protocol smoke runs.

use super::{ActionSpace, EnvFactory, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::spiking::Action;

/// Pays a constant reward each step. Observations are `[seed + step, 1, ...]`.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    spec: EnvSpec,
    reward: f64,
    action_rewards: Option<Vec<f64>>,
    seedless: bool,
    fail_after: Option<usize>,
    seed: u64,
    steps: usize,
    done: bool,
    started: bool,
}

impl ToyEnv {
    pub fn new(reward: f64, max_steps: usize) -> Self {
        ToyEnv {
            spec: EnvSpec {
                name: "toy".into(),
                obs_dim: 2,
                action: ActionSpace::Discrete { n: 2 },
                max_steps,
            },
            reward,
            action_rewards: None,
            seedless: false,
            fail_after: None,
            seed: 0,
            steps: 0,
            done: false,
            started: false,
        }
    }

    /// Ends the episode with `done` after this many steps.
    pub fn failing_after(mut self, steps: usize) -> Self {
        self.fail_after = Some(steps);
        self
    }

    /// Pays `rewards[a]` for discrete action `a` instead of the constant.
    pub fn rewarding_actions(mut self, rewards: Vec<f64>) -> Self {
        self.spec.action = ActionSpace::Discrete { n: rewards.len() };
        self.action_rewards = Some(rewards);
        self
    }

    /// Makes observations independent of the reset seed.
    pub fn seedless(mut self) -> Self {
        self.seedless = true;
        self
    }

    pub fn with_spec(mut self, spec: EnvSpec) -> Self {
        self.spec = spec;
        self
    }

    fn obs(&self) -> Vec<f64> {
        let mut obs = vec![1.0; self.spec.obs_dim];
        let base = if self.seedless { 0 } else { self.seed % 1000 };
        obs[0] = base as f64 + self.steps as f64;
        obs
    }
}

impl Environment for ToyEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.seed = seed;
        self.steps = 0;
        self.done = false;
        self.started = true;
        Ok(self.obs())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.started || self.done {
            return Err(Error::Env("toy: step without an active episode".into()));
        }
        let reward = match (self.spec.prepare_action(action)?, &self.action_rewards) {
            (Action::Discrete(a), Some(table)) => table[a],
            _ => self.reward,
        };
        self.steps += 1;
        self.done =
            self.steps >= self.spec.max_steps || self.fail_after.is_some_and(|n| self.steps >= n);
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done: self.done,
        })
    }
}

/// Hands out clones of a template [`ToyEnv`].
#[derive(Debug, Clone)]
pub struct ToyFactory(pub ToyEnv);

impl EnvFactory for ToyFactory {
    fn spec(&self) -> &EnvSpec {
        &self.0.spec
    }

    fn make(&self) -> Result<Box<dyn Environment>> {
        Ok(Box::new(self.0.clone()))
    }
}
