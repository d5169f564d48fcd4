//! Classic cart-pole balancing task with the standard benchmark constants and
//! explicit Euler integration. Action 0 pushes left, action 1 pushes right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, EnvFactory, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::spiking::Action;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const MAX_STEPS: usize = 500;
pub const INIT_BOUND: f64 = 0.05;

/// `[x, x_dot, theta, theta_dot]`
pub type State = [f64; 4];

#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    state: State,
    steps: usize,
    done: bool,
    started: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub const NAME: &'static str = "cartpole";

    pub fn new() -> Self {
        CartPole {
            spec: Self::env_spec(),
            state: [0.0; 4],
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub fn env_spec() -> EnvSpec {
        EnvSpec {
            name: Self::NAME.into(),
            obs_dim: 4,
            action: ActionSpace::Discrete { n: 2 },
            max_steps: MAX_STEPS,
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    /// Puts the system in an arbitrary state and starts a fresh episode.
    pub fn set_state(&mut self, state: State) {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.started = true;
    }

    /// One Euler step of the equations of motion.
    pub fn dynamics(state: State, push_right: bool) -> State {
        let [x, x_dot, theta, theta_dot] = state;
        let force = if push_right { FORCE_MAG } else { -FORCE_MAG };
        let total_mass = CART_MASS + POLE_MASS;
        let polemass_length = POLE_MASS * POLE_HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ]
    }

    pub fn failed(state: &State) -> bool {
        state[0].abs() > X_THRESHOLD || state[2].abs() > THETA_THRESHOLD
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = std::array::from_fn(|_| rng.random_range(-INIT_BOUND..=INIT_BOUND));
        self.set_state(state);
        Ok(state.to_vec())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.started {
            return Err(Error::Env("cartpole: step before reset".into()));
        }
        if self.done {
            return Err(Error::Env("cartpole: step after episode end".into()));
        }
        let push_right = match action {
            Action::Discrete(0) => false,
            Action::Discrete(1) => true,
            other => {
                return Err(Error::Env(format!("cartpole: invalid action {other:?}")));
            }
        };
        self.state = Self::dynamics(self.state, push_right);
        self.steps += 1;
        self.done = Self::failed(&self.state) || self.steps >= MAX_STEPS;
        Ok(StepResult {
            obs: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
        })
    }
}

#[derive(Debug)]
pub struct CartPoleFactory {
    spec: EnvSpec,
}

impl Default for CartPoleFactory {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPoleFactory {
    pub fn new() -> Self {
        CartPoleFactory {
            spec: CartPole::env_spec(),
        }
    }
}

impl EnvFactory for CartPoleFactory {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn make(&self) -> Result<Box<dyn Environment>> {
        Ok(Box::new(CartPole::new()))
    }
}
