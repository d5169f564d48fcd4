//! Episodic environments: a common interface, the built-in cart-pole, and a
//! client for environments served over the line-delimited JSON protocol.

pub mod cartpole;
pub mod remote;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spiking::{Action, Readout};

pub use cartpole::CartPole;
pub use remote::RemoteEnv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn readout(&self) -> Readout {
        match self {
            ActionSpace::Discrete { .. } => Readout::Discrete,
            ActionSpace::Continuous { .. } => Readout::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action: ActionSpace,
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 {
            return Err(Error::Env(format!("{}: obs_dim must be >= 1", self.name)));
        }
        if self.max_steps == 0 {
            return Err(Error::Env(format!("{}: max_steps must be >= 1", self.name)));
        }
        match &self.action {
            ActionSpace::Discrete { n } if *n == 0 => Err(Error::Env(format!(
                "{}: empty discrete action set",
                self.name
            ))),
            ActionSpace::Continuous { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(Error::Env(format!(
                        "{}: action bounds have lengths {} and {}",
                        self.name,
                        low.len(),
                        high.len()
                    )));
                }
                if low
                    .iter()
                    .zip(high)
                    .any(|(l, h)| l.partial_cmp(h) != Some(std::cmp::Ordering::Less))
                {
                    return Err(Error::Env(format!(
                        "{}: every action low bound must be below its high bound",
                        self.name
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Checks an action against the space and clips continuous components to
    /// `[low, high]`.
    pub fn prepare_action(&self, action: &Action) -> Result<Action> {
        match (&self.action, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                if a < n {
                    Ok(Action::Discrete(*a))
                } else {
                    Err(Error::Env(format!(
                        "{}: discrete action {a} out of range 0..{n}",
                        self.name
                    )))
                }
            }
            (ActionSpace::Continuous { low, high }, Action::Continuous(a)) => {
                if a.len() != low.len() {
                    return Err(Error::Env(format!(
                        "{}: action has {} components, expected {}",
                        self.name,
                        a.len(),
                        low.len()
                    )));
                }
                if !a.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("action"));
                }
                Ok(Action::Continuous(
                    a.iter()
                        .zip(low.iter().zip(high))
                        .map(|(&v, (&lo, &hi))| hi.min(lo.max(v)))
                        .collect(),
                ))
            }
            _ => Err(Error::Env(format!(
                "{}: action kind does not match the action space",
                self.name
            ))),
        }
    }

    pub fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Protocol(format!(
                "{}: observation has {} entries, spec says {}",
                self.name,
                obs.len(),
                self.obs_dim
            )));
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. Deterministic given `seed`.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;

    /// Advances one transition. Illegal after `done` until the next reset.
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

/// Creates one environment instance per worker.
pub trait EnvFactory: Sync {
    fn spec(&self) -> &EnvSpec;
    fn make(&self) -> Result<Box<dyn Environment>>;
}

pub trait Policy {
    fn act(&mut self, obs: &[f64]) -> Result<Action>;
}

impl<F> Policy for F
where
    F: FnMut(&[f64]) -> Result<Action>,
{
    fn act(&mut self, obs: &[f64]) -> Result<Action> {
        self(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Undiscounted sum of rewards.
    pub total_return: f64,
    pub length: usize,
    pub trajectory: Option<Vec<Transition>>,
}

/// Runs one episode: reset with `seed`, then step until the environment
/// reports done or `max_steps` transitions have happened.
pub fn rollout(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    seed: u64,
    record: bool,
) -> Result<Episode> {
    let spec = env.spec().clone();
    let mut obs = env.reset(seed)?;
    spec.check_obs(&obs)?;
    let mut total_return = 0.0;
    let mut length = 0;
    let mut trajectory = record.then(Vec::new);
    while length < spec.max_steps {
        let action = spec.prepare_action(&policy.act(&obs)?)?;
        let step = env.step(&action)?;
        spec.check_obs(&step.obs)?;
        total_return += step.reward;
        length += 1;
        if let Some(t) = trajectory.as_mut() {
            t.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: step.reward,
            });
        }
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok(Episode {
        total_return,
        length,
        trajectory,
    })
}

/// Where episodes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSelector {
    /// A built-in environment by name.
    Builtin(String),
    /// Dial a protocol server at `host:port`.
    Tcp(String),
    /// Launch a protocol server as a child process talking over stdio.
    Command(Vec<String>),
}

impl Default for EnvSelector {
    fn default() -> Self {
        EnvSelector::Builtin(CartPole::NAME.into())
    }
}

impl std::str::FromStr for EnvSelector {
    type Err = Error;

    /// `cartpole`, `tcp:HOST:PORT`, or `cmd:PROGRAM ARG...`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(EnvSelector::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("empty environment command".into()));
            }
            Ok(EnvSelector::Command(argv))
        } else {
            Ok(EnvSelector::Builtin(s.to_string()))
        }
    }
}

impl std::fmt::Display for EnvSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvSelector::Builtin(name) => write!(f, "{name}"),
            EnvSelector::Tcp(addr) => write!(f, "tcp:{addr}"),
            EnvSelector::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

impl EnvSelector {
    /// Resolves the selector, contacting remote environments once to learn
    /// their spec.
    pub fn open(&self) -> Result<Box<dyn EnvFactory>> {
        match self {
            EnvSelector::Builtin(name) => builtin(name),
            EnvSelector::Tcp(_) | EnvSelector::Command(_) => {
                Ok(Box::new(remote::RemoteFactory::new(self.clone())?))
            }
        }
    }
}

pub fn builtin(name: &str) -> Result<Box<dyn EnvFactory>> {
    match name {
        CartPole::NAME | "CartPole-v1" => Ok(Box::new(cartpole::CartPoleFactory::new())),
        other => Err(Error::Config(format!(
            "unknown built-in environment {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::toy::ToyEnv;
    use super::*;

    fn continuous() -> EnvSpec {
        EnvSpec {
            name: "c".into(),
            obs_dim: 1,
            action: ActionSpace::Continuous {
                low: vec![-1.0, 0.0],
                high: vec![1.0, 2.0],
            },
            max_steps: 10,
        }
    }

    #[test]
    fn clipping_is_elementwise() {
        let spec = continuous();
        let a = spec
            .prepare_action(&Action::Continuous(vec![-3.0, 1.5]))
            .unwrap();
        assert_eq!(a, Action::Continuous(vec![-1.0, 1.5]));
        let a = spec
            .prepare_action(&Action::Continuous(vec![0.25, 7.0]))
            .unwrap();
        assert_eq!(a, Action::Continuous(vec![0.25, 2.0]));
    }

    #[test]
    fn bad_actions_are_rejected() {
        let spec = continuous();
        assert!(spec.prepare_action(&Action::Continuous(vec![0.0])).is_err());
        assert!(spec
            .prepare_action(&Action::Continuous(vec![f64::NAN, 0.0]))
            .is_err());
        assert!(spec.prepare_action(&Action::Discrete(0)).is_err());
        let discrete = EnvSpec {
            action: ActionSpace::Discrete { n: 2 },
            ..spec
        };
        assert!(discrete.prepare_action(&Action::Discrete(2)).is_err());
        assert!(discrete.prepare_action(&Action::Discrete(1)).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(continuous().validate().is_ok());
        let mut s = continuous();
        s.action = ActionSpace::Continuous {
            low: vec![1.0],
            high: vec![1.0],
        };
        assert!(s.validate().is_err());
        let mut s = continuous();
        s.max_steps = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rollout_stops_at_max_steps() {
        let mut env = ToyEnv::new(1.0, 3);
        let mut policy = |_: &[f64]| Ok(Action::Discrete(0));
        let ep = rollout(&mut env, &mut policy, 0, true).unwrap();
        assert_eq!(ep.total_return, 3.0);
        assert_eq!(ep.length, 3);
        assert_eq!(ep.trajectory.unwrap().len(), 3);
    }

    #[test]
    fn rollout_stops_when_done() {
        let mut env = ToyEnv::new(1.0, 100).failing_after(1);
        let mut policy = |_: &[f64]| Ok(Action::Discrete(0));
        let ep = rollout(&mut env, &mut policy, 0, false).unwrap();
        assert_eq!(ep.length, 1);
        assert!(ep.trajectory.is_none());
    }

    #[test]
    fn return_is_undiscounted_sum() {
        let mut env = ToyEnv::new(0.5, 7);
        let mut policy = |_: &[f64]| Ok(Action::Discrete(1));
        let ep = rollout(&mut env, &mut policy, 0, true).unwrap();
        let sum: f64 = ep.trajectory.unwrap().iter().map(|t| t.reward).sum();
        assert_eq!(ep.total_return, sum);
        assert_eq!(ep.total_return, 3.5);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!(
            "cartpole".parse::<EnvSelector>().unwrap(),
            EnvSelector::Builtin("cartpole".into())
        );
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<EnvSelector>().unwrap(),
            EnvSelector::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "cmd:python bridge.py --env Swimmer-v2"
                .parse::<EnvSelector>()
                .unwrap(),
            EnvSelector::Command(vec![
                "python".into(),
                "bridge.py".into(),
                "--env".into(),
                "Swimmer-v2".into()
            ])
        );
        assert!("cmd:".parse::<EnvSelector>().is_err());
        assert!(EnvSelector::Builtin("nope".into()).open().is_err());
    }
}
