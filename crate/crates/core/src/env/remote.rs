//! Line-delimited JSON protocol for environments living in another process.
//!
//! ```text
//! -> {"cmd":"spec"}                  <- {"obs_dim":N,"action":"discrete"|"continuous","act_dim":M,
//!                                         "low":[..],"high":[..],"max_steps":T,"name":S}
//! -> {"cmd":"reset","seed":K}        <- {"obs":[..]}
//! -> {"cmd":"step","action":[..]|A}  <- {"obs":[..],"reward":R,"done":B}
//! -> {"cmd":"close"}                 <- {"ok":true}
//! ```
//!
//! One message per line. Unknown fields are ignored. A reply carrying an
//! `"error"` field, or any line that fails to parse, ends the session.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ActionSpace, EnvFactory, EnvSelector, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::spiking::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Request {
    Spec,
    Reset { seed: u64 },
    Step { action: Action },
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireActionKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecReply {
    pub obs_dim: usize,
    pub action: WireActionKind,
    pub act_dim: usize,
    #[serde(default)]
    pub low: Vec<f64>,
    #[serde(default)]
    pub high: Vec<f64>,
    pub max_steps: usize,
    pub name: String,
}

impl SpecReply {
    pub fn from_spec(spec: &EnvSpec) -> Self {
        let (action, low, high) = match &spec.action {
            ActionSpace::Discrete { .. } => (WireActionKind::Discrete, vec![], vec![]),
            ActionSpace::Continuous { low, high } => {
                (WireActionKind::Continuous, low.clone(), high.clone())
            }
        };
        SpecReply {
            obs_dim: spec.obs_dim,
            action,
            act_dim: spec.action.dim(),
            low,
            high,
            max_steps: spec.max_steps,
            name: spec.name.clone(),
        }
    }

    pub fn into_spec(self) -> Result<EnvSpec> {
        let action = match self.action {
            WireActionKind::Discrete => ActionSpace::Discrete { n: self.act_dim },
            WireActionKind::Continuous => {
                if self.low.len() != self.act_dim || self.high.len() != self.act_dim {
                    return Err(Error::Protocol(format!(
                        "spec for {} has act_dim {} but bounds of length {}/{}",
                        self.name,
                        self.act_dim,
                        self.low.len(),
                        self.high.len()
                    )));
                }
                ActionSpace::Continuous {
                    low: self.low,
                    high: self.high,
                }
            }
        };
        let spec = EnvSpec {
            name: self.name,
            obs_dim: self.obs_dim,
            action,
            max_steps: self.max_steps,
        };
        spec.validate()
            .map_err(|e| Error::Protocol(format!("invalid spec: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetReply {
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseReply {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

/// Client side of one protocol session.
pub struct RemoteEnv {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    spec: EnvSpec,
    line: String,
    broken: bool,
    closed: bool,
}

impl std::fmt::Debug for RemoteEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEnv")
            .field("spec", &self.spec)
            .field("broken", &self.broken)
            .finish_non_exhaustive()
    }
}

impl RemoteEnv {
    /// Opens a session over an existing byte stream and fetches the spec.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self> {
        let mut env = RemoteEnv {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            spec: EnvSpec {
                name: String::new(),
                obs_dim: 1,
                action: ActionSpace::Discrete { n: 1 },
                max_steps: 1,
            },
            line: String::new(),
            broken: false,
            closed: false,
        };
        let reply: SpecReply = env.call(&Request::Spec)?;
        env.spec = reply.into_spec()?;
        Ok(env)
    }

    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Env(format!("cannot reach environment at {addr}: {e}")))?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_streams(reader, stream)
    }

    /// Launches `argv` with piped stdio and talks to it.
    pub fn spawn(argv: &[String]) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("empty environment command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Env(format!("cannot launch {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        match Self::from_streams(stdout, stdin) {
            Ok(mut env) => {
                env.child = Some(child);
                Ok(env)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    fn call<T: for<'de> Deserialize<'de>>(&mut self, request: &Request) -> Result<T> {
        if self.broken {
            return Err(Error::Protocol("session already failed".into()));
        }
        let result = self.exchange(request);
        if result.is_err() {
            self.broken = true;
        }
        result
    }

    fn exchange<T: for<'de> Deserialize<'de>>(&mut self, request: &Request) -> Result<T> {
        let mut msg = serde_json::to_string(request)?;
        msg.push('\n');
        self.writer.write_all(msg.as_bytes())?;
        self.writer.flush()?;

        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(Error::Protocol("environment closed the stream".into()));
        }
        let value: Value = serde_json::from_str(self.line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed reply {:?}: {e}", self.line)))?;
        if let Some(err) = value.get("error") {
            return Err(Error::Env(format!("remote environment: {err}")));
        }
        serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("unexpected reply {:?}: {e}", self.line)))
    }

    fn close_session(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let reply: CloseReply = self.call(&Request::Close)?;
        if !reply.ok {
            return Err(Error::Protocol("close was not acknowledged".into()));
        }
        Ok(())
    }

    /// Ends the session politely and reaps the child process, if any.
    pub fn close(mut self) -> Result<()> {
        let res = self.close_session();
        self.reap();
        res
    }

    fn reap(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if !self.broken {
            let _ = self.close_session();
        }
        self.reap();
    }
}

impl Environment for RemoteEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let reply: ResetReply = self.call(&Request::Reset { seed })?;
        if let Err(e) = self.spec.check_obs(&reply.obs) {
            self.broken = true;
            return Err(e);
        }
        Ok(reply.obs)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let action = self.spec.prepare_action(action)?;
        let reply: StepResult = self.call(&Request::Step { action })?;
        if let Err(e) = self.spec.check_obs(&reply.obs) {
            self.broken = true;
            return Err(e);
        }
        if !reply.reward.is_finite() {
            self.broken = true;
            return Err(Error::Protocol("non-finite reward".into()));
        }
        Ok(reply)
    }
}

/// Opens one session per worker against a TCP address or a launched command.
#[derive(Debug)]
pub struct RemoteFactory {
    selector: EnvSelector,
    spec: EnvSpec,
}

impl RemoteFactory {
    pub fn new(selector: EnvSelector) -> Result<Self> {
        let probe = Self::open(&selector)?;
        let spec = probe.spec().clone();
        probe.close()?;
        Ok(RemoteFactory { selector, spec })
    }

    fn open(selector: &EnvSelector) -> Result<RemoteEnv> {
        match selector {
            EnvSelector::Tcp(addr) => RemoteEnv::connect(addr),
            EnvSelector::Command(argv) => RemoteEnv::spawn(argv),
            EnvSelector::Builtin(name) => Err(Error::Config(format!(
                "{name} is a built-in environment, not a remote one"
            ))),
        }
    }
}

impl EnvFactory for RemoteFactory {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn make(&self) -> Result<Box<dyn Environment>> {
        let env = Self::open(&self.selector)?;
        if env.spec() != &self.spec {
            return Err(Error::Protocol(format!(
                "environment changed its spec between sessions: {:?} vs {:?}",
                env.spec(),
                self.spec
            )));
        }
        Ok(Box::new(env))
    }
}

/// Serves `env` over the protocol until `close` or end of input.
///
/// Environment failures (such as a step after the episode ended) and
/// malformed requests are answered with `{"error": ...}` and end the session
/// with that error.
pub fn serve(
    env: &mut dyn Environment,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    fn send(writer: &mut impl Write, value: &Value) -> Result<()> {
        let mut line = serde_json::to_string(value)?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;
        Ok(())
    }
    fn error_reply(e: &Error) -> Value {
        serde_json::to_value(ErrorReply {
            error: e.to_string(),
        })
        .expect("string field")
    }

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let err = Error::Protocol(format!("malformed request {line:?}: {e}"));
                send(&mut writer, &error_reply(&err))?;
                return Err(err);
            }
        };
        let outcome = match request {
            Request::Spec => {
                serde_json::to_value(SpecReply::from_spec(env.spec())).map_err(Error::from)
            }
            Request::Reset { seed } => env
                .reset(seed)
                .and_then(|obs| Ok(serde_json::to_value(ResetReply { obs })?)),
            Request::Step { action } => {
                let spec = env.spec().clone();
                spec.prepare_action(&action)
                    .and_then(|a| env.step(&a))
                    .and_then(|r| Ok(serde_json::to_value(r)?))
            }
            Request::Close => {
                send(&mut writer, &serde_json::to_value(CloseReply { ok: true })?)?;
                return Ok(());
            }
        };
        match outcome {
            Ok(reply) => send(&mut writer, &reply)?,
            Err(e) => {
                send(&mut writer, &error_reply(&e))?;
                return Err(e);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::cartpole::CartPole;
    use crate::env::toy::ToyEnv;
    use std::io::Cursor;

    fn transcript(env: &mut dyn Environment, input: &str) -> (Result<()>, Vec<Value>) {
        let mut out = Vec::new();
        let res = serve(env, Cursor::new(input.to_string()), &mut out);
        let text = String::from_utf8(out).unwrap();
        assert!(text.ends_with('\n') || text.is_empty());
        let lines = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        (res, lines)
    }

    #[test]
    fn golden_cartpole_transcript() {
        let mut env = CartPole::new();
        let input = concat!(
            "{\"cmd\":\"spec\"}\n",
            "{\"cmd\":\"reset\",\"seed\":5}\n",
            "{\"cmd\":\"step\",\"action\":1}\n",
            "{\"cmd\":\"close\"}\n",
        );
        let (res, lines) = transcript(&mut env, input);
        res.unwrap();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            serde_json::json!({
                "obs_dim": 4, "action": "discrete", "act_dim": 2,
                "low": [], "high": [], "max_steps": 500, "name": "cartpole"
            })
        );
        let obs0: Vec<f64> = serde_json::from_value(lines[1]["obs"].clone()).unwrap();
        assert_eq!(obs0, CartPole::new().reset(5).unwrap());
        let mut direct = CartPole::new();
        direct.reset(5).unwrap();
        let expected = direct.step(&Action::Discrete(1)).unwrap();
        let got: StepResult = serde_json::from_value(lines[2].clone()).unwrap();
        assert_eq!(got, expected);
        assert_eq!(lines[3], serde_json::json!({"ok": true}));
    }

    #[test]
    fn step_after_done_is_an_error_reply() {
        let mut env = ToyEnv::new(1.0, 1);
        let input = concat!(
            "{\"cmd\":\"reset\",\"seed\":0}\n",
            "{\"cmd\":\"step\",\"action\":0}\n",
            "{\"cmd\":\"step\",\"action\":0}\n",
            "{\"cmd\":\"spec\"}\n",
        );
        let (res, lines) = transcript(&mut env, input);
        assert!(res.is_err());
        assert_eq!(lines.len(), 3, "session must stop after the error");
        assert_eq!(lines[1]["done"], Value::Bool(true));
        assert!(lines[2].get("error").is_some());
    }

    #[test]
    fn malformed_request_is_fatal() {
        let mut env = ToyEnv::new(1.0, 5);
        let (res, lines) = transcript(
            &mut env,
            "{\"cmd\":\"spec\"}\nnot json\n{\"cmd\":\"spec\"}\n",
        );
        assert!(matches!(res, Err(Error::Protocol(_))));
        assert_eq!(lines.len(), 2);
        assert!(lines[1].get("error").is_some());
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut env = ToyEnv::new(1.0, 5);
        let (res, lines) = transcript(&mut env, "{\"cmd\":\"reset\",\"seed\":3,\"extra\":[1,2]}\n");
        res.unwrap();
        assert_eq!(lines[0]["obs"], serde_json::json!([3.0, 1.0]));
        let reply: SpecReply = serde_json::from_str(
            r#"{"obs_dim":8,"action":"continuous","act_dim":2,"low":[-1,-1],"high":[1,1],
                "max_steps":1000,"name":"Swimmer-v2","version":"x"}"#,
        )
        .unwrap();
        let spec = reply.into_spec().unwrap();
        assert_eq!(spec.obs_dim, 8);
        assert_eq!(spec.action.dim(), 2);
    }

    #[test]
    fn request_wire_format() {
        let s = |r: &Request| serde_json::to_string(r).unwrap();
        assert_eq!(s(&Request::Spec), r#"{"cmd":"spec"}"#);
        assert_eq!(
            s(&Request::Reset { seed: 9 }),
            r#"{"cmd":"reset","seed":9}"#
        );
        assert_eq!(
            s(&Request::Step {
                action: Action::Discrete(1)
            }),
            r#"{"cmd":"step","action":1}"#
        );
        assert_eq!(
            s(&Request::Step {
                action: Action::Continuous(vec![0.5, -1.0])
            }),
            r#"{"cmd":"step","action":[0.5,-1.0]}"#
        );
        assert_eq!(s(&Request::Close), r#"{"cmd":"close"}"#);
    }
}
