//! Objectives evaluated by a child process.
//!
//! Each evaluation spawns the configured command, writes one JSON line
//! `{"x": [...]}` to its stdin and expects one JSON line
//! `{"components": [...]}` on its stdout, followed by exit code 0.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::bo::Problem;
use crate::composite::ComponentSpec;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_S: f64 = 300.0;

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("could not start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("`{command}` exited with {}: {stderr}", code.map_or("a signal".to_string(), |c| format!("code {c}")))]
    ProcessFailure {
        command: String,
        code: Option<i32>,
        stderr: String,
    },

    #[error("`{command}` did not answer within {seconds} s")]
    Timeout { command: String, seconds: f64 },

    #[error("`{command}` produced malformed output: {detail}")]
    Malformed { command: String, detail: String },

    #[error("external objective returned {got} components, expected {expected}")]
    Arity { expected: usize, got: usize },

    #[error("i/o error talking to `{command}`: {source}")]
    Io {
        command: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// `low + (high − low)·u`
    Linear,
    /// `2^(low + (high − low)·u)`
    Log2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: TransformKind,
    pub low: f64,
    pub high: f64,
}

impl Transform {
    pub fn apply(&self, u: f64) -> f64 {
        let t = self.low + (self.high - self.low) * u;
        match self.kind {
            TransformKind::Linear => t,
            TransformKind::Log2 => t.exp2(),
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            TransformKind::Linear => format!("linear on [{}, {}]", self.low, self.high),
            TransformKind::Log2 => format!("2^(linear on [{}, {}])", self.low, self.high),
        }
    }
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

/// Contents of a problem descriptor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalObjectiveSpec {
    pub name: String,
    pub dimension: usize,
    pub components: Vec<ComponentSpec>,
    /// One per dimension, or empty for the identity on every coordinate.
    #[serde(default)]
    pub transforms: Vec<Transform>,
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

impl ExternalObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::usage("external objective needs dimension ≥ 1"));
        }
        if self.components.is_empty() {
            return Err(Error::usage("external objective needs at least one component"));
        }
        for c in &self.components {
            ComponentSpec::new(c.name.clone(), c.signs.clone())?;
            if c.signs.len() != self.dimension {
                return Err(Error::usage(format!(
                    "component `{}` declares {} signs for dimension {}",
                    c.name,
                    c.signs.len(),
                    self.dimension
                )));
            }
        }
        if !self.transforms.is_empty() && self.transforms.len() != self.dimension {
            return Err(Error::usage(format!(
                "{} transforms declared for dimension {}",
                self.transforms.len(),
                self.dimension
            )));
        }
        if self.transforms.iter().any(|t| !t.low.is_finite() || !t.high.is_finite()) {
            return Err(Error::usage("transform bounds must be finite"));
        }
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(Error::usage("external objective needs a command"));
        }
        if !(self.timeout_s > 0.0) || !self.timeout_s.is_finite() {
            return Err(Error::usage("timeout must be a positive number of seconds"));
        }
        Ok(())
    }

    /// Reads a descriptor. A relative program path containing a `/` is
    /// resolved against the descriptor's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut spec: Self = serde_json::from_str(&text)
            .map_err(|e| Error::usage(format!("bad descriptor {}: {e}", path.display())))?;
        spec.validate()?;
        let program = PathBuf::from(&spec.command[0]);
        if program.is_relative() && spec.command[0].contains('/') {
            if let Some(dir) = path.parent() {
                spec.command[0] = dir.join(program).to_string_lossy().into_owned();
            }
        }
        Ok(spec)
    }

    /// Maps a unit-cube point to the values the child receives.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        if self.transforms.is_empty() {
            return x.to_vec();
        }
        x.iter().zip(&self.transforms).map(|(u, t)| t.apply(*u)).collect()
    }

    fn command_line(&self) -> String {
        self.command.join(" ")
    }
}

#[derive(Serialize)]
struct Request<'a> {
    x: &'a [f64],
}

#[derive(Deserialize)]
struct Response {
    components: Vec<f64>,
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

/// Runs one evaluation in a fresh child process.
pub fn external_evaluate(spec: &ExternalObjectiveSpec, x: &[f64]) -> std::result::Result<Vec<f64>, ExternalError> {
    let command = spec.command_line();
    let io_err = |source| ExternalError::Io {
        command: command.clone(),
        source,
    };
    let mut line = serde_json::to_string(&Request { x: &spec.transform(x) }).map_err(|e| ExternalError::Malformed {
        command: command.clone(),
        detail: format!("request not encodable: {e}"),
    })?;
    line.push('\n');

    let mut child = Command::new(&spec.command[0])
        .args(&spec.command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ExternalError::Spawn {
            command: command.clone(),
            source,
        })?;
    let out = drain(child.stdout.take().expect("stdout is piped"));
    let err = drain(child.stderr.take().expect("stderr is piped"));
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A child that exits without reading closes the pipe; its exit status
        // decides the outcome below.
        let _ = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush());
    }

    let status = match child
        .wait_timeout(Duration::from_secs_f64(spec.timeout_s))
        .map_err(io_err)?
    {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ExternalError::Timeout {
                command,
                seconds: spec.timeout_s,
            });
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    if !status.success() {
        return Err(ExternalError::ProcessFailure {
            command,
            code: status.code(),
            stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
        });
    }

    let malformed = |detail: String| ExternalError::Malformed {
        command: command.clone(),
        detail,
    };
    let text = String::from_utf8(stdout).map_err(|_| malformed("output is not UTF-8".into()))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 1 {
        return Err(malformed(format!("expected one response line, got {}", lines.len())));
    }
    let response: Response = serde_json::from_str(lines[0]).map_err(|e| malformed(e.to_string()))?;
    if response.components.len() != spec.components.len() {
        return Err(ExternalError::Arity {
            expected: spec.components.len(),
            got: response.components.len(),
        });
    }
    Ok(response.components)
}

#[derive(Debug, Clone)]
pub struct ExternalObjective {
    spec: ExternalObjectiveSpec,
}

impl ExternalObjective {
    pub fn new(spec: ExternalObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(ExternalObjectiveSpec::from_path(path)?)
    }

    pub fn spec(&self) -> &ExternalObjectiveSpec {
        &self.spec
    }
}

impl Problem for ExternalObjective {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn dimension(&self) -> usize {
        self.spec.dimension
    }

    fn components(&self) -> &[ComponentSpec] {
        &self.spec.components
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.dimension {
            return Err(Error::usage(format!(
                "external objective `{}` takes {} coordinates, got {}",
                self.spec.name,
                self.spec.dimension,
                x.len()
            )));
        }
        Ok(external_evaluate(&self.spec, x)?)
    }

    fn transform_descriptions(&self) -> Vec<String> {
        self.spec
            .transforms
            .iter()
            .enumerate()
            .map(|(i, t)| format!("x{i}: {}", t.describe()))
            .collect()
    }
}
