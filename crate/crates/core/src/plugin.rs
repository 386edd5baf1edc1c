//! External metrics over a newline-delimited JSON protocol.
//!
//! A plugin is a child process that first prints a handshake line
//!
//! ```text
//! {"protocol": "divmetric/1", "mode": "pairwise"}
//! ```
//!
//! (`mode` is `pairwise` or `set`), then answers one JSON line per request
//! line, in request order:
//!
//! ```text
//! -> {"id": "s1:0:1", "a": "first response", "b": "second response"}
//! <- {"id": "s1:0:1", "score": 0.42}
//! -> {"id": "s1", "responses": ["...", "..."]}
//! <- {"id": "s1", "score": 1.7}
//! ```
//!
//! Pairwise scores are similarities and go through the reduction; set
//! scores are diversities and are used as-is. A plugin that cannot start
//! may print `{"error": "..."}` instead of the handshake.
//!
//! Precomputed scores skip the process entirely and read a `scores` JSONL
//! file.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{load_jsonl, MetricScore, ResponseSet};
use crate::error::{DivError, Result};
use crate::harness::{score_sets, DiversityMetric, PrecomputedScores};
use crate::reduction::{reduce_pair_scores, unordered_pairs};

pub const PROTOCOL: &str = "divmetric/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginMode {
    PairwiseSimilarity,
    SetDiversity,
    PrecomputedScores,
}

impl PluginMode {
    /// The `mode` value a subprocess announces in its handshake.
    pub fn wire_name(self) -> &'static str {
        match self {
            PluginMode::PairwiseSimilarity => "pairwise",
            PluginMode::SetDiversity => "set",
            PluginMode::PrecomputedScores => "precomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Subprocess { program: String, args: Vec<String> },
    ScoreFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginSpec {
    pub name: String,
    pub mode: PluginMode,
    pub transport: Transport,
    pub timeout: Duration,
}

impl PluginSpec {
    /// A subprocess plugin from a whitespace-separated command line.
    pub fn subprocess(name: impl Into<String>, mode: PluginMode, command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| DivError::InvalidInput("empty plugin command".into()))?;
        if mode == PluginMode::PrecomputedScores {
            return Err(DivError::InvalidInput(
                "precomputed scores are read from a file, not a process".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            mode,
            transport: Transport::Subprocess {
                program,
                args: parts.collect(),
            },
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn score_file(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            mode: PluginMode::PrecomputedScores,
            transport: Transport::ScoreFile(path.into()),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Serialize)]
struct PairRequest<'a> {
    id: &'a str,
    a: &'a str,
    b: &'a str,
}

#[derive(Debug, Serialize)]
struct SetRequest<'a> {
    id: &'a str,
    responses: &'a [String],
}

/// A running plugin process.
pub struct PluginProcess {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    /// Extra handshake fields, e.g. a model name.
    pub handshake: Value,
}

impl PluginProcess {
    pub fn spawn(program: &str, args: &[String], mode: PluginMode, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DivError::plugin(None, format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| DivError::plugin(None, "plugin stdout unavailable"))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut process = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            handshake: Value::Null,
        };
        process.handshake = process.read_handshake(mode)?;
        Ok(process)
    }

    fn next_line(&mut self, id: &str) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(DivError::plugin(Some(id), format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                Err(DivError::PluginTimeout { id: id.to_owned() })
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(DivError::plugin(Some(id), "plugin closed its output"))
            }
        }
    }

    fn read_handshake(&mut self, mode: PluginMode) -> Result<Value> {
        let line = self.next_line("handshake")?;
        let fail = |m: String| DivError::plugin(Some("handshake"), m);
        let value: Value =
            serde_json::from_str(&line).map_err(|e| fail(format!("malformed line {line:?}: {e}")))?;
        if let Some(err) = value.get("error") {
            return Err(fail(format!("plugin reported {err}")));
        }
        match value.get("protocol").and_then(Value::as_str) {
            Some(PROTOCOL) => {}
            other => return Err(fail(format!("expected protocol {PROTOCOL:?}, got {other:?}"))),
        }
        match value.get("mode").and_then(Value::as_str) {
            Some(m) if m == mode.wire_name() => Ok(value),
            other => Err(fail(format!(
                "expected mode {:?}, got {other:?}",
                mode.wire_name()
            ))),
        }
    }

    /// Send every request, then read one response per request in order.
    fn exchange(&mut self, requests: &[(String, String)]) -> Result<Vec<f64>> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| DivError::plugin(None, "plugin input already closed"))?;
        for (id, line) in requests {
            writeln!(stdin, "{line}")
                .map_err(|e| DivError::plugin(Some(id), format!("write failed: {e}")))?;
        }
        stdin
            .flush()
            .map_err(|e| DivError::plugin(None, format!("write failed: {e}")))?;
        requests
            .iter()
            .map(|(id, _)| {
                let line = self.next_line(id)?;
                parse_response(id, &line)
            })
            .collect()
    }

    pub fn similarities(&mut self, set: &ResponseSet) -> Result<Vec<f64>> {
        let requests = unordered_pairs(set.len())
            .map(|(i, j)| {
                let id = format!("{}:{i}:{j}", set.id);
                let line = serde_json::to_string(&PairRequest {
                    id: &id,
                    a: &set.responses[i],
                    b: &set.responses[j],
                })
                .expect("request serializes");
                (id, line)
            })
            .collect::<Vec<_>>();
        self.exchange(&requests)
    }

    pub fn set_scores(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        let requests = sets
            .iter()
            .map(|s| {
                let line = serde_json::to_string(&SetRequest {
                    id: &s.id,
                    responses: &s.responses,
                })
                .expect("request serializes");
                (s.id.clone(), line)
            })
            .collect::<Vec<_>>();
        self.exchange(&requests)
    }
}

fn parse_response(id: &str, line: &str) -> Result<f64> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| DivError::plugin(Some(id), format!("malformed response {line:?}: {e}")))?;
    if let Some(err) = value.get("error") {
        return Err(DivError::plugin(Some(id), format!("plugin reported {err}")));
    }
    match value.get("id").and_then(Value::as_str) {
        Some(got) if got == id => {}
        Some(got) => {
            return Err(DivError::plugin(
                Some(id),
                format!("response carries id {got:?}"),
            ))
        }
        None => return Err(DivError::plugin(Some(id), "response has no id")),
    }
    let score = value
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| DivError::plugin(Some(id), "response has no numeric score"))?;
    if !score.is_finite() {
        return Err(DivError::plugin(Some(id), "non-finite score"));
    }
    Ok(score)
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        // Closing stdin is the shutdown signal.
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) => thread::sleep(Duration::from_millis(10)),
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Backend {
    Pending,
    Process(PluginProcess),
    Scores(PrecomputedScores),
}

/// A plugin used as a [`DiversityMetric`]. The process is started on first
/// use and kept for the lifetime of the metric.
pub struct PluginMetric {
    spec: PluginSpec,
    backend: Backend,
}

impl PluginMetric {
    pub fn new(spec: PluginSpec) -> Self {
        Self {
            spec,
            backend: Backend::Pending,
        }
    }

    fn start(&mut self) -> Result<()> {
        if !matches!(self.backend, Backend::Pending) {
            return Ok(());
        }
        self.backend = match (&self.spec.transport, self.spec.mode) {
            (Transport::ScoreFile(path), _) => {
                let records: Vec<MetricScore> = load_jsonl(path)?;
                let scores = PrecomputedScores::from_records(&records, None)?;
                if self.spec.name.is_empty() {
                    self.spec.name = scores.name();
                }
                Backend::Scores(scores.renamed(self.spec.name.clone()))
            }
            (Transport::Subprocess { program, args }, mode) => {
                Backend::Process(PluginProcess::spawn(program, args, mode, self.spec.timeout)?)
            }
        };
        Ok(())
    }
}

impl DiversityMetric for PluginMetric {
    fn name(&self) -> String {
        self.spec.name.clone()
    }

    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        self.start()?;
        let mode = self.spec.mode;
        match &mut self.backend {
            Backend::Scores(scores) => scores.score_sets(sets),
            Backend::Process(p) if mode == PluginMode::SetDiversity => p.set_scores(sets),
            Backend::Process(p) => sets
                .iter()
                .map(|s| {
                    if s.len() < 2 {
                        return Err(DivError::ReductionTooSmall(s.len()));
                    }
                    reduce_pair_scores(s.len(), &p.similarities(s)?)
                })
                .collect(),
            Backend::Pending => unreachable!("started above"),
        }
    }
}

/// Score `sets` through a plugin; output order follows input order.
pub fn score_via_plugin(spec: &PluginSpec, sets: &[ResponseSet]) -> Result<Vec<MetricScore>> {
    let refs: Vec<&ResponseSet> = sets.iter().collect();
    score_sets(&mut PluginMetric::new(spec.clone()), &refs)
}
