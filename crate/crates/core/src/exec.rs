//! Candidate execution through sandbox runners and composite verdicts.
//!
//! Runners speak newline-delimited JSON over stdin/stdout: one request line
//! in, one response line out, `id` echoed. Only assertion and stdio tests
//! are sent; complexity thresholds are resolved here from the runner's
//! `cc_total`, and the reliability marker is derived from the other
//! verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AbortedRow, CodeCandidate, GeneratedTest, Mode, ResourceLimits, Status, TestKind, TestPayload,
    Verdict, VerdictMatrix,
};
use crate::parse::substitute_candidate;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    /// The runner could not be reached or broke the protocol.
    #[error("runner unavailable: {0}")]
    RunnerUnavailable(String),
    #[error("no tests to run")]
    NoTests,
    #[error("duplicate sample index {0} in pool")]
    DuplicateSample(usize),
    #[error("parallelism must be at least 1")]
    BadParallelism,
}

/// Test as sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTest {
    pub test_id: String,
    pub kind: TestKind,
    pub payload: serde_json::Value,
}

impl WireTest {
    pub fn from_test(t: &GeneratedTest) -> Self {
        WireTest {
            test_id: t.test_id.clone(),
            kind: t.kind(),
            payload: serde_json::to_value(&t.payload).expect("payload serializes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub id: String,
    pub mode: Mode,
    pub source: String,
    pub tests: Vec<WireTest>,
    pub limits: ResourceLimits,
    pub want_cc: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerResponse {
    pub id: String,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub cc_total: Option<u64>,
    #[serde(default)]
    pub runner_error: Option<String>,
}

/// Executes one request. Implementations must be safe to call from many
/// threads at once.
pub trait Runner: Send + Sync {
    fn run(&self, req: &RunnerRequest) -> Result<RunnerResponse, ExecError>;
}

/// Reliability: pass iff no verdict is an error. Wrong output and timeouts
/// are not runtime errors.
pub fn evaluate_reliability(test_id: &str, verdicts: &[Verdict]) -> Verdict {
    let errors: Vec<&str> = verdicts
        .iter()
        .filter(|v| v.status == Status::Error)
        .map(|v| v.test_id.as_str())
        .collect();
    let mut v = Verdict::new(
        test_id,
        if errors.is_empty() {
            Status::Pass
        } else {
            Status::Fail
        },
    );
    if !errors.is_empty() {
        v.message = Some(format!("runtime errors in: {}", errors.join(", ")));
    }
    v
}

fn request_id(c: &CodeCandidate) -> String {
    format!("{}#{}", c.task_id, c.sample_index)
}

/// Runs every test against one candidate.
///
/// Candidate failures come back as verdicts; an `Err` means the
/// infrastructure failed and says nothing about the code.
pub fn run_candidate(
    runner: &dyn Runner,
    candidate: &CodeCandidate,
    tests: &[GeneratedTest],
    limits: &ResourceLimits,
    mode: Mode,
) -> Result<Vec<Verdict>, ExecError> {
    if tests.is_empty() {
        return Err(ExecError::NoTests);
    }
    let executable: Vec<GeneratedTest> = tests
        .iter()
        .filter(|t| t.is_executable())
        .map(|t| substitute_candidate(t, candidate))
        .collect();
    let want_cc = tests.iter().any(|t| t.kind() == TestKind::CcThreshold);
    let mut by_id: BTreeMap<String, Verdict> = BTreeMap::new();
    let mut cc_total = None;
    let mut runner_error = None;
    if !executable.is_empty() || want_cc {
        let req = RunnerRequest {
            id: request_id(candidate),
            mode,
            source: candidate.source.clone(),
            tests: executable.iter().map(WireTest::from_test).collect(),
            limits: *limits,
            want_cc,
        };
        let resp = runner.run(&req)?;
        check_response(&req, &resp)?;
        cc_total = resp.cc_total;
        runner_error = resp.runner_error;
        by_id = resp
            .verdicts
            .into_iter()
            .map(|v| (v.test_id.clone(), v))
            .collect();
    }
    let mut out: Vec<Verdict> = Vec::with_capacity(tests.len());
    let mut pending_reliability = Vec::new();
    for (pos, t) in tests.iter().enumerate() {
        let v = match &t.payload {
            TestPayload::Assertion { .. } | TestPayload::Stdio { .. } => {
                by_id.remove(&t.test_id).expect("checked by check_response")
            }
            TestPayload::CcThreshold { cc_limit } => {
                cc_verdict(&t.test_id, *cc_limit, cc_total, &runner_error)
            }
            TestPayload::ReliabilityMarker {} => {
                pending_reliability.push(pos);
                Verdict::new(&t.test_id, Status::Pass)
            }
        };
        out.push(v);
    }
    if !pending_reliability.is_empty() {
        let others: Vec<Verdict> = out
            .iter()
            .enumerate()
            .filter(|(i, _)| !pending_reliability.contains(i))
            .map(|(_, v)| v.clone())
            .collect();
        for pos in pending_reliability {
            out[pos] = evaluate_reliability(&tests[pos].test_id, &others);
        }
    }
    Ok(out)
}

fn cc_verdict(
    test_id: &str,
    limit: u32,
    cc_total: Option<u64>,
    runner_error: &Option<String>,
) -> Verdict {
    match cc_total {
        Some(cc) => {
            let mut v = Verdict::new(
                test_id,
                if cc <= u64::from(limit) {
                    Status::Pass
                } else {
                    Status::Fail
                },
            );
            v.message = Some(format!("cc {cc}, limit {limit}"));
            v
        }
        None => {
            let mut v = Verdict::new(test_id, Status::Error);
            v.message = Some(
                runner_error
                    .clone()
                    .unwrap_or_else(|| "runner reported no complexity".to_string()),
            );
            v
        }
    }
}

fn check_response(req: &RunnerRequest, resp: &RunnerResponse) -> Result<(), ExecError> {
    if resp.id != req.id {
        return Err(ExecError::RunnerUnavailable(format!(
            "protocol desync: sent id {:?}, got {:?}",
            req.id, resp.id
        )));
    }
    let want: BTreeSet<&str> = req.tests.iter().map(|t| t.test_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for v in &resp.verdicts {
        if !want.contains(v.test_id.as_str()) {
            return Err(ExecError::RunnerUnavailable(format!(
                "verdict for unknown test {:?}",
                v.test_id
            )));
        }
        if !seen.insert(v.test_id.as_str()) {
            return Err(ExecError::RunnerUnavailable(format!(
                "duplicate verdict for {:?}",
                v.test_id
            )));
        }
    }
    if seen.len() != want.len() {
        let missing: Vec<&str> = want.difference(&seen).copied().collect();
        let why = resp
            .runner_error
            .as_deref()
            .unwrap_or("no runner error given");
        return Err(ExecError::RunnerUnavailable(format!(
            "missing verdicts for {} ({why})",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Runs every candidate in `pool` against `tests`.
///
/// Rows whose runner call failed are listed in `aborted` rather than
/// coerced to failures. The status grid does not depend on `parallelism`.
pub fn run_matrix(
    runner: &dyn Runner,
    pool: &[CodeCandidate],
    tests: &[GeneratedTest],
    limits: &ResourceLimits,
    mode: Mode,
    parallelism: usize,
) -> Result<VerdictMatrix, ExecError> {
    if parallelism == 0 {
        return Err(ExecError::BadParallelism);
    }
    let mut seen = BTreeSet::new();
    for c in pool {
        if !seen.insert(c.sample_index) {
            return Err(ExecError::DuplicateSample(c.sample_index));
        }
    }
    if pool.is_empty() {
        return Ok(VerdictMatrix::default());
    }
    let run_one = |c: &CodeCandidate| {
        (
            c.sample_index,
            run_candidate(runner, c, tests, limits, mode),
        )
    };
    let results: Vec<(usize, Result<Vec<Verdict>, ExecError>)> = if parallelism == 1 {
        pool.iter().map(run_one).collect()
    } else if rayon::current_thread_index().is_some() {
        // Already on a worker of the caller's pool: share it.
        pool.par_iter().map(run_one).collect()
    } else {
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| ExecError::RunnerUnavailable(format!("thread pool: {e}")))?;
        threads.install(|| pool.par_iter().map(run_one).collect())
    };
    let mut m = VerdictMatrix::default();
    for (idx, r) in results {
        match r {
            Ok(row) => {
                m.rows.insert(idx, row);
            }
            Err(e) => {
                log::warn!("candidate {idx} aborted: {e}");
                m.aborted.push(AbortedRow {
                    sample_index: idx,
                    reason: e.to_string(),
                });
            }
        }
    }
    m.aborted.sort_by_key(|a| a.sample_index);
    Ok(m)
}

/// Deterministic in-process runner driven by directives in the candidate
/// source, for tests and offline runs:
///
/// - `# stub:fail <pat>`, `# stub:error <pat>`, `# stub:timeout <pat>` set
///   the status of every test whose id, assertion or input contains `<pat>`
///   (`*` matches all); the first matching directive wins.
/// - `# stub:cc <n>` sets the reported complexity (default 1).
/// - `# stub:syntax` reports unparseable source.
/// - `# stub:crash` fails the request as an infrastructure error.
///
/// Everything else passes.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubRunner;

enum Directive<'a> {
    Status(Status, &'a str),
    Cc(u64),
    Syntax,
    Crash,
}

fn directives(source: &str) -> Vec<Directive<'_>> {
    source
        .lines()
        .filter_map(|l| {
            let rest = l.trim().strip_prefix('#')?.trim().strip_prefix("stub:")?;
            let (word, arg) = rest.split_once(' ').unwrap_or((rest, ""));
            let arg = arg.trim();
            Some(match word {
                "fail" => Directive::Status(Status::Fail, arg),
                "error" => Directive::Status(Status::Error, arg),
                "timeout" => Directive::Status(Status::Timeout, arg),
                "cc" => Directive::Cc(arg.parse().ok()?),
                "syntax" => Directive::Syntax,
                "crash" => Directive::Crash,
                _ => return None,
            })
        })
        .collect()
}

fn wire_text(t: &WireTest) -> String {
    let field = |k: &str| {
        t.payload
            .get(k)
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string()
    };
    format!(
        "{}\n{}\n{}",
        t.test_id,
        field("assertion_code"),
        field("input")
    )
}

impl Runner for StubRunner {
    fn run(&self, req: &RunnerRequest) -> Result<RunnerResponse, ExecError> {
        let ds = directives(&req.source);
        if ds.iter().any(|d| matches!(d, Directive::Crash)) {
            return Err(ExecError::RunnerUnavailable("stub runner crashed".into()));
        }
        let syntax = ds.iter().any(|d| matches!(d, Directive::Syntax));
        let verdicts = req
            .tests
            .iter()
            .map(|t| {
                if syntax {
                    let mut v = Verdict::new(&t.test_id, Status::Error);
                    v.message = Some("SyntaxError".into());
                    return v;
                }
                let text = wire_text(t);
                let status = ds
                    .iter()
                    .find_map(|d| match d {
                        Directive::Status(s, pat)
                            if *pat == "*" || (!pat.is_empty() && text.contains(pat)) =>
                        {
                            Some(*s)
                        }
                        _ => None,
                    })
                    .unwrap_or(Status::Pass);
                let mut v = Verdict::new(&t.test_id, status);
                if status == Status::Timeout {
                    v.wall_ms = req.limits.timeout_ms();
                }
                v
            })
            .collect();
        let cc = ds
            .iter()
            .find_map(|d| match d {
                Directive::Cc(n) => Some(*n),
                _ => None,
            })
            .unwrap_or(1);
        Ok(RunnerResponse {
            id: req.id.clone(),
            verdicts,
            cc_total: (req.want_cc && !syntax).then_some(cc),
            runner_error: syntax.then(|| "SyntaxError: stub".to_string()),
        })
    }
}

/// Runner backed by a closure, for tests.
pub struct ScriptedRunner<F>(pub F);

impl<F> Runner for ScriptedRunner<F>
where
    F: Fn(&RunnerRequest) -> Result<RunnerResponse, ExecError> + Send + Sync,
{
    fn run(&self, req: &RunnerRequest) -> Result<RunnerResponse, ExecError> {
        (self.0)(req)
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of long-lived runner processes. Each process serves one request at
/// a time; a process that fails or desyncs is killed and replaced.
pub struct ProcessRunner {
    command: Vec<String>,
    max_workers: usize,
    state: Mutex<PoolState>,
    cv: Condvar,
    /// Added to the sum of test timeouts to bound a whole request.
    pub grace: Duration,
}

struct PoolState {
    idle: Vec<Worker>,
    live: usize,
}

impl ProcessRunner {
    /// `command` is the program and its arguments, e.g.
    /// `["python3", "-m", "runner", "--protocol", "1"]`.
    pub fn new(command: Vec<String>, max_workers: usize) -> Result<Self, ExecError> {
        if command.is_empty() {
            return Err(ExecError::RunnerUnavailable("empty runner command".into()));
        }
        Ok(ProcessRunner {
            command,
            max_workers: max_workers.max(1),
            state: Mutex::new(PoolState {
                idle: Vec::new(),
                live: 0,
            }),
            cv: Condvar::new(),
            grace: Duration::from_secs(10),
        })
    }

    fn spawn(&self) -> Result<Worker, ExecError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                ExecError::RunnerUnavailable(format!("spawning {:?}: {e}", self.command[0]))
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn acquire(&self) -> Result<Worker, ExecError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(w) = st.idle.pop() {
                return Ok(w);
            }
            if st.live < self.max_workers {
                st.live += 1;
                drop(st);
                return self.spawn().inspect_err(|_| self.retire());
            }
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn release(&self, w: Worker) {
        self.state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .idle
            .push(w);
        self.cv.notify_one();
    }

    fn retire(&self) {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).live -= 1;
        self.cv.notify_one();
    }

    fn exchange(&self, w: &mut Worker, req: &RunnerRequest) -> Result<RunnerResponse, ExecError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        w.stdin
            .write_all(line.as_bytes())
            .and_then(|_| w.stdin.flush())
            .map_err(|e| ExecError::RunnerUnavailable(format!("writing request: {e}")))?;
        let budget = Duration::from_secs_f64(req.limits.timeout_s * req.tests.len().max(1) as f64)
            + self.grace;
        let reply = match w.lines.recv_timeout(budget) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => {
                return Err(ExecError::RunnerUnavailable(format!(
                    "reading response: {e}"
                )))
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(ExecError::RunnerUnavailable(format!(
                    "no response within {} ms",
                    budget.as_millis()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ExecError::RunnerUnavailable("runner exited".into()))
            }
        };
        serde_json::from_str(&reply)
            .map_err(|e| ExecError::RunnerUnavailable(format!("malformed response line: {e}")))
    }
}

impl Runner for ProcessRunner {
    fn run(&self, req: &RunnerRequest) -> Result<RunnerResponse, ExecError> {
        let mut w = self.acquire()?;
        match self.exchange(&mut w, req) {
            Ok(resp) if resp.id == req.id => {
                self.release(w);
                Ok(resp)
            }
            Ok(resp) => {
                drop(w);
                self.retire();
                Err(ExecError::RunnerUnavailable(format!(
                    "protocol desync: sent id {:?}, got {:?}",
                    req.id, resp.id
                )))
            }
            Err(e) => {
                drop(w);
                self.retire();
                Err(e)
            }
        }
    }
}
