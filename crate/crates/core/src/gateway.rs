//! Completion interface over an OpenAI-compatible endpoint and an offline
//! fixture-backed mock.
//!
//! [`Gateway`] adds what the providers share: retries with exponential
//! backoff, a client-side call and token budget, a request rate limit and a
//! cap on in-flight requests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::Stage;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("request rejected ({status}): {body}")]
    InvalidRequest { status: u16, body: String },
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("missing mock fixture {0}")]
    MissingFixture(String),
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("provider returned {got} completions, expected {want}")]
    ShortResponse { got: usize, want: usize },
    #[error("run has no problems")]
    EmptyRun,
}

/// Outcome of a single provider attempt.
#[derive(Debug, Error)]
pub enum ProviderError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("{0}")]
    Transient(String),
    #[error("request rejected ({status}): {body}")]
    InvalidRequest { status: u16, body: String },
    #[error("missing mock fixture {0}")]
    MissingFixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Nucleus,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub strategy: Strategy,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n: 10,
            temperature: 0.8,
            top_p: 0.95,
            max_tokens: 1024,
            stop: Vec::new(),
            strategy: Strategy::Nucleus,
        }
    }
}

impl SamplingConfig {
    /// One deterministic completion at temperature 0.
    pub fn greedy() -> Self {
        SamplingConfig {
            n: 1,
            temperature: 0.0,
            strategy: Strategy::Greedy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 || self.temperature.is_infinite() {
            return bad(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Temperature actually sent: greedy always uses 0.
    pub fn effective_temperature(&self) -> f64 {
        match self.strategy {
            Strategy::Greedy => 0.0,
            Strategy::Nucleus => self.temperature,
        }
    }

    /// Stable digest of the sampling parameters, recorded as provenance.
    pub fn stable_hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("sampling config serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub sample_index: usize,
    pub provider: String,
    #[serde(default)]
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

/// One request as a provider sees it: `n` choices numbered from
/// `first_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderCall<'a> {
    pub task_id: &'a str,
    pub stage: Stage,
    pub prompt: &'a str,
    pub n: usize,
    pub first_index: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stop: &'a [String],
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    /// Performs one attempt. Must return exactly `call.n` completions with
    /// sample indices `first_index..first_index + n` or an error.
    fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError>;
}

/// Rough token estimate used for budget checks: one token per four bytes.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Replaces every character outside `[A-Za-z0-9._-]` with `_`, so task ids
/// such as `HumanEval/51` map to file names.
pub fn sanitize_key(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// File name of the fixture for one completion.
pub fn fixture_name(task_id: &str, stage: Stage, index: usize) -> String {
    format!("{}.{}.{}.txt", sanitize_key(task_id), stage, index)
}

/// Serves completions from `<task_id>.<stage>.<index>.txt` files, or from
/// an in-memory table keyed by the same names.
#[derive(Debug, Clone)]
pub struct MockProvider {
    source: MockSource,
}

#[derive(Debug, Clone)]
enum MockSource {
    Dir(PathBuf),
    Table(BTreeMap<String, String>),
}

impl MockProvider {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        MockProvider {
            source: MockSource::Dir(dir.into()),
        }
    }

    pub fn from_table<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        MockProvider {
            source: MockSource::Table(
                entries
                    .into_iter()
                    .map(|(k, v)| (k.into(), v.into()))
                    .collect(),
            ),
        }
    }

    fn lookup(&self, name: &str) -> Result<String, ProviderError> {
        match &self.source {
            MockSource::Table(t) => t
                .get(name)
                .cloned()
                .ok_or_else(|| ProviderError::MissingFixture(name.into())),
            MockSource::Dir(dir) => fs::read_to_string(dir.join(name)).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    ProviderError::MissingFixture(name.into())
                } else {
                    ProviderError::Transient(format!("reading fixture {name}: {e}"))
                }
            }),
        }
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
        (call.first_index..call.first_index + call.n)
            .map(|i| {
                let text = self.lookup(&fixture_name(call.task_id, call.stage, i))?;
                let usage = Usage {
                    prompt_tokens: estimate_tokens(call.prompt),
                    completion_tokens: estimate_tokens(&text),
                };
                Ok(Completion {
                    text,
                    sample_index: i,
                    provider: "mock".into(),
                    usage: Some(usage),
                    latency_ms: 0,
                })
            })
            .collect()
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct OpenAiProvider {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    id: String,
}

impl OpenAiProvider {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(format!("http client: {e}")))?;
        Ok(OpenAiProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            id: format!("openai:{model}"),
            model,
            client,
        })
    }

    fn body(&self, call: &ProviderCall<'_>) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": call.prompt}],
            "n": call.n,
            "temperature": call.temperature,
            "top_p": call.top_p,
            "max_tokens": call.max_tokens,
        });
        if !call.stop.is_empty() {
            body["stop"] = serde_json::json!(call.stop);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    #[serde(default)]
    index: Option<usize>,
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Provider for OpenAiProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
        let started = Instant::now();
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&self.body(call));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transient(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transient(format!("reading body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!(
                "HTTP {status}: {}",
                truncate(&text, 300)
            )));
        }
        if !status.is_success() {
            return Err(ProviderError::InvalidRequest {
                status: status.as_u16(),
                body: truncate(&text, 2000),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transient(format!("malformed response: {e}")))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let mut choices: Vec<(usize, String)> = parsed
            .choices
            .into_iter()
            .enumerate()
            .map(|(pos, c)| {
                (
                    c.index.unwrap_or(pos),
                    c.message.content.unwrap_or_default(),
                )
            })
            .collect();
        choices.sort_by_key(|(i, _)| *i);
        // Usage is reported for the whole request; attribute it to the first choice.
        Ok(choices
            .into_iter()
            .enumerate()
            .map(|(pos, (_, text))| Completion {
                text,
                sample_index: call.first_index + pos,
                provider: self.id.clone(),
                usage: if pos == 0 { parsed.usage } else { None },
                latency_ms,
            })
            .collect())
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Retry, budget and concurrency policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayPolicy {
    /// Retries after the first attempt for transient failures.
    pub retry_cap: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Maximum provider attempts over the gateway's lifetime.
    pub max_calls: Option<u64>,
    /// Maximum prompt plus completion tokens over the gateway's lifetime.
    pub max_tokens: Option<u64>,
    /// Minimum spacing between request starts; 0 disables the limiter.
    pub requests_per_second: f64,
    /// Maximum requests in flight at once.
    pub fanout: usize,
}

impl Default for GatewayPolicy {
    fn default() -> Self {
        GatewayPolicy {
            retry_cap: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            max_calls: None,
            max_tokens: None,
            requests_per_second: 0.0,
            fanout: 8,
        }
    }
}

impl GatewayPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub calls: u64,
    pub tokens: u64,
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Thread-safe front end shared by all pipeline workers.
pub struct Gateway {
    provider: Box<dyn Provider>,
    policy: GatewayPolicy,
    stats: Mutex<GatewayStats>,
    next_start: Mutex<Option<Instant>>,
    slots: Slots,
    sleep: fn(Duration),
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, policy: GatewayPolicy) -> Self {
        let fanout = policy.fanout.max(1);
        Gateway {
            provider,
            policy,
            stats: Mutex::new(GatewayStats::default()),
            next_start: Mutex::new(None),
            slots: Slots {
                free: Mutex::new(fanout),
                cv: Condvar::new(),
            },
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the sleep used for backoff, so tests need not wait.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn stats(&self) -> GatewayStats {
        *self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Returns exactly `cfg.n` completions ordered by sample index.
    ///
    /// Nucleus sampling issues one request for all `n`. Greedy sampling
    /// issues `n` requests of one completion each at temperature 0.
    pub fn complete(
        &self,
        task_id: &str,
        stage: Stage,
        prompt: &str,
        cfg: &SamplingConfig,
    ) -> Result<Vec<Completion>, GatewayError> {
        cfg.validate()?;
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest {
                status: 0,
                body: "empty prompt".into(),
            });
        }
        let batches: Vec<(usize, usize)> = match cfg.strategy {
            Strategy::Nucleus => vec![(0, cfg.n)],
            Strategy::Greedy => (0..cfg.n).map(|i| (i, 1)).collect(),
        };
        let mut out = Vec::with_capacity(cfg.n);
        for (first_index, n) in batches {
            let call = ProviderCall {
                task_id,
                stage,
                prompt,
                n,
                first_index,
                temperature: cfg.effective_temperature(),
                top_p: cfg.top_p,
                max_tokens: cfg.max_tokens,
                stop: &cfg.stop,
            };
            let got = self.send_with_retry(&call)?;
            if got.len() != n {
                return Err(GatewayError::ShortResponse {
                    got: got.len(),
                    want: n,
                });
            }
            out.extend(got);
        }
        out.sort_by_key(|c| c.sample_index);
        for (i, c) in out.iter_mut().enumerate() {
            c.sample_index = i;
        }
        Ok(out)
    }

    fn charge(&self, call: &ProviderCall<'_>) -> Result<(), GatewayError> {
        let mut stats = self.stats.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(max) = self.policy.max_calls {
            if stats.calls + 1 > max {
                return Err(GatewayError::BudgetExceeded(format!(
                    "call budget of {max} exhausted"
                )));
            }
        }
        if let Some(max) = self.policy.max_tokens {
            let worst = estimate_tokens(call.prompt) * call.n as u64
                + u64::from(call.max_tokens) * call.n as u64;
            if stats.tokens + worst > max {
                return Err(GatewayError::BudgetExceeded(format!(
                    "token budget of {max} would be crossed ({} used, up to {worst} requested)",
                    stats.tokens
                )));
            }
        }
        stats.calls += 1;
        Ok(())
    }

    fn record_usage(&self, call: &ProviderCall<'_>, got: &[Completion]) {
        let reported: u64 = got.iter().filter_map(|c| c.usage).map(|u| u.total()).sum();
        let used = if reported > 0 {
            reported
        } else {
            estimate_tokens(call.prompt) + got.iter().map(|c| estimate_tokens(&c.text)).sum::<u64>()
        };
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).tokens += used;
    }

    fn wait_rate_limit(&self) {
        if self.policy.requests_per_second <= 0.0 {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / self.policy.requests_per_second);
        let wait = {
            let mut next = self.next_start.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(start + interval);
            start - now
        };
        if !wait.is_zero() {
            (self.sleep)(wait);
        }
    }

    fn send_with_retry(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, GatewayError> {
        let mut attempt = 0u32;
        loop {
            self.charge(call)?;
            self.wait_rate_limit();
            let result = {
                let _slot = self.slots.acquire();
                self.provider.send(call)
            };
            match result {
                Ok(got) => {
                    self.record_usage(call, &got);
                    return Ok(got);
                }
                Err(ProviderError::InvalidRequest { status, body }) => {
                    return Err(GatewayError::InvalidRequest { status, body })
                }
                Err(ProviderError::MissingFixture(k)) => {
                    return Err(GatewayError::MissingFixture(k))
                }
                Err(ProviderError::Transient(msg)) => {
                    if attempt >= self.policy.retry_cap {
                        return Err(GatewayError::ProviderUnavailable {
                            attempts: attempt + 1,
                            last: msg,
                        });
                    }
                    log::warn!(
                        "transient provider failure (attempt {}): {msg}",
                        attempt + 1
                    );
                    (self.sleep)(self.policy.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Mean number of generated tests per problem.
pub fn count_generated_tests(per_problem: &[usize]) -> Result<f64, GatewayError> {
    if per_problem.is_empty() {
        return Err(GatewayError::EmptyRun);
    }
    Ok(per_problem.iter().sum::<usize>() as f64 / per_problem.len() as f64)
}

/// Writes completions as mock fixtures under `dir`, so a live run can be
/// replayed offline.
pub fn write_fixtures(
    dir: &Path,
    task_id: &str,
    stage: Stage,
    completions: &[Completion],
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for c in completions {
        fs::write(
            dir.join(fixture_name(task_id, stage, c.sample_index)),
            &c.text,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn no_sleep(_: Duration) {}

    struct Flaky {
        failures: AtomicUsize,
        fail_first: usize,
        error: fn() -> ProviderError,
        seen: Mutex<Vec<(usize, usize, f64)>>,
    }

    impl Provider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
            self.seen
                .lock()
                .unwrap()
                .push((call.first_index, call.n, call.temperature));
            if self.failures.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                return Err((self.error)());
            }
            Ok((call.first_index..call.first_index + call.n)
                .map(|i| Completion {
                    text: format!("c{i}"),
                    sample_index: i,
                    provider: "flaky".into(),
                    usage: None,
                    latency_ms: 1,
                })
                .collect())
        }
    }

    fn flaky(fail_first: usize, error: fn() -> ProviderError) -> Flaky {
        Flaky {
            failures: AtomicUsize::new(0),
            fail_first,
            error,
            seen: Mutex::new(Vec::new()),
        }
    }

    fn table() -> MockProvider {
        MockProvider::from_table([
            ("HumanEval_51.code.0.txt", "zero"),
            ("HumanEval_51.code.1.txt", "one"),
            ("HumanEval_51.code.2.txt", "two"),
            ("HumanEval_51.requirements.0.txt", "reqs"),
        ])
    }

    #[test]
    fn mock_returns_fixtures_in_index_order() {
        let gw = Gateway::new(Box::new(table()), GatewayPolicy::default());
        let cfg = SamplingConfig {
            n: 3,
            ..Default::default()
        };
        let got = gw.complete("HumanEval/51", Stage::Code, "p", &cfg).unwrap();
        let texts: Vec<_> = got.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["zero", "one", "two"]);
        assert_eq!(
            got.iter().map(|c| c.sample_index).collect::<Vec<_>>(),
            [0, 1, 2]
        );
        assert_eq!(gw.stats().calls, 1);
    }

    #[test]
    fn missing_fixture_names_key() {
        let gw = Gateway::new(Box::new(table()), GatewayPolicy::default());
        let cfg = SamplingConfig {
            n: 4,
            ..Default::default()
        };
        match gw.complete("HumanEval/51", Stage::Code, "p", &cfg) {
            Err(GatewayError::MissingFixture(k)) => assert_eq!(k, "HumanEval_51.code.3.txt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn greedy_forces_zero_temperature_one_per_request() {
        let p = Arc::new(flaky(0, || ProviderError::Transient("x".into())));
        struct Shared(Arc<Flaky>);
        impl Provider for Shared {
            fn id(&self) -> &str {
                "shared"
            }
            fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
                self.0.send(call)
            }
        }
        let gw = Gateway::new(Box::new(Shared(p.clone())), GatewayPolicy::default());
        let cfg = SamplingConfig {
            temperature: 0.7,
            ..SamplingConfig::greedy()
        };
        let got = gw.complete("t", Stage::Requirements, "p", &cfg).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(p.seen.lock().unwrap().as_slice(), &[(0, 1, 0.0)]);

        let cfg = SamplingConfig { n: 3, ..cfg };
        let got = gw.complete("t", Stage::Requirements, "p", &cfg).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(
            &p.seen.lock().unwrap()[1..],
            &[(0, 1, 0.0), (1, 1, 0.0), (2, 1, 0.0)]
        );
    }

    #[test]
    fn transient_failures_retry_then_succeed() {
        let gw = Gateway::new(
            Box::new(flaky(2, || ProviderError::Transient("503".into()))),
            GatewayPolicy::default(),
        )
        .with_sleep(no_sleep);
        let got = gw
            .complete("t", Stage::Code, "p", &SamplingConfig::default())
            .unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(gw.stats().calls, 3);
    }

    #[test]
    fn retries_are_capped() {
        let policy = GatewayPolicy {
            retry_cap: 2,
            ..Default::default()
        };
        let gw = Gateway::new(
            Box::new(flaky(99, || ProviderError::Transient("down".into()))),
            policy,
        )
        .with_sleep(no_sleep);
        match gw.complete("t", Stage::Code, "p", &SamplingConfig::default()) {
            Err(GatewayError::ProviderUnavailable { attempts, last }) => {
                assert_eq!(attempts, 3);
                assert_eq!(last, "down");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_request_is_not_retried() {
        let gw = Gateway::new(
            Box::new(flaky(99, || ProviderError::InvalidRequest {
                status: 400,
                body: "bad".into(),
            })),
            GatewayPolicy::default(),
        )
        .with_sleep(no_sleep);
        assert!(matches!(
            gw.complete("t", Stage::Code, "p", &SamplingConfig::default()),
            Err(GatewayError::InvalidRequest { status: 400, .. })
        ));
        assert_eq!(gw.stats().calls, 1);
    }

    #[test]
    fn call_and_token_budgets() {
        let policy = GatewayPolicy {
            max_calls: Some(1),
            ..Default::default()
        };
        let gw = Gateway::new(Box::new(table()), policy);
        let cfg = SamplingConfig::greedy();
        gw.complete("HumanEval/51", Stage::Requirements, "p", &cfg)
            .unwrap();
        assert!(matches!(
            gw.complete("HumanEval/51", Stage::Requirements, "p", &cfg),
            Err(GatewayError::BudgetExceeded(_))
        ));

        let policy = GatewayPolicy {
            max_tokens: Some(100),
            ..Default::default()
        };
        let gw = Gateway::new(Box::new(table()), policy);
        let cfg = SamplingConfig {
            max_tokens: 200,
            ..SamplingConfig::greedy()
        };
        assert!(matches!(
            gw.complete("HumanEval/51", Stage::Requirements, "p", &cfg),
            Err(GatewayError::BudgetExceeded(_))
        ));
        assert_eq!(gw.stats(), GatewayStats::default());
    }

    #[test]
    fn backoff_grows_exponentially_and_caps() {
        let p = GatewayPolicy {
            backoff_base_ms: 100,
            backoff_max_ms: 1000,
            ..Default::default()
        };
        let ms: Vec<u128> = (0..6).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.backoff(200).as_millis(), 1000);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let policy = GatewayPolicy {
            requests_per_second: 20.0,
            ..Default::default()
        };
        let gw = Gateway::new(Box::new(table()), policy);
        let start = Instant::now();
        for _ in 0..4 {
            gw.complete(
                "HumanEval/51",
                Stage::Requirements,
                "p",
                &SamplingConfig::greedy(),
            )
            .unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(140));
    }

    #[test]
    fn fanout_bounds_in_flight_requests() {
        struct Slow {
            inflight: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Provider for Slow {
            fn id(&self) -> &str {
                "slow"
            }
            fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
                let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.inflight.fetch_sub(1, Ordering::SeqCst);
                Ok(vec![Completion {
                    text: "x".into(),
                    sample_index: call.first_index,
                    provider: "slow".into(),
                    usage: None,
                    latency_ms: 20,
                }])
            }
        }
        let slow = Arc::new(Slow {
            inflight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        struct Shared(Arc<Slow>);
        impl Provider for Shared {
            fn id(&self) -> &str {
                "shared"
            }
            fn send(&self, call: &ProviderCall<'_>) -> Result<Vec<Completion>, ProviderError> {
                self.0.send(call)
            }
        }
        let gw = Arc::new(Gateway::new(
            Box::new(Shared(slow.clone())),
            GatewayPolicy {
                fanout: 2,
                ..Default::default()
            },
        ));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gw = gw.clone();
                std::thread::spawn(move || {
                    gw.complete("t", Stage::Code, "p", &SamplingConfig::greedy())
                        .unwrap()
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn config_validation_and_hash() {
        assert!(SamplingConfig {
            n: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplingConfig {
            top_p: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplingConfig {
            temperature: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let a = SamplingConfig::default();
        assert_eq!(a.n, 10);
        assert_eq!((a.temperature, a.top_p), (0.8, 0.95));
        assert_eq!(a.stable_hash(), SamplingConfig::default().stable_hash());
        assert_ne!(a.stable_hash(), SamplingConfig::greedy().stable_hash());
        let gw = Gateway::new(Box::new(table()), GatewayPolicy::default());
        assert!(gw
            .complete("t", Stage::Code, "  ", &SamplingConfig::default())
            .is_err());
    }

    #[test]
    fn sanitized_fixture_names() {
        assert_eq!(
            fixture_name("HumanEval/51", Stage::CodeTdd, 2),
            "HumanEval_51.code_tdd.2.txt"
        );
        assert_eq!(sanitize_key("a b:c.d-e_f"), "a_b_c.d-e_f");
    }

    #[test]
    fn generated_test_means() {
        assert_eq!(count_generated_tests(&[10, 14, 12]).unwrap(), 12.0);
        assert_eq!(count_generated_tests(&[0]).unwrap(), 0.0);
        assert!(matches!(
            count_generated_tests(&[]),
            Err(GatewayError::EmptyRun)
        ));
        // Ten problems whose per-category totals are 31, 31, 19, 20 and 10.
        let per_cat = [31usize, 31, 19, 20, 10];
        let mut counts = vec![0usize; 10];
        for total in per_cat {
            for i in 0..total {
                counts[i % 10] += 1;
            }
        }
        assert!((count_generated_tests(&counts).unwrap() - 11.1).abs() < 1e-12);
    }

    #[test]
    fn fixtures_round_trip_through_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cs = vec![Completion {
            text: "hello".into(),
            sample_index: 0,
            provider: "x".into(),
            usage: None,
            latency_ms: 5,
        }];
        write_fixtures(dir.path(), "a/b", Stage::Tests, &cs).unwrap();
        let gw = Gateway::new(
            Box::new(MockProvider::from_dir(dir.path())),
            GatewayPolicy::default(),
        );
        let got = gw
            .complete("a/b", Stage::Tests, "p", &SamplingConfig::greedy())
            .unwrap();
        assert_eq!(got[0].text, "hello");
        assert_eq!(got[0].latency_ms, 0);
    }
}
