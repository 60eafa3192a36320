//! Dataset loading, ground-truth quality control, the end-to-end pipeline
//! and report emission.
//!
//! A run produces a [`RunRecord`]: every prompt, completion, parsed
//! artifact and verdict matrix. Reports are a pure function of the record,
//! so `report.json` can be rebuilt from `record.json` at any time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{run_candidate, run_matrix, ExecError, ProcessRunner, Runner, StubRunner};
use crate::gateway::{
    Completion, Gateway, GatewayError, GatewayPolicy, GatewayStats, MockProvider, OpenAiProvider,
    Provider, SamplingConfig, Strategy,
};
use crate::model::{
    validate_problem, Category, CodeCandidate, GeneratedTest, Mode, Problem, Provenance,
    RequirementSet, ResourceLimits, Status, TestPayload,
};
use crate::parse::{
    extract_code_block, parse_requirements_doc_with_warnings, parse_test_doc, ParsedTestDoc,
};
use crate::prompt::{
    apply_preference, build_prompt_with, IclExample, PreferenceMode, PromptError, PromptPlan,
    Stage, Templates,
};
use crate::rank::{
    build_report, Normalization, PassKReport, ProblemVerdicts, RankError, WeightProfile,
};

/// Version written into every record; bumped on incompatible changes.
pub const RECORD_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("problem {0} has no canonical solution")]
    MissingGroundTruth(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Runner(#[from] ExecError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Dataset

#[derive(Deserialize)]
struct RawLimits {
    timeout_s: Option<f64>,
    memory_mb: Option<u64>,
}

/// On-disk problem: like [`Problem`] but with optional limits.
#[derive(Deserialize)]
struct RawProblem {
    #[serde(default)]
    schema_version: Option<u32>,
    task_id: String,
    mode: Mode,
    description: String,
    #[serde(default)]
    entry_point: Option<String>,
    #[serde(default)]
    canonical_solution: Option<String>,
    #[serde(default)]
    gt_tests: Vec<GeneratedTest>,
    #[serde(default)]
    limits: Option<RawLimits>,
}

impl RawProblem {
    fn into_problem(self) -> Problem {
        let defaults = ResourceLimits::default_for(self.mode);
        let limits = match self.limits {
            Some(l) => ResourceLimits {
                timeout_s: l.timeout_s.unwrap_or(defaults.timeout_s),
                memory_mb: l.memory_mb.unwrap_or(defaults.memory_mb),
            },
            None => defaults,
        };
        Problem {
            task_id: self.task_id,
            mode: self.mode,
            description: self.description,
            entry_point: self.entry_point,
            canonical_solution: self.canonical_solution,
            gt_tests: self.gt_tests,
            limits,
        }
    }
}

/// Parses a JSONL dataset, one problem per non-blank line. Missing limits
/// take the per-mode defaults. Every problem is validated; the first bad
/// line fails the whole load.
pub fn parse_dataset(text: &str) -> Result<Vec<Problem>, BenchError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| BenchError::Schema {
            line: line_no,
            message,
        };
        let raw: RawProblem = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        if let Some(v) = raw.schema_version {
            if v != 1 {
                return Err(schema(format!("unsupported schema_version {v}")));
            }
        }
        let p = raw.into_problem();
        let problems = validate_problem(&p);
        if !problems.is_empty() {
            return Err(schema(format!("{}: {}", p.task_id, problems.join("; "))));
        }
        if !ids.insert(p.task_id.clone()) {
            return Err(schema(format!("duplicate task_id {}", p.task_id)));
        }
        out.push(p);
    }
    if out.is_empty() {
        log::warn!("dataset has no problems");
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Problem>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text)
}

/// Writes problems as JSONL with explicit limits.
pub fn write_dataset(path: &Path, problems: &[Problem]) -> Result<(), BenchError> {
    let mut out = String::new();
    for p in problems {
        out.push_str(&serde_json::to_string(p).expect("problem serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Ground-truth quality control

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcDiscard {
    pub test_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcOutcome {
    pub task_id: String,
    /// Input order preserved.
    pub kept: Vec<GeneratedTest>,
    pub discarded: Vec<QcDiscard>,
}

/// Keeps the functional tests the canonical solution passes.
///
/// Non-functional tests are not checked and pass through unchanged, since a
/// reference solution is not expected to meet every quality target.
pub fn qc_filter_fr_tests(
    runner: &dyn Runner,
    problem: &Problem,
    tests: &[GeneratedTest],
) -> Result<QcOutcome, BenchError> {
    let source = problem
        .canonical_solution
        .as_ref()
        .ok_or_else(|| BenchError::MissingGroundTruth(problem.task_id.clone()))?;
    let checked: Vec<GeneratedTest> = tests
        .iter()
        .filter(|t| t.category.is_functional() && t.is_executable())
        .cloned()
        .collect();
    let mut verdicts = BTreeMap::new();
    if !checked.is_empty() {
        let candidate = CodeCandidate {
            task_id: problem.task_id.clone(),
            sample_index: 0,
            source: source.clone(),
            reasoning: None,
            provenance: Provenance {
                provider: "canonical".into(),
                sampling_hash: String::new(),
            },
        };
        for v in run_candidate(runner, &candidate, &checked, &problem.limits, problem.mode)? {
            verdicts.insert(v.test_id.clone(), v);
        }
    }
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for t in tests {
        match verdicts.remove(&t.test_id) {
            Some(v) if !v.passed() => discarded.push(QcDiscard {
                test_id: t.test_id.clone(),
                status: v.status,
                message: v.message,
            }),
            _ => kept.push(t.clone()),
        }
    }
    Ok(QcOutcome {
        task_id: problem.task_id.clone(),
        kept,
        discarded,
    })
}

/// Applies [`qc_filter_fr_tests`] to every problem's ground-truth tests.
pub fn qc_dataset(
    runner: &dyn Runner,
    problems: &[Problem],
) -> Result<(Vec<Problem>, Vec<QcOutcome>), BenchError> {
    let mut out = Vec::with_capacity(problems.len());
    let mut log = Vec::with_capacity(problems.len());
    for p in problems {
        let qc = qc_filter_fr_tests(runner, p, &p.gt_tests)?;
        let mut p = p.clone();
        p.gt_tests = qc.kept.clone();
        out.push(p);
        log.push(qc);
    }
    Ok((out, log))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Mock fixtures directory.
    pub fixtures_dir: Option<PathBuf>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub timeout_s: f64,
    /// Also write every fresh completion as a mock fixture here.
    pub record_fixtures: Option<PathBuf>,
    #[serde(flatten)]
    pub policy: GatewayPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            fixtures_dir: None,
            model: None,
            base_url: None,
            timeout_s: 120.0,
            record_fixtures: None,
            policy: GatewayPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunnerKind {
    #[default]
    Stub,
    Process,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    pub kind: RunnerKind,
    /// Command line of the sandbox runner process.
    pub command: Vec<String>,
    /// Runner processes kept alive at once.
    pub workers: usize,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            kind: RunnerKind::Stub,
            command: Vec::new(),
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceConfig {
    pub mode: PreferenceMode,
    pub targets: Vec<Category>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Requirements, Stage::Code, Stage::Tests]
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 5]
}

fn default_parallelism() -> usize {
    4
}

/// Run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Free-form run label copied into the report, e.g. the sampling seed
    /// a provider was asked to use.
    #[serde(default)]
    pub seed_label: String,
    /// Stages allowed to call the provider. Others are served from the
    /// completion cache only.
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default = "default_ks")]
    pub k: Vec<usize>,
    /// Worker threads for problems and candidate execution.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Example directories; absent means the built-in example, an empty
    /// list means zero-shot.
    #[serde(default)]
    pub examples: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub nfr_block: bool,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub weights: BTreeMap<Category, f64>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub preference: Option<PreferenceConfig>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub runner: RunnerConfig,
}

impl RunConfig {
    /// Minimal config over `dataset`, mostly for tests.
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            output_dir: default_output_dir(),
            seed_label: String::new(),
            stages: default_stages(),
            k: default_ks(),
            parallelism: default_parallelism(),
            examples: None,
            templates_dir: None,
            nfr_block: false,
            sampling: SamplingConfig::default(),
            weights: BTreeMap::new(),
            normalization: Normalization::default(),
            preference: None,
            provider: ProviderConfig::default(),
            runner: RunnerConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths in it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Joins every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output_dir);
        if let Some(ex) = &mut self.examples {
            ex.iter_mut().for_each(fix);
        }
        if let Some(t) = &mut self.templates_dir {
            fix(t);
        }
        if let Some(d) = &mut self.provider.fixtures_dir {
            fix(d);
        }
        if let Some(d) = &mut self.provider.record_fixtures {
            fix(d);
        }
    }

    pub fn weight_profile(&self) -> Result<WeightProfile, BenchError> {
        WeightProfile::new(self.weights.clone(), self.normalization).map_err(BenchError::from)
    }

    /// The stage producing code candidates.
    pub fn code_stage(&self) -> Stage {
        if self.stages.contains(&Stage::CodeTdd) {
            Stage::CodeTdd
        } else {
            Stage::Code
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.stages.is_empty() {
            return bad("stages must not be empty".into());
        }
        let uniq: BTreeSet<Stage> = self.stages.iter().copied().collect();
        if uniq.len() != self.stages.len() {
            return bad("stages contains duplicates".into());
        }
        if uniq.contains(&Stage::Code) && uniq.contains(&Stage::CodeTdd) {
            return bad("code and code_tdd are alternatives; enable one".into());
        }
        if self.k.is_empty() {
            return bad("k must list at least one value".into());
        }
        if let Some(k) = self.k.iter().find(|&&k| k == 0 || k > self.sampling.n) {
            return bad(format!("k={k} outside 1..={}", self.sampling.n));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        self.sampling.validate()?;
        self.weight_profile()?;
        if let Some(p) = &self.preference {
            let targets: BTreeSet<Category> = p.targets.iter().copied().collect();
            crate::prompt::preference_sentence(&targets)?;
        }
        match self.provider.kind {
            ProviderKind::Mock if self.provider.fixtures_dir.is_none() => {
                return bad("mock provider needs provider.fixtures_dir".into())
            }
            ProviderKind::Openai if self.provider.model.is_none() => {
                return bad("openai provider needs provider.model".into())
            }
            _ => {}
        }
        if self.provider.timeout_s.is_nan() || self.provider.timeout_s <= 0.0 {
            return bad("provider.timeout_s must be positive".into());
        }
        if self.provider.policy.fanout == 0 {
            return bad("provider.fanout must be at least 1".into());
        }
        if self.runner.kind == RunnerKind::Process && self.runner.command.is_empty() {
            return bad("process runner needs runner.command".into());
        }
        if self.runner.workers == 0 {
            return bad("runner.workers must be at least 1".into());
        }
        Ok(())
    }
}

/// Builds the configured provider behind a gateway. `api_key` and
/// `base_url` come from the caller (usually the environment); `base_url`
/// overrides the config.
pub fn build_gateway(
    cfg: &RunConfig,
    api_key: Option<String>,
    base_url: Option<String>,
) -> Result<Gateway, BenchError> {
    let provider: Box<dyn Provider> = match cfg.provider.kind {
        ProviderKind::Mock => Box::new(MockProvider::from_dir(
            cfg.provider
                .fixtures_dir
                .clone()
                .ok_or_else(|| BenchError::Config("missing fixtures_dir".into()))?,
        )),
        ProviderKind::Openai => {
            // An empty override (e.g. a blank env var) falls back to the config.
            let base = base_url
                .filter(|u| !u.trim().is_empty())
                .or_else(|| cfg.provider.base_url.clone())
                .ok_or_else(|| BenchError::Config("openai provider needs a base URL".into()))?;
            let model = cfg.provider.model.clone().unwrap_or_default();
            Box::new(OpenAiProvider::new(
                base,
                api_key,
                model,
                Duration::from_secs_f64(cfg.provider.timeout_s),
            )?)
        }
    };
    Ok(Gateway::new(provider, cfg.provider.policy.clone()))
}

pub fn build_runner(cfg: &RunnerConfig) -> Result<Box<dyn Runner>, BenchError> {
    Ok(match cfg.kind {
        RunnerKind::Stub => Box::new(StubRunner),
        RunnerKind::Process => Box::new(ProcessRunner::new(cfg.command.clone(), cfg.workers)?),
    })
}

// ---------------------------------------------------------------------------
// Completion cache

/// Completions on disk, keyed by a digest of everything that determines
/// them.
#[derive(Debug, Clone)]
pub struct CompletionCache {
    dir: PathBuf,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    provider: &'a str,
    task_id: &'a str,
    stage: Stage,
    prompt: &'a str,
    sampling: &'a SamplingConfig,
}

impl CompletionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CompletionCache { dir: dir.into() }
    }

    pub fn key(
        provider: &str,
        task_id: &str,
        stage: Stage,
        prompt: &str,
        sampling: &SamplingConfig,
    ) -> String {
        let k = CacheKey {
            provider,
            task_id,
            stage,
            prompt,
            sampling,
        };
        let text = serde_json::to_string(&k).expect("cache key serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<Completion>> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {key}: {e}");
                None
            }
        }
    }

    /// Writes through a temporary file so readers never see a partial entry.
    pub fn put(&self, key: &str, completions: &[Completion]) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut tmp = tempfile_in(&self.dir, key)?;
        tmp.1.write_all(
            serde_json::to_string(completions)
                .expect("completions serialize")
                .as_bytes(),
        )?;
        drop(tmp.1);
        fs::rename(&tmp.0, self.path(key))
    }
}

fn tempfile_in(dir: &Path, key: &str) -> std::io::Result<(PathBuf, fs::File)> {
    let name = format!(
        ".{key}.{}.{:?}.tmp",
        std::process::id(),
        std::thread::current().id()
    );
    let path = dir.join(name.replace(['(', ')'], ""));
    let f = fs::File::create(&path)?;
    Ok((path, f))
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub prompt: String,
    pub completions: Vec<Completion>,
    /// Served from the cache rather than the provider.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub task_id: String,
    pub mode: Mode,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub requirements: RequirementSet,
    pub requirement_warnings: Vec<String>,
    pub candidates: Vec<CodeCandidate>,
    pub tests: ParsedTestDoc,
    /// Absent for generation-only runs.
    pub verdicts: Option<ProblemVerdicts>,
    pub stage_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedProblem {
    pub task_id: String,
    /// `provider`, `prompt`, `cache` or `runner`.
    pub cause: String,
    pub reason: String,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: u32,
    pub config: RunConfig,
    pub provider: String,
    pub problems: Vec<ProblemRecord>,
    pub skipped: Vec<SkippedProblem>,
    pub gateway: GatewayStats,
    pub total_ms: u64,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let rec: RunRecord = serde_json::from_str(&text).map_err(|source| BenchError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if rec.format != RECORD_FORMAT {
            return Err(BenchError::Config(format!(
                "unsupported record format {}",
                rec.format
            )));
        }
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// Removes every `*_ms` field and the gateway counters, which vary between
/// otherwise identical runs.
pub fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_ms") && k != "gateway" && k != "cached");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(xs) => xs.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Pipeline

enum Failure {
    Provider(GatewayError),
    Prompt(PromptError),
    NotCached(Stage),
    Runner(ExecError),
}

impl Failure {
    fn into_skip(self, task_id: &str) -> SkippedProblem {
        let (cause, reason) = match self {
            Failure::Provider(e) => ("provider", e.to_string()),
            Failure::Prompt(e) => ("prompt", e.to_string()),
            Failure::NotCached(s) => (
                "cache",
                format!("stage {s} is disabled and has no cached completions"),
            ),
            Failure::Runner(e) => ("runner", e.to_string()),
        };
        SkippedProblem {
            task_id: task_id.to_string(),
            cause: cause.into(),
            reason,
        }
    }
}

/// Runs the configured stages over a dataset.
pub struct Pipeline<'a> {
    cfg: &'a RunConfig,
    gateway: &'a Gateway,
    runner: Option<&'a dyn Runner>,
    templates: Templates,
    examples: Vec<IclExample>,
    cache: CompletionCache,
    enabled: BTreeSet<Stage>,
}

impl<'a> Pipeline<'a> {
    /// `runner: None` runs generation only.
    pub fn new(
        cfg: &'a RunConfig,
        gateway: &'a Gateway,
        runner: Option<&'a dyn Runner>,
    ) -> Result<Self, BenchError> {
        cfg.validate()?;
        let templates = match &cfg.templates_dir {
            Some(d) => Templates::load_dir(d)?,
            None => Templates::builtin(),
        };
        let examples = match &cfg.examples {
            None => vec![IclExample::builtin()],
            Some(dirs) => dirs
                .iter()
                .map(|d| IclExample::load_dir(d))
                .collect::<Result<_, _>>()?,
        };
        Ok(Pipeline {
            cfg,
            gateway,
            runner,
            templates,
            examples,
            cache: CompletionCache::new(cfg.output_dir.join("cache")),
            enabled: cfg.stages.iter().copied().collect(),
        })
    }

    /// Processes every problem. Problems whose generation or execution
    /// infrastructure fails are skipped and listed in the record.
    pub fn run(&self, problems: &[Problem]) -> Result<RunRecord, BenchError> {
        let start = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.parallelism)
            .build()
            .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
        let results: Vec<Result<ProblemRecord, SkippedProblem>> = pool.install(|| {
            problems
                .par_iter()
                .map(|p| self.problem(p).map_err(|f| f.into_skip(&p.task_id)))
                .collect()
        });
        let mut record = RunRecord {
            format: RECORD_FORMAT,
            config: self.cfg.clone(),
            provider: self.gateway.provider_id().to_string(),
            problems: Vec::new(),
            skipped: Vec::new(),
            gateway: GatewayStats::default(),
            total_ms: 0,
        };
        for r in results {
            match r {
                Ok(p) => record.problems.push(p),
                Err(s) => {
                    log::warn!("skipping {}: {}", s.task_id, s.reason);
                    record.skipped.push(s);
                }
            }
        }
        record.gateway = self.gateway.stats();
        record.total_ms = start.elapsed().as_millis() as u64;
        Ok(record)
    }

    fn plan(&self, stage: Stage) -> Result<PromptPlan, Failure> {
        let mut plan =
            PromptPlan::new(stage, self.examples.clone()).with_nfr_block(self.cfg.nfr_block);
        if let Some(p) = &self.cfg.preference {
            let targets: BTreeSet<Category> = p.targets.iter().copied().collect();
            plan = apply_preference(plan, p.mode, &targets).map_err(Failure::Prompt)?;
        }
        Ok(plan)
    }

    fn sampling(&self, stage: Stage) -> SamplingConfig {
        match stage {
            Stage::Code | Stage::CodeTdd => self.cfg.sampling.clone(),
            Stage::Requirements | Stage::Tests => SamplingConfig {
                n: 1,
                temperature: 0.0,
                strategy: Strategy::Greedy,
                ..self.cfg.sampling.clone()
            },
        }
    }

    /// Cached completions, else a provider call if the stage is enabled.
    /// `Ok(None)` when the stage is disabled and nothing is cached.
    fn stage(
        &self,
        problem: &Problem,
        stage: Stage,
        plan: PromptPlan,
    ) -> Result<Option<StageRecord>, Failure> {
        let prompt = build_prompt_with(&self.templates, &plan, problem).map_err(Failure::Prompt)?;
        let sampling = self.sampling(stage);
        let key = CompletionCache::key(
            self.gateway.provider_id(),
            &problem.task_id,
            stage,
            &prompt,
            &sampling,
        );
        if let Some(completions) = self.cache.get(&key) {
            return Ok(Some(StageRecord {
                prompt,
                completions,
                cached: true,
            }));
        }
        if !self.enabled.contains(&stage) {
            return Ok(None);
        }
        let completions = self
            .gateway
            .complete(&problem.task_id, stage, &prompt, &sampling)
            .map_err(Failure::Provider)?;
        if let Err(e) = self.cache.put(&key, &completions) {
            log::warn!("cache write failed for {}: {e}", problem.task_id);
        }
        if let Some(dir) = &self.cfg.provider.record_fixtures {
            if let Err(e) =
                crate::gateway::write_fixtures(dir, &problem.task_id, stage, &completions)
            {
                log::warn!("fixture write failed for {}: {e}", problem.task_id);
            }
        }
        Ok(Some(StageRecord {
            prompt,
            completions,
            cached: false,
        }))
    }

    fn required(
        &self,
        problem: &Problem,
        stage: Stage,
        plan: PromptPlan,
    ) -> Result<StageRecord, Failure> {
        self.stage(problem, stage, plan)?
            .ok_or(Failure::NotCached(stage))
    }

    fn problem(&self, problem: &Problem) -> Result<ProblemRecord, Failure> {
        let execute = self.runner.is_some();
        let code_stage = self.cfg.code_stage();
        let want_code = execute || self.enabled.contains(&code_stage);
        let want_tests =
            self.enabled.contains(&Stage::Tests) || (want_code && code_stage == Stage::CodeTdd);
        let mut stage_ms = BTreeMap::new();
        let mut stages = BTreeMap::new();

        let t0 = Instant::now();
        let req = self.required(
            problem,
            Stage::Requirements,
            self.plan(Stage::Requirements)?,
        )?;
        stage_ms.insert(
            Stage::Requirements.to_string(),
            t0.elapsed().as_millis() as u64,
        );
        let req_text = req.completions[0].text.clone();
        let (requirements, requirement_warnings) = parse_requirements_doc_with_warnings(&req_text);
        stages.insert(Stage::Requirements, req);

        let tests_plan = self.plan(Stage::Tests)?.with_requirements(req_text.clone());
        let run_tests = || -> Result<Option<StageRecord>, Failure> {
            if want_tests {
                self.required(problem, Stage::Tests, tests_plan.clone())
                    .map(Some)
            } else {
                // Optional: without generated tests the ranking falls back
                // to sample order.
                self.stage(problem, Stage::Tests, tests_plan.clone())
            }
        };
        let run_code = |tests_text: Option<&str>| -> Result<Option<StageRecord>, Failure> {
            if !want_code {
                return Ok(None);
            }
            let mut plan = self.plan(code_stage)?.with_requirements(req_text.clone());
            if let Some(t) = tests_text {
                plan = plan.with_tests(t.to_string());
            }
            self.required(problem, code_stage, plan).map(Some)
        };

        let t1 = Instant::now();
        let (code, tests) = if code_stage == Stage::CodeTdd && want_code {
            let tests = run_tests()?;
            let text = tests.as_ref().map(|s| s.completions[0].text.clone());
            (run_code(text.as_deref())?, tests)
        } else {
            let (c, t) = rayon::join(|| run_code(None), run_tests);
            (c?, t?)
        };
        stage_ms.insert("generation".into(), t1.elapsed().as_millis() as u64);

        let sampling_hash = self.sampling(code_stage).stable_hash();
        let candidates: Vec<CodeCandidate> = code
            .as_ref()
            .map(|s| {
                s.completions
                    .iter()
                    .map(|c| CodeCandidate {
                        task_id: problem.task_id.clone(),
                        sample_index: c.sample_index,
                        source: extract_code_block(&c.text).unwrap_or_else(|e| {
                            log::warn!("{}#{}: {e}", problem.task_id, c.sample_index);
                            String::new()
                        }),
                        reasoning: None,
                        provenance: Provenance {
                            provider: c.provider.clone(),
                            sampling_hash: sampling_hash.clone(),
                        },
                    })
                    .collect()
            })
            .unwrap_or_default();
        let parsed = tests
            .as_ref()
            .map(|s| parse_test_doc(&s.completions[0].text, problem.mode))
            .unwrap_or_default();
        if let Some(s) = code {
            stages.insert(code_stage, s);
        }
        if let Some(s) = tests {
            stages.insert(Stage::Tests, s);
        }

        let verdicts = match self.runner {
            Some(runner) => {
                let t2 = Instant::now();
                let v = execute_problem(
                    runner,
                    problem,
                    &candidates,
                    &parsed.tests,
                    self.cfg.parallelism,
                )
                .map_err(Failure::Runner)?;
                stage_ms.insert("execution".into(), t2.elapsed().as_millis() as u64);
                Some(v)
            }
            None => None,
        };
        Ok(ProblemRecord {
            task_id: problem.task_id.clone(),
            mode: problem.mode,
            stages,
            requirements,
            requirement_warnings,
            candidates,
            tests: parsed,
            verdicts,
            stage_ms,
        })
    }
}

/// Runs every candidate against the generated and the ground-truth tests.
pub fn execute_problem(
    runner: &dyn Runner,
    problem: &Problem,
    candidates: &[CodeCandidate],
    gen_tests: &[GeneratedTest],
    parallelism: usize,
) -> Result<ProblemVerdicts, ExecError> {
    let matrix = |tests: &[GeneratedTest]| {
        if tests.is_empty() {
            // Every candidate gets an empty row so it stays in the pool.
            Ok(crate::model::VerdictMatrix {
                rows: candidates
                    .iter()
                    .map(|c| (c.sample_index, Vec::new()))
                    .collect(),
                aborted: Vec::new(),
            })
        } else {
            run_matrix(
                runner,
                candidates,
                tests,
                &problem.limits,
                problem.mode,
                parallelism,
            )
        }
    };
    Ok(ProblemVerdicts {
        task_id: problem.task_id.clone(),
        gen_tests: gen_tests.to_vec(),
        gen: matrix(gen_tests)?,
        gt_tests: problem.gt_tests.clone(),
        gt: matrix(&problem.gt_tests)?,
    })
}

/// Loads the dataset named by `cfg` and runs the pipeline.
pub fn run_pipeline(
    cfg: &RunConfig,
    gateway: &Gateway,
    runner: Option<&dyn Runner>,
) -> Result<RunRecord, BenchError> {
    let problems = load_dataset(&cfg.dataset)?;
    Pipeline::new(cfg, gateway, runner)?.run(&problems)
}

/// Re-executes the stored candidates and tests of a record, e.g. with a
/// different runner.
pub fn reexecute(
    record: &RunRecord,
    problems: &[Problem],
    runner: &dyn Runner,
) -> Result<RunRecord, BenchError> {
    let by_id: BTreeMap<&str, &Problem> =
        problems.iter().map(|p| (p.task_id.as_str(), p)).collect();
    let mut out = record.clone();
    let mut kept = Vec::new();
    for mut pr in out.problems.drain(..) {
        let Some(problem) = by_id.get(pr.task_id.as_str()) else {
            out.skipped.push(SkippedProblem {
                task_id: pr.task_id.clone(),
                cause: "dataset".into(),
                reason: "problem not in dataset".into(),
            });
            continue;
        };
        let t = Instant::now();
        match execute_problem(
            runner,
            problem,
            &pr.candidates,
            &pr.tests.tests,
            record.config.parallelism,
        ) {
            Ok(v) => {
                pr.verdicts = Some(v);
                pr.stage_ms
                    .insert("execution".into(), t.elapsed().as_millis() as u64);
                kept.push(pr);
            }
            Err(e) => out.skipped.push(Failure::Runner(e).into_skip(&pr.task_id)),
        }
    }
    out.problems = kept;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports

/// Aggregate report. Contains no timings, so identical inputs give
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provider: String,
    pub seed_label: String,
    pub problems_total: usize,
    pub problems_scored: usize,
    pub skipped: Vec<SkippedProblem>,
    /// Mean generated tests per problem; absent without problems.
    pub avg_generated_tests: Option<f64>,
    pub generated_tests_by_category: BTreeMap<Category, usize>,
    pub weights: WeightProfile,
    pub passk: PassKReport,
}

/// Computes the report from a record.
pub fn build_run_report(record: &RunRecord) -> Result<Report, BenchError> {
    let weights = record.config.weight_profile()?;
    let pvs: Vec<ProblemVerdicts> = record
        .problems
        .iter()
        .filter_map(|p| p.verdicts.clone())
        .collect();
    let passk = build_report(&pvs, &record.config.k, &weights)?;
    let counts: Vec<usize> = record
        .problems
        .iter()
        .map(|p| p.tests.tests.len())
        .collect();
    let mut by_cat: BTreeMap<Category, usize> = Category::ALL.into_iter().map(|c| (c, 0)).collect();
    for p in &record.problems {
        for (c, n) in p.tests.count_by_category() {
            *by_cat.entry(c).or_default() += n;
        }
    }
    Ok(Report {
        provider: record.provider.clone(),
        seed_label: record.config.seed_label.clone(),
        problems_total: record.problems.len() + record.skipped.len(),
        problems_scored: passk.problems.len(),
        skipped: record.skipped.clone(),
        avg_generated_tests: crate::gateway::count_generated_tests(&counts).ok(),
        generated_tests_by_category: by_cat,
        weights,
        passk,
    })
}

fn pct(x: Option<&f64>) -> String {
    match x {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".into(),
    }
}

/// Human-readable table of a report.
pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    let ks = &report.passk.ks;
    let _ = writeln!(s, "provider: {}", report.provider);
    if report.problems_scored == 0 {
        let _ = writeln!(
            s,
            "0 problems scored ({} in dataset, {} skipped)",
            report.problems_total,
            report.skipped.len()
        );
    } else {
        let _ = writeln!(
            s,
            "problems: {} scored, {} skipped, {} excluded",
            report.problems_scored,
            report.skipped.len(),
            report.passk.excluded.len()
        );
    }
    if let Some(avg) = report.avg_generated_tests {
        let _ = writeln!(s, "generated tests per problem: {avg:.2}");
    }
    let header: String = ks
        .iter()
        .map(|k| format!("{:>9}", format!("k={k}")))
        .collect();
    let _ = writeln!(s, "\nPass@k (%), functional ground truth");
    let _ = writeln!(s, "{:<28}{header}", "");
    for (name, row) in [
        ("unfiltered", &report.passk.unfiltered),
        ("filtered", &report.passk.filtered),
    ] {
        let cells: String = ks
            .iter()
            .map(|k| format!("{:>9}", pct(row.get(k))))
            .collect();
        let _ = writeln!(s, "{name:<28}{cells}");
    }
    let _ = writeln!(s, "\nPass@k (%) per category, unfiltered / filtered");
    let _ = writeln!(s, "{:<28}{:>9}{header}", "", "problems");
    for row in &report.passk.per_category {
        for (name, vals) in [("", &row.unfiltered), (" (filtered)", &row.filtered)] {
            let cells: String = ks
                .iter()
                .map(|k| format!("{:>9}", pct(vals.get(k))))
                .collect();
            let label = format!("{}{name}", row.label);
            let _ = writeln!(s, "{label:<28}{:>9}{cells}", row.problems);
        }
    }
    let _ = writeln!(
        s,
        "\nThe All row counts every ground-truth test, functional ones included."
    );
    for sk in &report.skipped {
        let _ = writeln!(s, "skipped {} ({}): {}", sk.task_id, sk.cause, sk.reason);
    }
    s
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn emit_report(record: &RunRecord, dir: &Path) -> Result<Report, BenchError> {
    let report = build_run_report(record)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let jp = dir.join("report.json");
    fs::write(&jp, json).map_err(io_err(&jp))?;
    let tp = dir.join("report.txt");
    fs::write(&tp, render_text(&report)).map_err(io_err(&tp))?;
    Ok(report)
}

/// Counts tests of each payload kind, for diagnostics.
pub fn kind_counts(tests: &[GeneratedTest]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for t in tests {
        let k = match t.payload {
            TestPayload::Assertion { .. } => "assertion",
            TestPayload::Stdio { .. } => "stdio",
            TestPayload::CcThreshold { .. } => "cc_threshold",
            TestPayload::ReliabilityMarker {} => "reliability_marker",
        };
        *m.entry(k).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"task_id":"t/1","mode":"function","description":"d","entry_point":"f","gt_tests":[{"test_id":"g1","category":"fr_general","kind":"assertion","payload":{"assertion_code":"assert f() == 1"}}]}"#;

    #[test]
    fn dataset_defaults_limits() {
        let ps = parse_dataset(&format!("{LINE}\n\n")).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].limits, ResourceLimits::default_for(Mode::Function));
    }

    #[test]
    fn dataset_reports_line_numbers() {
        let text = format!("{LINE}\n{{\"task_id\":\"x\"}}\n");
        match parse_dataset(&text) {
            Err(BenchError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_duplicates_and_bad_versions() {
        assert!(matches!(
            parse_dataset(&format!("{LINE}\n{LINE}\n")),
            Err(BenchError::Schema { line: 2, .. })
        ));
        let v2 = LINE.replacen('{', "{\"schema_version\":2,", 1);
        assert!(matches!(
            parse_dataset(&v2),
            Err(BenchError::Schema { line: 1, .. })
        ));
        let stdio_with_entry = LINE.replace("\"function\"", "\"stdio\"");
        assert!(parse_dataset(&stdio_with_entry).is_err());
    }

    #[test]
    fn empty_dataset_is_ok() {
        assert!(parse_dataset("\n").unwrap().is_empty());
    }

    #[test]
    fn qc_requires_canonical() {
        let p = parse_dataset(LINE).unwrap().remove(0);
        assert!(matches!(
            qc_filter_fr_tests(&StubRunner, &p, &p.gt_tests),
            Err(BenchError::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn qc_keeps_passing_and_nfr() {
        let mut p = parse_dataset(LINE).unwrap().remove(0);
        p.canonical_solution = Some("def f():\n    return 1\n# stub:fail bad\n".into());
        let tests = vec![
            GeneratedTest::assertion("ok", Category::FrGeneral, "assert f() == 1"),
            GeneratedTest::assertion("bad", Category::FrEdge, "assert f() == 2"),
            GeneratedTest::assertion("bad_perf", Category::NfrTime, "assert f() == 3"),
        ];
        let qc = qc_filter_fr_tests(&StubRunner, &p, &tests).unwrap();
        let kept: Vec<&str> = qc.kept.iter().map(|t| t.test_id.as_str()).collect();
        assert_eq!(kept, ["ok", "bad_perf"]);
        assert_eq!(qc.discarded.len(), 1);
        assert_eq!(qc.discarded[0].status, Status::Fail);
    }

    #[test]
    fn config_validation() {
        let base = "dataset = \"d.jsonl\"\n[provider]\nfixtures_dir = \"fx\"\n";
        let cfg = RunConfig::from_toml(base).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.stages, default_stages());

        let bad_k = format!("k = [0]\n{base}");
        assert!(RunConfig::from_toml(&bad_k).unwrap().validate().is_err());
        let big_k = format!("k = [11]\n{base}");
        assert!(RunConfig::from_toml(&big_k).unwrap().validate().is_err());
        let both = format!("stages = [\"requirements\", \"code\", \"code_tdd\"]\n{base}");
        assert!(RunConfig::from_toml(&both).unwrap().validate().is_err());
        let weights = format!("{base}[weights]\nfr_general = -1.0\n");
        assert!(RunConfig::from_toml(&weights).unwrap().validate().is_err());
        assert!(RunConfig::from_toml("dataset = \"x\"\nbogus = 1\n").is_err());
        let fr_pref =
            format!("{base}[preference]\nmode = \"instruction\"\ntargets = [\"fr_edge\"]\n");
        assert!(RunConfig::from_toml(&fr_pref).unwrap().validate().is_err());
    }

    #[test]
    fn config_rebases_paths() {
        let mut cfg =
            RunConfig::from_toml("dataset = \"d.jsonl\"\n[provider]\nfixtures_dir = \"/abs\"\n")
                .unwrap();
        cfg.rebase(Path::new("/base"));
        assert_eq!(cfg.dataset, PathBuf::from("/base/d.jsonl"));
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.provider.fixtures_dir, Some(PathBuf::from("/abs")));
    }

    #[test]
    fn cache_key_depends_on_inputs() {
        let s = SamplingConfig::default();
        let a = CompletionCache::key("mock", "t", Stage::Code, "p", &s);
        assert_eq!(a, CompletionCache::key("mock", "t", Stage::Code, "p", &s));
        assert_ne!(a, CompletionCache::key("mock", "t", Stage::Code, "p2", &s));
        assert_ne!(a, CompletionCache::key("other", "t", Stage::Code, "p", &s));
        assert_ne!(
            a,
            CompletionCache::key("mock", "t", Stage::Code, "p", &SamplingConfig::greedy())
        );
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::new(dir.path().join("c"));
        assert!(cache.get("k").is_none());
        let cs = vec![Completion {
            text: "x".into(),
            sample_index: 0,
            provider: "mock".into(),
            usage: None,
            latency_ms: 3,
        }];
        cache.put("k", &cs).unwrap();
        assert_eq!(cache.get("k").unwrap(), cs);
    }

    #[test]
    fn strip_timing_is_recursive() {
        let mut v = serde_json::json!({"a_ms": 1, "b": [{"wall_ms": 2, "c": 3}], "gateway": {}});
        strip_timing(&mut v);
        assert_eq!(v, serde_json::json!({"b": [{"c": 3}]}));
    }

    #[test]
    fn zero_problem_report_has_banner() {
        let rec = RunRecord {
            format: RECORD_FORMAT,
            config: RunConfig::new("d"),
            provider: "mock".into(),
            problems: vec![],
            skipped: vec![],
            gateway: GatewayStats::default(),
            total_ms: 0,
        };
        let r = build_run_report(&rec).unwrap();
        assert_eq!(r.problems_scored, 0);
        assert!(r.avg_generated_tests.is_none());
        assert!(render_text(&r).starts_with("provider: mock\n0 problems scored"));
    }
}
