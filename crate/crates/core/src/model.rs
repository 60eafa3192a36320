//! Shared domain types: problems, requirement documents, candidates,
//! category-tagged tests and execution verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Execution mode of a benchmark problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Candidate defines a function that assertions call.
    Function,
    /// Candidate is a whole program fed through stdin.
    Stdio,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Function => "function",
            Mode::Stdio => "stdio",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Requirement category a test verifies.
///
/// `FrGeneral` covers both input/output conditions and expected behavior:
/// generated test documents only distinguish general and edge cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FrGeneral,
    FrEdge,
    NfrTime,
    NfrRobustness,
    NfrMaintainability,
    NfrReliability,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::FrGeneral,
        Category::FrEdge,
        Category::NfrTime,
        Category::NfrRobustness,
        Category::NfrMaintainability,
        Category::NfrReliability,
    ];

    pub const NFR: [Category; 4] = [
        Category::NfrTime,
        Category::NfrRobustness,
        Category::NfrMaintainability,
        Category::NfrReliability,
    ];

    pub fn is_functional(self) -> bool {
        matches!(self, Category::FrGeneral | Category::FrEdge)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::FrGeneral => "fr_general",
            Category::FrEdge => "fr_edge",
            Category::NfrTime => "nfr_time",
            Category::NfrRobustness => "nfr_robustness",
            Category::NfrMaintainability => "nfr_maintainability",
            Category::NfrReliability => "nfr_reliability",
        }
    }

    /// Human-facing label used in report tables and prompts.
    pub fn label(self) -> &'static str {
        match self {
            Category::FrGeneral => "General",
            Category::FrEdge => "Edge",
            Category::NfrTime => "Time Perf.",
            Category::NfrRobustness => "Robustness",
            Category::NfrMaintainability => "Maintainability",
            Category::NfrReliability => "Reliability",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ModelError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown category label: {0:?}")]
    UnknownCategory(String),
    #[error("invalid test {test_id}: {reason}")]
    InvalidTest { test_id: String, reason: String },
    #[error("invalid requirement item in {bucket}: {item:?}")]
    InvalidRequirement { bucket: &'static str, item: String },
}

/// What a heading in a generated document denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum HeadingClass {
    ProblemAgnostic,
    FunctionalGroup,
    NonFunctionalGroup,
    SpecificQualityGroup,
    IoConditions,
    ExpectedBehavior,
    Leaf(Category),
}

// Ordered so that longer, more specific prefixes win.
const HEADING_PREFIXES: &[(&str, HeadingClass)] = &[
    ("problem agnostic", HeadingClass::ProblemAgnostic),
    ("problem-agnostic", HeadingClass::ProblemAgnostic),
    (
        "test cases regarding non-functional",
        HeadingClass::NonFunctionalGroup,
    ),
    (
        "test cases regarding non functional",
        HeadingClass::NonFunctionalGroup,
    ),
    (
        "test cases regarding functional",
        HeadingClass::FunctionalGroup,
    ),
    (
        "non-functional requirement",
        HeadingClass::NonFunctionalGroup,
    ),
    (
        "non functional requirement",
        HeadingClass::NonFunctionalGroup,
    ),
    (
        "nonfunctional requirement",
        HeadingClass::NonFunctionalGroup,
    ),
    ("functional requirement", HeadingClass::FunctionalGroup),
    (
        "specific quality requirement",
        HeadingClass::SpecificQualityGroup,
    ),
    ("input-output condition", HeadingClass::IoConditions),
    ("input/output condition", HeadingClass::IoConditions),
    ("input output condition", HeadingClass::IoConditions),
    ("i/o condition", HeadingClass::IoConditions),
    ("expected behavior", HeadingClass::ExpectedBehavior),
    ("expected behaviour", HeadingClass::ExpectedBehavior),
    ("general case", HeadingClass::Leaf(Category::FrGeneral)),
    ("edge case", HeadingClass::Leaf(Category::FrEdge)),
    ("time performance", HeadingClass::Leaf(Category::NfrTime)),
    ("time perf", HeadingClass::Leaf(Category::NfrTime)),
    ("performance", HeadingClass::Leaf(Category::NfrTime)),
    ("robustness", HeadingClass::Leaf(Category::NfrRobustness)),
    (
        "maintainability",
        HeadingClass::Leaf(Category::NfrMaintainability),
    ),
    ("reliability", HeadingClass::Leaf(Category::NfrReliability)),
];

/// Lowercases, strips heading markers and trailing colons, collapses spaces.
pub(crate) fn heading_key(label: &str) -> String {
    let stripped = label.trim().trim_start_matches('#').trim();
    let stripped = stripped.trim_end_matches(':').trim();
    let stripped = stripped.trim_matches(|c| c == '*' || c == '_').trim();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub(crate) fn classify_heading(label: &str) -> Option<HeadingClass> {
    let key = heading_key(label);
    HEADING_PREFIXES
        .iter()
        .find(|(prefix, _)| key.starts_with(prefix))
        .map(|(_, class)| *class)
}

/// Maps a heading or label from a generated document onto its category.
///
/// Matching is case and whitespace insensitive and prefix based, so
/// `"## Edge Cases"`, `"### edge case"` and `"Performance Requirements"` all
/// resolve. Group headings such as `# Functional Requirements` carry no
/// single category and are rejected.
pub fn normalize_category(label: &str) -> Result<Category, ModelError> {
    match classify_heading(label) {
        Some(HeadingClass::Leaf(c)) => Ok(c),
        Some(HeadingClass::IoConditions | HeadingClass::ExpectedBehavior) => {
            Ok(Category::FrGeneral)
        }
        _ => Err(ModelError::UnknownCategory(label.to_string())),
    }
}

/// Per-test resource budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub timeout_s: f64,
    pub memory_mb: u64,
}

impl ResourceLimits {
    pub const DEFAULT_MEMORY_MB: u64 = 256;

    pub fn default_for(mode: Mode) -> Self {
        let timeout_s = match mode {
            Mode::Function => 5.0,
            Mode::Stdio => 2.0,
        };
        ResourceLimits {
            timeout_s,
            memory_mb: Self::DEFAULT_MEMORY_MB,
        }
    }

    pub fn timeout_ms(&self) -> u64 {
        (self.timeout_s * 1000.0).round() as u64
    }
}

/// Kind-specific body of a test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestPayload {
    Assertion {
        assertion_code: String,
    },
    Stdio {
        input: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_output: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_stderr_substring: Option<String>,
    },
    CcThreshold {
        cc_limit: u32,
    },
    ReliabilityMarker {},
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Assertion,
    Stdio,
    CcThreshold,
    ReliabilityMarker,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Assertion => "assertion",
            TestKind::Stdio => "stdio",
            TestKind::CcThreshold => "cc_threshold",
            TestKind::ReliabilityMarker => "reliability_marker",
        }
    }
}

/// One category-tagged check, either generated or ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTest", into = "RawTest")]
pub struct GeneratedTest {
    pub test_id: String,
    pub category: Category,
    pub payload: TestPayload,
    pub comment: Option<String>,
}

/// Serialized form: `{"test_id","category","kind","payload","comment"?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTest {
    test_id: String,
    category: Category,
    kind: TestKind,
    #[serde(default = "empty_object")]
    payload: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comment: Option<String>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl TryFrom<RawTest> for GeneratedTest {
    type Error = ModelError;

    fn try_from(raw: RawTest) -> Result<Self, Self::Error> {
        let bad = |reason: String| ModelError::InvalidTest {
            test_id: raw.test_id.clone(),
            reason,
        };
        let payload = match raw.kind {
            TestKind::Assertion => {
                #[derive(Deserialize)]
                struct P {
                    assertion_code: String,
                }
                let p: P =
                    serde_json::from_value(raw.payload.clone()).map_err(|e| bad(e.to_string()))?;
                TestPayload::Assertion {
                    assertion_code: p.assertion_code,
                }
            }
            TestKind::Stdio => {
                #[derive(Deserialize)]
                struct P {
                    input: String,
                    #[serde(default)]
                    expected_output: Option<String>,
                    #[serde(default)]
                    expected_stderr_substring: Option<String>,
                }
                let p: P =
                    serde_json::from_value(raw.payload.clone()).map_err(|e| bad(e.to_string()))?;
                TestPayload::Stdio {
                    input: p.input,
                    expected_output: p.expected_output,
                    expected_stderr_substring: p.expected_stderr_substring,
                }
            }
            TestKind::CcThreshold => {
                #[derive(Deserialize)]
                struct P {
                    cc_limit: u32,
                }
                let p: P =
                    serde_json::from_value(raw.payload.clone()).map_err(|e| bad(e.to_string()))?;
                TestPayload::CcThreshold {
                    cc_limit: p.cc_limit,
                }
            }
            TestKind::ReliabilityMarker => TestPayload::ReliabilityMarker {},
        };
        let test = GeneratedTest {
            test_id: raw.test_id.clone(),
            category: raw.category,
            payload,
            comment: raw.comment,
        };
        test.check_kind_invariants().map_err(bad)?;
        Ok(test)
    }
}

impl From<GeneratedTest> for RawTest {
    fn from(t: GeneratedTest) -> Self {
        let kind = t.kind();
        let payload = serde_json::to_value(&t.payload).unwrap_or_else(|_| empty_object());
        RawTest {
            test_id: t.test_id,
            category: t.category,
            kind,
            payload,
            comment: t.comment,
        }
    }
}

impl GeneratedTest {
    pub fn assertion(
        test_id: impl Into<String>,
        category: Category,
        code: impl Into<String>,
    ) -> Self {
        GeneratedTest {
            test_id: test_id.into(),
            category,
            payload: TestPayload::Assertion {
                assertion_code: code.into(),
            },
            comment: None,
        }
    }

    pub fn stdio(
        test_id: impl Into<String>,
        category: Category,
        input: impl Into<String>,
        expected_output: Option<String>,
        expected_stderr_substring: Option<String>,
    ) -> Self {
        GeneratedTest {
            test_id: test_id.into(),
            category,
            payload: TestPayload::Stdio {
                input: input.into(),
                expected_output,
                expected_stderr_substring,
            },
            comment: None,
        }
    }

    pub fn cc_threshold(test_id: impl Into<String>, cc_limit: u32) -> Self {
        GeneratedTest {
            test_id: test_id.into(),
            category: Category::NfrMaintainability,
            payload: TestPayload::CcThreshold { cc_limit },
            comment: None,
        }
    }

    pub fn reliability_marker(test_id: impl Into<String>) -> Self {
        GeneratedTest {
            test_id: test_id.into(),
            category: Category::NfrReliability,
            payload: TestPayload::ReliabilityMarker {},
            comment: None,
        }
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comment = Some(comment.into());
        self
    }

    pub fn kind(&self) -> TestKind {
        match self.payload {
            TestPayload::Assertion { .. } => TestKind::Assertion,
            TestPayload::Stdio { .. } => TestKind::Stdio,
            TestPayload::CcThreshold { .. } => TestKind::CcThreshold,
            TestPayload::ReliabilityMarker {} => TestKind::ReliabilityMarker,
        }
    }

    /// Tests the runner executes (as opposed to statically or derived ones).
    pub fn is_executable(&self) -> bool {
        matches!(self.kind(), TestKind::Assertion | TestKind::Stdio)
    }

    fn check_kind_invariants(&self) -> Result<(), String> {
        match &self.payload {
            TestPayload::CcThreshold { cc_limit } => {
                if self.category != Category::NfrMaintainability {
                    return Err("cc_threshold test must be nfr_maintainability".into());
                }
                if *cc_limit == 0 {
                    return Err("cc_limit must be positive".into());
                }
            }
            TestPayload::ReliabilityMarker {} if self.category != Category::NfrReliability => {
                return Err("reliability_marker test must be nfr_reliability".into());
            }
            TestPayload::Stdio {
                expected_output: None,
                expected_stderr_substring: None,
                ..
            } => {
                return Err("stdio test needs expected_output or expected_stderr_substring".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// One benchmark task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub task_id: String,
    pub mode: Mode,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
    #[serde(default)]
    pub gt_tests: Vec<GeneratedTest>,
    pub limits: ResourceLimits,
}

/// Collects every violated `Problem` invariant. An empty result means the
/// problem is well formed.
pub fn validate_problem(p: &Problem) -> Vec<String> {
    let mut out = Vec::new();
    if p.task_id.trim().is_empty() {
        out.push("task_id must be non-empty".to_string());
    }
    match (p.mode, &p.entry_point) {
        (Mode::Function, None) => out.push("entry_point required".to_string()),
        (Mode::Function, Some(e)) if e.trim().is_empty() => {
            out.push("entry_point required".to_string())
        }
        (Mode::Stdio, Some(_)) => out.push("entry_point must be absent in stdio mode".to_string()),
        _ => {}
    }
    if p.limits.timeout_s.is_nan() || p.limits.timeout_s <= 0.0 || p.limits.timeout_s.is_infinite()
    {
        out.push(format!(
            "timeout_s must be positive, got {}",
            p.limits.timeout_s
        ));
    }
    if p.limits.memory_mb == 0 {
        out.push("memory_mb must be positive".to_string());
    }
    let mut seen = BTreeSet::new();
    for t in &p.gt_tests {
        if !seen.insert(t.test_id.as_str()) {
            out.push(format!("duplicate test_id: {}", t.test_id));
        }
        if t.kind() == TestKind::Stdio && p.mode != Mode::Stdio {
            out.push(format!("stdio test {} in function-mode problem", t.test_id));
        }
        if let Err(reason) = t.check_kind_invariants() {
            out.push(format!("test {}: {reason}", t.test_id));
        }
    }
    out
}

/// Structured requirement document with one bucket per sub-requirement type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementSet {
    pub io_conditions: Vec<String>,
    pub expected_behavior: Vec<String>,
    pub edge_cases: Vec<String>,
    pub time_performance: Vec<String>,
    pub robustness: Vec<String>,
    pub maintainability: Vec<String>,
    pub reliability: Vec<String>,
    pub problem_agnostic: Vec<String>,
    /// The document exactly as the model produced it.
    pub raw: String,
}

impl RequirementSet {
    /// Builds a set from buckets, rendering `raw` in the canonical heading
    /// layout. Items must be single non-blank lines without leading markers.
    pub fn from_buckets(mut buckets: RequirementSet) -> Result<Self, ModelError> {
        for (name, items) in buckets.named_buckets() {
            for item in items {
                if !is_valid_item(item) {
                    return Err(ModelError::InvalidRequirement {
                        bucket: name,
                        item: item.clone(),
                    });
                }
            }
        }
        buckets.raw = buckets.to_markdown();
        Ok(buckets)
    }

    pub fn named_buckets(&self) -> [(&'static str, &Vec<String>); 8] {
        [
            ("problem_agnostic", &self.problem_agnostic),
            ("io_conditions", &self.io_conditions),
            ("expected_behavior", &self.expected_behavior),
            ("edge_cases", &self.edge_cases),
            ("time_performance", &self.time_performance),
            ("robustness", &self.robustness),
            ("reliability", &self.reliability),
            ("maintainability", &self.maintainability),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.named_buckets().iter().all(|(_, b)| b.is_empty())
    }

    pub fn bucket_counts(&self) -> BTreeMap<&'static str, usize> {
        self.named_buckets()
            .iter()
            .map(|(n, b)| (*n, b.len()))
            .collect()
    }

    /// Renders the buckets in the heading layout generated documents use.
    /// Empty buckets and empty groups are omitted.
    pub fn to_markdown(&self) -> String {
        fn items(out: &mut String, heading: &str, items: &[String]) {
            out.push_str(heading);
            out.push('\n');
            for item in items {
                out.push_str("- ");
                out.push_str(item);
                out.push('\n');
            }
        }
        // Each group is a list of (heading, items) sections; empty sections
        // and groups vanish.
        type Group<'a> = (Option<&'a str>, Vec<(&'a str, &'a Vec<String>)>);
        let groups: [Group<'_>; 4] = [
            (
                None,
                vec![("# Problem Agnostic Requirements", &self.problem_agnostic)],
            ),
            (
                Some("# Functional Requirements"),
                vec![
                    ("## Input-output Conditions", &self.io_conditions),
                    ("## Expected Behavior", &self.expected_behavior),
                    ("## Edge Cases", &self.edge_cases),
                ],
            ),
            (
                Some("# Non-functional Requirements"),
                vec![("## Performance", &self.time_performance)],
            ),
            (
                Some("## Specific Quality Requirements"),
                vec![
                    ("### Robustness", &self.robustness),
                    ("### Reliability", &self.reliability),
                    ("### Maintainability", &self.maintainability),
                ],
            ),
        ];
        let nfr_present = !self.time_performance.is_empty()
            || !self.robustness.is_empty()
            || !self.reliability.is_empty()
            || !self.maintainability.is_empty();
        let mut out = String::new();
        let mut nfr_header_written = false;
        for (header, sections) in groups.iter() {
            let present: Vec<_> = sections.iter().filter(|(_, b)| !b.is_empty()).collect();
            let is_nfr = matches!(header, Some(h) if h.contains("Non-functional") || h.contains("Specific Quality"));
            if is_nfr && nfr_present && !nfr_header_written {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str("# Non-functional Requirements\n");
                nfr_header_written = true;
            }
            if present.is_empty() {
                continue;
            }
            match header {
                Some(h) if h.starts_with("# Non-functional") => {}
                Some(h) => {
                    if !out.is_empty() && !out.ends_with("Requirements\n") {
                        out.push('\n');
                    }
                    out.push_str(h);
                    out.push('\n');
                }
                None => {}
            }
            for (i, (heading, b)) in present.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                items(&mut out, heading, b);
            }
        }
        out
    }
}

pub(crate) fn is_valid_item(item: &str) -> bool {
    !item.trim().is_empty()
        && item.trim() == item
        && !item.contains('\n')
        && !item.contains('\r')
        && !item.starts_with('#')
        && !item.starts_with("- ")
        && !item.starts_with("* ")
        && item != "-"
        && item != "*"
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub sampling_hash: String,
}

/// One generated program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub task_id: String,
    pub sample_index: usize,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
    Timeout,
}

impl Status {
    /// The binary execution score: only a pass counts.
    pub fn score(self) -> f64 {
        if self == Status::Pass {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Error => "error",
            Status::Timeout => "timeout",
        }
    }
}

/// Outcome of one test against one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub test_id: String,
    pub status: Status,
    pub wall_ms: u64,
    #[serde(default)]
    pub message: Option<String>,
}

impl Verdict {
    pub fn new(test_id: impl Into<String>, status: Status) -> Self {
        Verdict {
            test_id: test_id.into(),
            status,
            wall_ms: 0,
            message: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// A candidate row the orchestrator could not execute; excluded from scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedRow {
    pub sample_index: usize,
    pub reason: String,
}

/// Candidates x tests execution outcomes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMatrix {
    /// Rows keyed by sample index; each row is in test order.
    pub rows: BTreeMap<usize, Vec<Verdict>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aborted: Vec<AbortedRow>,
}

impl VerdictMatrix {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, sample_index: usize) -> Option<&[Verdict]> {
        self.rows.get(&sample_index).map(Vec::as_slice)
    }

    pub fn get(&self, sample_index: usize, test_id: &str) -> Option<&Verdict> {
        self.row(sample_index)?
            .iter()
            .find(|v| v.test_id == test_id)
    }

    /// Status grid with timing stripped, for order-independent comparison.
    pub fn status_grid(&self) -> BTreeMap<usize, Vec<(String, Status)>> {
        self.rows
            .iter()
            .map(|(k, row)| {
                (
                    *k,
                    row.iter().map(|v| (v.test_id.clone(), v.status)).collect(),
                )
            })
            .collect()
    }
}
