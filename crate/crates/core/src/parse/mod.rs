//! Turns raw completions into code, requirement sets and categorized tests.

pub mod literal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    classify_heading, Category, CodeCandidate, GeneratedTest, HeadingClass, Mode, RequirementSet,
    TestPayload,
};

/// Placeholder a generated test uses to refer to the candidate's source.
pub const CODE_PLACEHOLDER: &str = "${Generated Code}";

const RELIABILITY_MARKER: &str = "satisfied if no errors occur";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("completion contains no code")]
    EmptyCode,
}

/// Categorized tests plus everything the parser could not place.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTestDoc {
    pub tests: Vec<GeneratedTest>,
    pub warnings: Vec<String>,
}

impl ParsedTestDoc {
    pub fn count_by_category(&self) -> std::collections::BTreeMap<Category, usize> {
        let mut out = std::collections::BTreeMap::new();
        for t in &self.tests {
            *out.entry(t.category).or_insert(0) += 1;
        }
        out
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn looks_like_code_start(line: &str) -> bool {
    let l = line.trim_start();
    ["import ", "from ", "def ", "class ", "async def ", "@"]
        .iter()
        .any(|p| l.starts_with(p))
}

/// Pulls the program out of a completion.
///
/// Prefers the last fenced block, so outline and plan text that precedes the
/// final code is ignored. Without fences, returns the suffix starting at the
/// first import/def-like line, else the text unchanged.
pub fn extract_code_block(completion: &str) -> Result<String, ParseError> {
    let lines: Vec<&str> = completion.lines().collect();
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, line) in lines.iter().enumerate() {
        if is_fence(line) {
            match open {
                None => open = Some(i),
                Some(start) => {
                    blocks.push((start + 1, i));
                    open = None;
                }
            }
        }
    }
    if let Some(start) = open {
        // Unterminated trailing fence: the model was cut off mid-block.
        blocks.push((start + 1, lines.len()));
    }
    let code = if let Some(&(start, end)) = blocks.last() {
        let mut s = lines[start..end].join("\n");
        s.push('\n');
        s
    } else if let Some(pos) = lines.iter().position(|l| looks_like_code_start(l)) {
        let offset: usize = completion
            .split_inclusive('\n')
            .take(pos)
            .map(str::len)
            .sum();
        completion[offset..].to_string()
    } else {
        completion.to_string()
    };
    if code.trim().is_empty() {
        return Err(ParseError::EmptyCode);
    }
    Ok(code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bucket {
    ProblemAgnostic,
    Io,
    Expected,
    Edge,
    Time,
    Robustness,
    Maintainability,
    Reliability,
}

fn bucket_mut(rs: &mut RequirementSet, b: Bucket) -> &mut Vec<String> {
    match b {
        Bucket::ProblemAgnostic => &mut rs.problem_agnostic,
        Bucket::Io => &mut rs.io_conditions,
        Bucket::Expected => &mut rs.expected_behavior,
        Bucket::Edge => &mut rs.edge_cases,
        Bucket::Time => &mut rs.time_performance,
        Bucket::Robustness => &mut rs.robustness,
        Bucket::Maintainability => &mut rs.maintainability,
        Bucket::Reliability => &mut rs.reliability,
    }
}

pub(crate) fn heading_level(line: &str) -> Option<usize> {
    let t = line.trim_start();
    let t = t.strip_prefix("**").unwrap_or(t);
    let n = t.chars().take_while(|c| *c == '#').count();
    (n > 0).then_some(n)
}

pub(crate) fn heading_text(line: &str) -> &str {
    let t = line.trim();
    let t = t.strip_prefix("**").unwrap_or(t);
    let t = t.strip_suffix("**").unwrap_or(t);
    t.trim_start_matches('#').trim()
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    for marker in ["- ", "* ", "+ "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return rest.trim();
        }
    }
    if t == "-" || t == "*" {
        return "";
    }
    t
}

/// Parses a requirement document into buckets; see
/// [`parse_requirements_doc_with_warnings`] for the diagnostics.
pub fn parse_requirements_doc(doc: &str) -> RequirementSet {
    parse_requirements_doc_with_warnings(doc).0
}

/// Bullets under each recognized heading land in the matching bucket.
/// Unrecognized headings nested below a recognized one inherit its bucket
/// (e.g. `### Inputs` under input-output conditions); any other unknown
/// heading is reported and its bullets go to `problem_agnostic`.
pub fn parse_requirements_doc_with_warnings(doc: &str) -> (RequirementSet, Vec<String>) {
    let mut rs = RequirementSet {
        raw: doc.to_string(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    let mut current: Option<(Bucket, usize)> = None;
    let mut orphan_warned = false;
    for (lineno, line) in doc.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(level) = heading_level(line) {
            let text = heading_text(line);
            let bucket = match classify_heading(text) {
                Some(HeadingClass::ProblemAgnostic) => Some(Bucket::ProblemAgnostic),
                Some(HeadingClass::IoConditions) => Some(Bucket::Io),
                Some(HeadingClass::ExpectedBehavior)
                | Some(HeadingClass::Leaf(Category::FrGeneral)) => Some(Bucket::Expected),
                Some(HeadingClass::Leaf(Category::FrEdge)) => Some(Bucket::Edge),
                Some(HeadingClass::Leaf(Category::NfrTime)) => Some(Bucket::Time),
                Some(HeadingClass::Leaf(Category::NfrRobustness)) => Some(Bucket::Robustness),
                Some(HeadingClass::Leaf(Category::NfrMaintainability)) => {
                    Some(Bucket::Maintainability)
                }
                Some(HeadingClass::Leaf(Category::NfrReliability)) => Some(Bucket::Reliability),
                Some(
                    HeadingClass::FunctionalGroup
                    | HeadingClass::NonFunctionalGroup
                    | HeadingClass::SpecificQualityGroup,
                ) => {
                    current = None;
                    orphan_warned = false;
                    continue;
                }
                None => None,
            };
            match bucket {
                Some(b) => current = Some((b, level)),
                None => match current {
                    Some((_, parent)) if level > parent => {}
                    _ => {
                        warnings.push(format!(
                            "line {}: unknown heading {:?}; items filed under problem_agnostic",
                            lineno + 1,
                            text
                        ));
                        current = Some((Bucket::ProblemAgnostic, level));
                    }
                },
            }
            continue;
        }
        let item = strip_bullet(line);
        if item.is_empty() {
            continue;
        }
        let bucket = match current {
            Some((b, _)) => b,
            None => {
                if !orphan_warned {
                    warnings.push(format!(
                        "line {}: text outside any requirement heading filed under problem_agnostic",
                        lineno + 1
                    ));
                    orphan_warned = true;
                }
                Bucket::ProblemAgnostic
            }
        };
        bucket_mut(&mut rs, bucket).push(item.to_string());
    }
    (rs, warnings)
}

/// Tracks bracket depth and open strings across the lines of a statement.
#[derive(Default)]
struct StatementScanner {
    depth: i32,
    triple: Option<char>,
    continuation: bool,
}

impl StatementScanner {
    fn feed(&mut self, line: &str) {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        self.continuation = false;
        while i < chars.len() {
            let c = chars[i];
            if let Some(q) = self.triple {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                    self.triple = None;
                    i += 3;
                    continue;
                }
                i += 1;
                continue;
            }
            match c {
                '#' => break,
                '(' | '[' | '{' => self.depth += 1,
                ')' | ']' | '}' => self.depth -= 1,
                '"' | '\'' => {
                    if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                        self.triple = Some(c);
                        i += 3;
                        continue;
                    }
                    i += 1;
                    while i < chars.len() && chars[i] != c {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                }
                '\\' if i == chars.len() - 1 => self.continuation = true,
                _ => {}
            }
            i += 1;
        }
    }

    fn complete(&self) -> bool {
        self.depth <= 0 && self.triple.is_none() && !self.continuation
    }
}

fn is_assert(stmt: &str) -> bool {
    let t = stmt.trim_start();
    t.strip_prefix("assert")
        .is_some_and(|rest| rest.starts_with(|c: char| c.is_whitespace() || c == '('))
}

/// Recognizes `assert <x>.total_complexity <= N` (or `< N`).
fn cc_limit_of(stmt: &str) -> Option<u32> {
    let body = stmt.trim_start().strip_prefix("assert")?.trim();
    let cond = body.split(',').next()?.trim();
    let cond = cond.trim_start_matches('(').trim_end_matches(')');
    let (lhs, rhs, strict) = if let Some((l, r)) = cond.split_once("<=") {
        (l, r, false)
    } else if let Some((l, r)) = cond.split_once('<') {
        (l, r, true)
    } else {
        return None;
    };
    if !lhs.trim().to_lowercase().contains("complexity") {
        return None;
    }
    let n: u32 = rhs.trim().parse().ok()?;
    if strict {
        n.checked_sub(1).filter(|v| *v > 0)
    } else {
        Some(n)
    }
}

fn is_marker(text: &str) -> bool {
    text.to_lowercase().contains(RELIABILITY_MARKER)
}

struct TestDocBuilder {
    tests: Vec<GeneratedTest>,
    warnings: Vec<String>,
    category: Option<Category>,
    in_nfr_group: bool,
}

impl TestDocBuilder {
    fn new() -> Self {
        TestDocBuilder {
            tests: Vec::new(),
            warnings: Vec::new(),
            category: None,
            in_nfr_group: false,
        }
    }

    fn next_id(&self) -> String {
        format!("t{}", self.tests.len())
    }

    fn resolve_category(&mut self, lineno: usize) -> Category {
        match self.category {
            Some(c) => c,
            None => {
                self.warnings.push(format!(
                    "line {lineno}: test outside any category heading; filed under fr_general"
                ));
                Category::FrGeneral
            }
        }
    }

    /// Returns true when the heading changed the category context.
    fn heading(&mut self, text: &str) -> bool {
        match classify_heading(text) {
            Some(HeadingClass::Leaf(c)) => self.category = Some(c),
            Some(HeadingClass::IoConditions | HeadingClass::ExpectedBehavior) => {
                self.category = Some(Category::FrGeneral)
            }
            Some(HeadingClass::FunctionalGroup) => {
                self.category = None;
                self.in_nfr_group = false;
            }
            Some(HeadingClass::NonFunctionalGroup) => {
                self.category = None;
                self.in_nfr_group = true;
            }
            Some(HeadingClass::SpecificQualityGroup | HeadingClass::ProblemAgnostic) => {
                self.category = None
            }
            None => return false,
        }
        true
    }

    fn push_marker(&mut self) {
        let id = self.next_id();
        self.tests.push(GeneratedTest::reliability_marker(id));
    }

    fn push_cc(&mut self, limit: u32, comment: Option<String>, lineno: usize) {
        if limit != 5 && limit != 10 {
            self.warnings.push(format!(
                "line {lineno}: cc_limit {limit} outside the usual {{5, 10}} thresholds"
            ));
        }
        let id = self.next_id();
        let mut t = GeneratedTest::cc_threshold(id, limit);
        t.comment = comment;
        self.tests.push(t);
    }
}

fn join_comment(lines: &mut Vec<String>) -> Option<String> {
    if lines.is_empty() {
        None
    } else {
        Some(std::mem::take(lines).join("\n"))
    }
}

/// Parses a generated test document.
///
/// Function mode: each `assert` statement, with the comment headings and
/// setup lines preceding it, becomes one assertion test in the category of
/// its nearest enclosing heading. `assert <x>.total_complexity <= N` becomes
/// a `cc_threshold` test and a "Satisfied if no errors occur" line becomes a
/// reliability marker.
///
/// Stdio mode: each `INPUT = ...` paired with `OUTPUT = ...` and/or
/// `STD_ERROR = ...` becomes a stdio test; `COMPLEXITY_LIMIT = N` becomes a
/// `cc_threshold` test. Values are Python string expressions.
///
/// Nothing is dropped silently: unplaceable content is quoted in a warning.
pub fn parse_test_doc(doc: &str, mode: Mode) -> ParsedTestDoc {
    match mode {
        Mode::Function => parse_function_doc(doc),
        Mode::Stdio => parse_stdio_doc(doc),
    }
}

fn parse_function_doc(doc: &str) -> ParsedTestDoc {
    let mut b = TestDocBuilder::new();
    let mut comments: Vec<String> = Vec::new();
    let mut setup: Vec<String> = Vec::new();
    let lines: Vec<&str> = doc.lines().collect();
    let mut i = 0;
    let flush_setup = |b: &mut TestDocBuilder, setup: &mut Vec<String>, lineno: usize| {
        if !setup.is_empty() {
            b.warnings.push(format!(
                "line {lineno}: code not followed by an assertion was dropped: {:?}",
                setup.join("\n")
            ));
            setup.clear();
        }
    };
    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            i += 1;
            continue;
        }
        if trimmed.starts_with('#') {
            let text = heading_text(trimmed);
            if is_marker(text) {
                flush_setup(&mut b, &mut setup, lineno);
                comments.clear();
                b.push_marker();
            } else if b.heading(text) {
                flush_setup(&mut b, &mut setup, lineno);
                comments.clear();
            } else if !text.is_empty() {
                comments.push(text.to_string());
            }
            i += 1;
            continue;
        }
        if is_marker(trimmed) && !is_assert(trimmed) {
            flush_setup(&mut b, &mut setup, lineno);
            comments.clear();
            b.push_marker();
            i += 1;
            continue;
        }
        // Gather one logical statement.
        let mut scanner = StatementScanner::default();
        let mut stmt_lines = vec![line.trim_end()];
        scanner.feed(line);
        let mut j = i + 1;
        while !scanner.complete() && j < lines.len() {
            scanner.feed(lines[j]);
            stmt_lines.push(lines[j].trim_end());
            j += 1;
        }
        if !scanner.complete() {
            b.warnings.push(format!(
                "line {lineno}: statement is not closed before end of document; kept as written"
            ));
        }
        let stmt = stmt_lines.join("\n");
        i = j;
        if is_assert(&stmt) {
            let comment = join_comment(&mut comments);
            if let Some(limit) = cc_limit_of(&stmt) {
                // The complexity harness lines (imports, from_code call) are
                // replaced by the runner's own measurement.
                setup.clear();
                b.push_cc(limit, comment, lineno);
            } else {
                let category = b.resolve_category(lineno);
                let mut code = std::mem::take(&mut setup);
                code.push(stmt);
                let id = b.next_id();
                let mut t = GeneratedTest::assertion(id, category, code.join("\n"));
                t.comment = comment;
                b.tests.push(t);
            }
        } else {
            setup.push(stmt);
        }
    }
    flush_setup(&mut b, &mut setup, lines.len());
    ParsedTestDoc {
        tests: b.tests,
        warnings: b.warnings,
    }
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once('=')?;
    let key = key.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
        return None;
    }
    Some((key, value.trim()))
}

#[derive(Default)]
struct PendingStdio {
    input: Option<String>,
    output: Option<String>,
    stderr: Option<String>,
    comment: Option<String>,
    lineno: usize,
}

fn parse_stdio_doc(doc: &str) -> ParsedTestDoc {
    let mut b = TestDocBuilder::new();
    let mut pending = PendingStdio::default();

    fn flush(b: &mut TestDocBuilder, p: &mut PendingStdio) {
        let taken = std::mem::take(p);
        match (
            taken.input,
            taken.output.is_some() || taken.stderr.is_some(),
        ) {
            (Some(input), true) => {
                let category = b.resolve_category(taken.lineno);
                let id = b.next_id();
                let mut t = GeneratedTest::stdio(id, category, input, taken.output, taken.stderr);
                t.comment = taken.comment;
                b.tests.push(t);
            }
            (Some(input), false) => b.warnings.push(format!(
                "line {}: INPUT without OUTPUT or STD_ERROR dropped: {:?}",
                taken.lineno, input
            )),
            (None, true) => b.warnings.push(format!(
                "line {}: expectation without INPUT dropped: {:?}",
                taken.lineno,
                taken.output.or(taken.stderr).unwrap_or_default()
            )),
            (None, false) => {
                // A lone ERROR_MESSAGE carries over to nothing.
            }
        }
    }

    for (idx, line) in doc.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            let text = heading_text(trimmed);
            if is_marker(text) {
                flush(&mut b, &mut pending);
                b.push_marker();
            } else if classify_heading(text).is_some() {
                // The pending test belongs to the section being closed.
                flush(&mut b, &mut pending);
                b.heading(text);
            }
            continue;
        }
        if is_marker(trimmed) {
            flush(&mut b, &mut pending);
            b.push_marker();
            continue;
        }
        if is_assert(trimmed) {
            b.warnings.push(format!(
                "line {lineno}: assertion dropped in stdio mode: {trimmed:?}"
            ));
            continue;
        }
        let Some((key, expr)) = split_assignment(trimmed) else {
            b.warnings.push(format!(
                "line {lineno}: unrecognized line dropped: {trimmed:?}"
            ));
            continue;
        };
        if key == "COMPLEXITY_LIMIT" {
            let comment = pending.comment.take();
            flush(&mut b, &mut pending);
            match expr.parse::<u32>() {
                Ok(limit) if limit > 0 => b.push_cc(limit, comment, lineno),
                _ => b.warnings.push(format!(
                    "line {lineno}: bad COMPLEXITY_LIMIT dropped: {trimmed:?}"
                )),
            }
            continue;
        }
        let value = match literal::eval_str(expr) {
            Ok(v) => v,
            Err(e) => {
                b.warnings.push(format!(
                    "line {lineno}: cannot evaluate {key} ({e}); dropped: {trimmed:?}"
                ));
                continue;
            }
        };
        match key {
            "ERROR_MESSAGE" => {
                flush(&mut b, &mut pending);
                pending.comment = Some(value);
            }
            "INPUT" => {
                if pending.input.is_some() {
                    flush(&mut b, &mut pending);
                }
                pending.input = Some(value);
                pending.lineno = lineno;
            }
            "OUTPUT" | "EXPECTED_OUTPUT" => {
                if pending.input.is_none() {
                    pending.lineno = lineno;
                }
                pending.output = Some(value);
            }
            "STD_ERROR" | "STDERR" | "EXPECTED_STDERR" => {
                if pending.input.is_none() {
                    pending.lineno = lineno;
                }
                pending.stderr = Some(value);
            }
            other => b.warnings.push(format!(
                "line {lineno}: unknown key {other} dropped: {trimmed:?}"
            )),
        }
    }
    flush(&mut b, &mut pending);
    ParsedTestDoc {
        tests: b.tests,
        warnings: b.warnings,
    }
}

fn canonical_heading(c: Category) -> &'static str {
    match c {
        Category::FrGeneral => "## General Cases",
        Category::FrEdge => "## Edge Cases",
        Category::NfrTime => "## Performance Requirements",
        Category::NfrRobustness => "### Robustness",
        Category::NfrReliability => "### Reliability",
        Category::NfrMaintainability => "### Maintainability",
    }
}

/// Renders tests back into the generated-document layout, in test order.
/// [`parse_test_doc`] on the result reproduces the same tests.
pub fn serialize_test_doc(tests: &[GeneratedTest], mode: Mode) -> String {
    let mut out = String::new();
    let mut current: Option<Category> = None;
    let mut group: Option<bool> = None;
    let mut quality_open = false;
    for t in tests {
        if current != Some(t.category) {
            let functional = t.category.is_functional();
            if group != Some(functional) {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(if functional {
                    "# Test Cases Regarding Functional Requirements\n"
                } else {
                    "# Test Cases Regarding Non-functional Requirements\n"
                });
                group = Some(functional);
                quality_open = false;
            }
            let needs_quality = matches!(
                t.category,
                Category::NfrRobustness | Category::NfrReliability | Category::NfrMaintainability
            );
            if needs_quality && !quality_open {
                out.push_str("## Specific Quality Requirements\n");
                quality_open = true;
            } else if !needs_quality {
                quality_open = false;
            }
            out.push_str(canonical_heading(t.category));
            out.push('\n');
            current = Some(t.category);
        }
        match (&t.payload, mode) {
            (TestPayload::ReliabilityMarker {}, _) => {
                out.push_str("#### Satisfied if no errors occur across all test cases\n");
            }
            (TestPayload::CcThreshold { cc_limit }, Mode::Function) => {
                push_comment_headings(&mut out, t.comment.as_deref());
                out.push_str(&format!(
                    "assert result.total_complexity <= {cc_limit}, 'Failed to have a Cyclomatic Complexity less than or equal to {cc_limit}.'\n"
                ));
            }
            (TestPayload::CcThreshold { cc_limit }, Mode::Stdio) => {
                if let Some(c) = &t.comment {
                    out.push_str(&format!("ERROR_MESSAGE = {}\n", literal::quote(c)));
                }
                out.push_str(&format!("COMPLEXITY_LIMIT = {cc_limit}\n"));
            }
            (TestPayload::Assertion { assertion_code }, _) => {
                push_comment_headings(&mut out, t.comment.as_deref());
                out.push_str(assertion_code);
                out.push('\n');
            }
            (
                TestPayload::Stdio {
                    input,
                    expected_output,
                    expected_stderr_substring,
                },
                _,
            ) => {
                if let Some(c) = &t.comment {
                    out.push_str(&format!("ERROR_MESSAGE = {}\n", literal::quote(c)));
                }
                out.push_str(&format!("INPUT = {}\n", literal::quote(input)));
                if let Some(o) = expected_output {
                    out.push_str(&format!("OUTPUT = {}\n", literal::quote(o)));
                }
                if let Some(e) = expected_stderr_substring {
                    out.push_str(&format!("STD_ERROR = {}\n", literal::quote(e)));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn push_comment_headings(out: &mut String, comment: Option<&str>) {
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str("### ");
            out.push_str(line);
            out.push('\n');
        }
    }
}

/// Escapes `source` so it can sit inside any non-raw Python string literal
/// and evaluate back to itself.
pub fn escape_for_python_literal(source: &str) -> String {
    let mut out = String::with_capacity(source.len() + 16);
    for c in source.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Replaces the generated-code placeholder in an assertion with the
/// candidate's source, escaped for the surrounding string literal.
pub fn substitute_source(assertion_code: &str, source: &str) -> String {
    if !assertion_code.contains(CODE_PLACEHOLDER) {
        return assertion_code.to_string();
    }
    assertion_code.replace(CODE_PLACEHOLDER, &escape_for_python_literal(source))
}

/// Returns `test` with its placeholder bound to `candidate`. Non-assertion
/// tests are returned unchanged.
pub fn substitute_candidate(test: &GeneratedTest, candidate: &CodeCandidate) -> GeneratedTest {
    let mut out = test.clone();
    if let TestPayload::Assertion { assertion_code } = &mut out.payload {
        *assertion_code = substitute_source(assertion_code, &candidate.source);
    }
    out
}
