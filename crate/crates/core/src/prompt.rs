//! In-context prompts for the generation stages and preference control.
//!
//! Templates are plain text files with `{description}`, `{requirements}`,
//! `{tests}` and `{code}` placeholders. The built-in set lives under
//! `assets/templates`; a directory with the same file names overrides it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{classify_heading, Category, HeadingClass, Problem};
use crate::parse::{heading_level, heading_text};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("stage {stage} needs {what} in its context")]
    MissingContext { stage: Stage, what: &'static str },
    #[error("example {index} lacks {field}, required by stage {stage}")]
    IncompleteExample {
        index: usize,
        field: &'static str,
        stage: Stage,
    },
    #[error("preference targets must not be empty")]
    EmptyTargets,
    #[error("preference target {0} is not a non-functional category")]
    NotNonFunctional(Category),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Generation stage. `CodeTdd` is code generation conditioned on the
/// generated tests, so it runs after the tests stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Requirements,
    Code,
    Tests,
    CodeTdd,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Requirements,
        Stage::Code,
        Stage::Tests,
        Stage::CodeTdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Requirements => "requirements",
            Stage::Code => "code",
            Stage::Tests => "tests",
            Stage::CodeTdd => "code_tdd",
        }
    }

    /// The closing instruction of the query block.
    pub fn instruction(self) -> &'static str {
        match self {
            Stage::Requirements => "Write requirements for the problem.",
            Stage::Code | Stage::CodeTdd => "Write the code for the problem.",
            Stage::Tests => "Write test cases for the problem.",
        }
    }

    fn needs_requirements(self) -> bool {
        self != Stage::Requirements
    }

    fn needs_tests(self) -> bool {
        self == Stage::CodeTdd
    }

    fn needs_code(self) -> bool {
        matches!(self, Stage::Code | Stage::CodeTdd)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PromptError::UnknownStage(s.to_string()))
    }
}

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub description: String,
    pub requirements: String,
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub tests: Option<String>,
    #[serde(default)]
    pub cot_plan: Option<String>,
}

impl IclExample {
    /// The shipped longest-subarray example.
    pub fn builtin() -> Self {
        IclExample {
            description: include_str!("../assets/examples/longest_subarray/description.txt")
                .to_string(),
            requirements: include_str!("../assets/examples/longest_subarray/requirements.md")
                .to_string(),
            code: Some(include_str!("../assets/examples/longest_subarray/code.py").to_string()),
            tests: Some(include_str!("../assets/examples/longest_subarray/tests.md").to_string()),
            cot_plan: Some(
                include_str!("../assets/examples/longest_subarray/plan.txt").to_string(),
            ),
        }
    }

    /// Reads `description.txt`, `requirements.md` and, when present,
    /// `code.py`, `tests.md` and `plan.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(PromptError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        let required = |name: &str| -> Result<String, PromptError> {
            read(name)?.ok_or_else(|| PromptError::Io {
                path: dir.join(name).display().to_string(),
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "required example file missing",
                ),
            })
        };
        Ok(IclExample {
            description: required("description.txt")?,
            requirements: required("requirements.md")?,
            code: read("code.py")?,
            tests: read("tests.md")?,
            cot_plan: read("plan.txt")?,
        })
    }
}

/// Example and query templates for every stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    example: [String; 4],
    query: [String; 4],
    nfr_instruction: String,
}

fn stage_slot(stage: Stage) -> usize {
    stage as usize
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates {
            example: [
                include_str!("../assets/templates/requirements.example.txt").to_string(),
                include_str!("../assets/templates/code.example.txt").to_string(),
                include_str!("../assets/templates/tests.example.txt").to_string(),
                include_str!("../assets/templates/code_tdd.example.txt").to_string(),
            ],
            query: [
                include_str!("../assets/templates/requirements.query.txt").to_string(),
                include_str!("../assets/templates/code.query.txt").to_string(),
                include_str!("../assets/templates/tests.query.txt").to_string(),
                include_str!("../assets/templates/code_tdd.query.txt").to_string(),
            ],
            nfr_instruction: include_str!("../assets/templates/nfr_instruction.txt").to_string(),
        }
    }

    /// Built-in templates overridden by any `<stage>.example.txt`,
    /// `<stage>.query.txt` or `nfr_instruction.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Templates::builtin();
        let read = |name: String| -> Result<Option<String>, PromptError> {
            let path = dir.join(&name);
            match fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(PromptError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        for stage in Stage::ALL {
            if let Some(s) = read(format!("{stage}.example.txt"))? {
                t.example[stage_slot(stage)] = s;
            }
            if let Some(s) = read(format!("{stage}.query.txt"))? {
                t.query[stage_slot(stage)] = s;
            }
        }
        if let Some(s) = read("nfr_instruction.txt".to_string())? {
            t.nfr_instruction = s;
        }
        Ok(t)
    }

    pub fn example(&self, stage: Stage) -> &str {
        &self.example[stage_slot(stage)]
    }

    pub fn query(&self, stage: Stage) -> &str {
        &self.query[stage_slot(stage)]
    }
}

/// Values for the template placeholders.
#[derive(Debug, Default, Clone, Copy)]
pub struct Slots<'a> {
    pub description: &'a str,
    pub requirements: &'a str,
    pub tests: &'a str,
    pub code: &'a str,
}

/// Replaces `{description}`, `{requirements}`, `{tests}` and `{code}` in
/// one left-to-right pass. Substituted text is never rescanned, and any
/// other brace sequence is copied through unchanged.
pub fn fill_template(template: &str, slots: &Slots<'_>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let hit = [
            ("{description}", slots.description),
            ("{requirements}", slots.requirements),
            ("{tests}", slots.tests),
            ("{code}", slots.code),
        ]
        .into_iter()
        .find(|(token, _)| tail.starts_with(token));
        match hit {
            Some((token, value)) => {
                out.push_str(value.trim_end_matches('\n'));
                rest = &tail[token.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Generated artifacts the query block is conditioned on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraContext {
    /// Serialized generated requirement document.
    pub requirements: Option<String>,
    /// Serialized generated test document (TDD stage).
    pub tests: Option<String>,
}

/// Everything needed to render one stage prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub stage: Stage,
    pub examples: Vec<IclExample>,
    pub stage_instruction: String,
    /// Non-functional categories kept by plug-and-play filtering.
    pub nfr_subset: Option<BTreeSet<Category>>,
    pub preference_instruction: Option<String>,
    pub extra_context: ExtraContext,
    /// Prepend the fixed non-functional instruction block.
    #[serde(default)]
    pub nfr_block: bool,
}

impl PromptPlan {
    pub fn new(stage: Stage, examples: Vec<IclExample>) -> Self {
        PromptPlan {
            stage,
            examples,
            stage_instruction: stage.instruction().to_string(),
            nfr_subset: None,
            preference_instruction: None,
            extra_context: ExtraContext::default(),
            nfr_block: false,
        }
    }

    pub fn with_requirements(mut self, requirements: impl Into<String>) -> Self {
        self.extra_context.requirements = Some(requirements.into());
        self
    }

    pub fn with_tests(mut self, tests: impl Into<String>) -> Self {
        self.extra_context.tests = Some(tests.into());
        self
    }

    pub fn with_nfr_block(mut self, on: bool) -> Self {
        self.nfr_block = on;
        self
    }

    fn check(&self) -> Result<(), PromptError> {
        let stage = self.stage;
        if stage.needs_requirements() && self.extra_context.requirements.is_none() {
            return Err(PromptError::MissingContext {
                stage,
                what: "generated requirements",
            });
        }
        if stage.needs_tests() && self.extra_context.tests.is_none() {
            return Err(PromptError::MissingContext {
                stage,
                what: "generated tests",
            });
        }
        for (index, ex) in self.examples.iter().enumerate() {
            if stage.needs_code() && ex.code.is_none() {
                return Err(PromptError::IncompleteExample {
                    index,
                    field: "code",
                    stage,
                });
            }
            if matches!(stage, Stage::Tests | Stage::CodeTdd) && ex.tests.is_none() {
                return Err(PromptError::IncompleteExample {
                    index,
                    field: "tests",
                    stage,
                });
            }
        }
        Ok(())
    }
}

/// Preference control strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceMode {
    /// Keep every requirement and append a priority sentence.
    Instruction,
    /// Show only the targeted non-functional sections.
    PlugAndPlay,
}

/// The fixed paragraph describing the four non-functional requirements.
pub fn build_nfr_instruction_block() -> &'static str {
    include_str!("../assets/templates/nfr_instruction.txt")
}

/// Renders the prompt with the built-in templates.
pub fn build_prompt(plan: &PromptPlan, problem: &Problem) -> Result<String, PromptError> {
    build_prompt_with(&Templates::builtin(), plan, problem)
}

/// Example blocks, each followed by a blank line, then the query block and
/// the stage instruction. Pure: identical inputs give identical text.
pub fn build_prompt_with(
    templates: &Templates,
    plan: &PromptPlan,
    problem: &Problem,
) -> Result<String, PromptError> {
    plan.check()?;
    let filter = |doc: &str| match &plan.nfr_subset {
        Some(targets) => filter_nfr_sections(doc, targets),
        None => doc.to_string(),
    };
    let mut out = String::new();
    if plan.nfr_block {
        out.push_str(&templates.nfr_instruction);
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push('\n');
    }
    for ex in &plan.examples {
        let requirements = filter(&ex.requirements);
        let tests = filter(ex.tests.as_deref().unwrap_or(""));
        let block = fill_template(
            templates.example(plan.stage),
            &Slots {
                description: &ex.description,
                requirements: &requirements,
                tests: &tests,
                code: ex.code.as_deref().unwrap_or(""),
            },
        );
        out.push_str(block.trim_end_matches('\n'));
        out.push_str("\n\n");
    }
    let requirements = filter(plan.extra_context.requirements.as_deref().unwrap_or(""));
    let tests = filter(plan.extra_context.tests.as_deref().unwrap_or(""));
    let query = fill_template(
        templates.query(plan.stage),
        &Slots {
            description: &problem.description,
            requirements: &requirements,
            tests: &tests,
            code: "",
        },
    );
    out.push_str(query.trim_end_matches('\n'));
    out.push('\n');
    out.push_str(&plan.stage_instruction);
    if let Some(pref) = &plan.preference_instruction {
        out.push('\n');
        out.push_str(pref);
    }
    Ok(out)
}

fn check_targets(targets: &BTreeSet<Category>) -> Result<(), PromptError> {
    if targets.is_empty() {
        return Err(PromptError::EmptyTargets);
    }
    if let Some(c) = targets.iter().find(|c| c.is_functional()) {
        return Err(PromptError::NotNonFunctional(*c));
    }
    Ok(())
}

fn preference_name(c: Category) -> &'static str {
    match c {
        Category::NfrTime => "time performance",
        Category::NfrRobustness => "robustness",
        Category::NfrMaintainability => "maintainability",
        Category::NfrReliability => "reliability",
        Category::FrGeneral => "general",
        Category::FrEdge => "edge case",
    }
}

/// `Consider the time performance requirement to be the most important.`,
/// with the names joined when several categories are targeted.
pub fn preference_sentence(targets: &BTreeSet<Category>) -> Result<String, PromptError> {
    check_targets(targets)?;
    let names: Vec<&str> = targets.iter().map(|c| preference_name(*c)).collect();
    let (joined, noun) = match names.as_slice() {
        [one] => (one.to_string(), "requirement"),
        [init @ .., last] => (format!("{} and {}", init.join(", "), last), "requirements"),
        [] => unreachable!("checked non-empty"),
    };
    Ok(format!(
        "Consider the {joined} {noun} to be the most important."
    ))
}

/// Applies a preference to a plan. Instruction mode appends a priority
/// sentence; plug-and-play mode keeps only the targeted non-functional
/// sections of every example and of the attached requirement and test
/// documents.
pub fn apply_preference(
    mut plan: PromptPlan,
    mode: PreferenceMode,
    targets: &BTreeSet<Category>,
) -> Result<PromptPlan, PromptError> {
    check_targets(targets)?;
    match mode {
        PreferenceMode::Instruction => {
            plan.preference_instruction = Some(preference_sentence(targets)?);
        }
        PreferenceMode::PlugAndPlay => {
            for ex in &mut plan.examples {
                ex.requirements = filter_nfr_sections(&ex.requirements, targets);
                if let Some(t) = &ex.tests {
                    ex.tests = Some(filter_nfr_sections(t, targets));
                }
            }
            let ctx = &mut plan.extra_context;
            ctx.requirements = ctx
                .requirements
                .as_deref()
                .map(|d| filter_nfr_sections(d, targets));
            ctx.tests = ctx
                .tests
                .as_deref()
                .map(|d| filter_nfr_sections(d, targets));
            plan.nfr_subset = Some(targets.clone());
        }
    }
    Ok(plan)
}

/// Drops the non-functional sections of a requirement or test document
/// whose category is not in `keep`, together with everything nested under
/// them. Other lines are copied byte for byte, so keeping every
/// non-functional category returns the input unchanged.
pub fn filter_nfr_sections(doc: &str, keep: &BTreeSet<Category>) -> String {
    let keeps_quality = [
        Category::NfrRobustness,
        Category::NfrReliability,
        Category::NfrMaintainability,
    ]
    .iter()
    .any(|c| keep.contains(c));
    let mut out = String::with_capacity(doc.len());
    let mut in_nfr = false;
    let mut dropping: Option<usize> = None;
    for line in doc.split_inclusive('\n') {
        let Some(level) = heading_level(line) else {
            if dropping.is_none() {
                out.push_str(line);
            }
            continue;
        };
        if let Some(d) = dropping {
            if level > d {
                continue;
            }
            dropping = None;
        }
        match classify_heading(heading_text(line)) {
            Some(HeadingClass::NonFunctionalGroup) => in_nfr = true,
            Some(HeadingClass::FunctionalGroup | HeadingClass::ProblemAgnostic) => in_nfr = false,
            Some(HeadingClass::SpecificQualityGroup) if in_nfr && !keeps_quality => {
                dropping = Some(level);
                continue;
            }
            Some(HeadingClass::Leaf(c)) if in_nfr && !c.is_functional() && !keep.contains(&c) => {
                dropping = Some(level);
                continue;
            }
            _ => {}
        }
        out.push_str(line);
    }
    out
}
