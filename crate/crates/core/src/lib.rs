//! Requirements-aware code generation harness.
//!
//! The pipeline asks a model for a structured requirement document, then
//! (in parallel) for code candidates and requirement-tailored tests, runs
//! every candidate against the tests in a sandbox runner, ranks candidates
//! by weighted compliance and reports Pass@k with and without filtering.

pub mod bench;
pub mod exec;
pub mod gateway;
pub mod model;
pub mod parse;
pub mod prompt;
pub mod rank;

pub use model::{
    normalize_category, validate_problem, Category, CodeCandidate, GeneratedTest, Mode, Problem,
    RequirementSet, ResourceLimits, Status, TestKind, TestPayload, Verdict, VerdictMatrix,
};
pub use parse::{
    extract_code_block, parse_requirements_doc, parse_test_doc, serialize_test_doc,
    substitute_candidate, ParsedTestDoc,
};
