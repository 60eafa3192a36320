//! `ProcessRunner` against a scripted NDJSON runner process.

mod common;

use reqbench_core::bench::qc_filter_fr_tests;
use reqbench_core::exec::{run_candidate, run_matrix, ExecError, ProcessRunner, Runner};
use reqbench_core::model::Provenance;
use reqbench_core::{
    parse_test_doc, Category, CodeCandidate, GeneratedTest, Mode, Problem, ResourceLimits, Status,
};

fn runner(mode: &str, workers: usize) -> ProcessRunner {
    let script = common::fixtures().join("runner/fake_runner.py");
    ProcessRunner::new(
        vec!["python3".into(), script.display().to_string(), mode.into()],
        workers,
    )
    .unwrap()
}

fn candidate(idx: usize, source: &str) -> CodeCandidate {
    CodeCandidate {
        task_id: "HumanEval/83".into(),
        sample_index: idx,
        source: source.into(),
        reasoning: None,
        provenance: Provenance {
            provider: "test".into(),
            sampling_hash: String::new(),
        },
    }
}

fn limits() -> ResourceLimits {
    ResourceLimits::default_for(Mode::Function)
}

const SQUARE: &str = "def square(x):\n    return x * x\n";

fn square_tests() -> Vec<GeneratedTest> {
    vec![
        GeneratedTest::assertion("a", Category::FrGeneral, "assert square(3) == 9"),
        GeneratedTest::assertion("b", Category::FrEdge, "assert square(0) == 1"),
        GeneratedTest::assertion("c", Category::NfrRobustness, "assert square('x') is None"),
        GeneratedTest::cc_threshold("cc", 5),
        GeneratedTest::reliability_marker("rel"),
    ]
}

#[test]
fn verdicts_cc_and_reliability_through_a_process() {
    let r = runner("ok", 1);
    let v = run_candidate(
        &r,
        &candidate(0, SQUARE),
        &square_tests(),
        &limits(),
        Mode::Function,
    )
    .unwrap();
    let statuses: Vec<(&str, Status)> = v.iter().map(|v| (v.test_id.as_str(), v.status)).collect();
    assert_eq!(
        statuses,
        [
            ("a", Status::Pass),
            ("b", Status::Fail),
            ("c", Status::Error),
            ("cc", Status::Pass),
            ("rel", Status::Fail),
        ]
    );
    assert!(v[2].message.as_deref().unwrap().contains("TypeError"));
}

#[test]
fn workers_are_reused_and_matrix_matches_sequential() {
    let r = runner("ok", 3);
    let pool: Vec<CodeCandidate> = (0..8)
        .map(|i| {
            candidate(
                i,
                &format!("def square(x):\n    return x * x + {}\n", i % 2),
            )
        })
        .collect();
    let par = run_matrix(&r, &pool, &square_tests(), &limits(), Mode::Function, 4).unwrap();
    let seq = run_matrix(&r, &pool, &square_tests(), &limits(), Mode::Function, 1).unwrap();
    assert_eq!(par.status_grid(), seq.status_grid());
    assert!(par.aborted.is_empty());
    assert_eq!(par.get(0, "a").unwrap().status, Status::Pass);
    assert_eq!(par.get(1, "a").unwrap().status, Status::Fail);
}

#[test]
fn stdio_through_a_process() {
    let src = "import sys\na, b = map(int, sys.stdin.read().split())\nprint(a + b)\n";
    let tests = vec![
        GeneratedTest::stdio("s", Category::FrGeneral, "1 2\n", Some("3".into()), None),
        GeneratedTest::stdio("w", Category::FrGeneral, "1 1\n", Some("3".into()), None),
    ];
    let v = run_candidate(
        &runner("ok", 1),
        &candidate(0, src),
        &tests,
        &ResourceLimits::default_for(Mode::Stdio),
        Mode::Stdio,
    )
    .unwrap();
    assert_eq!(v[0].status, Status::Pass);
    assert_eq!(v[1].status, Status::Fail);
}

fn expect_unavailable(mode: &str, needle: &str) {
    let r = runner(mode, 1);
    let err = run_candidate(
        &r,
        &candidate(0, SQUARE),
        &square_tests(),
        &limits(),
        Mode::Function,
    )
    .unwrap_err();
    match err {
        ExecError::RunnerUnavailable(msg) => assert!(msg.contains(needle), "{mode}: {msg}"),
        other => panic!("{mode}: {other:?}"),
    }
}

#[test]
fn protocol_violations_surface_as_runner_errors() {
    expect_unavailable("desync", "desync");
    expect_unavailable("garbage", "malformed");
    expect_unavailable("partial", "worker lost a test");
}

#[test]
fn dead_worker_is_replaced() {
    let r = runner("die_after_one", 1);
    let c = candidate(0, SQUARE);
    let tests = square_tests();
    assert!(r.run_ok(&c, &tests));
    // The second request hits the dying process; the one after gets a fresh one.
    assert!(!r.run_ok(&c, &tests));
    assert!(r.run_ok(&c, &tests));
}

trait RunOk {
    fn run_ok(&self, c: &CodeCandidate, tests: &[GeneratedTest]) -> bool;
}

impl<R: Runner> RunOk for R {
    fn run_ok(&self, c: &CodeCandidate, tests: &[GeneratedTest]) -> bool {
        run_candidate(self, c, tests, &limits(), Mode::Function).is_ok()
    }
}

#[test]
fn missing_program_is_unavailable() {
    let r = ProcessRunner::new(vec!["/nonexistent/runner".into()], 1).unwrap();
    let err = run_candidate(
        &r,
        &candidate(0, SQUARE),
        &square_tests(),
        &limits(),
        Mode::Function,
    )
    .unwrap_err();
    assert!(matches!(err, ExecError::RunnerUnavailable(_)));
}

/// The published reference solution for this task computes a different
/// quantity than the one the generated functional tests check, so quality
/// control discards every functional test and keeps the rest.
#[test]
fn qc_discards_functional_tests_the_reference_fails() {
    let doc =
        std::fs::read_to_string(common::fixtures().join("docs/starts_one_ends.tests.md")).unwrap();
    let tests = parse_test_doc(&doc, Mode::Function).tests;
    let problem = Problem {
        task_id: "HumanEval/83".into(),
        mode: Mode::Function,
        description: "count n-digit positive integers that start or end with 1".into(),
        entry_point: Some("starts_one_ends".into()),
        canonical_solution: Some(
            "def starts_one_ends(n):\n    if n == 1: return 1\n    return 18 * (10 ** (n - 2))\n"
                .into(),
        ),
        gt_tests: Vec::new(),
        limits: limits(),
    };
    let qc = qc_filter_fr_tests(&runner("ok", 1), &problem, &tests).unwrap();
    let fr = tests.iter().filter(|t| t.category.is_functional()).count();
    assert_eq!(fr, 5);
    assert_eq!(qc.discarded.len(), 5);
    assert!(qc.discarded.iter().all(|d| d.status == Status::Fail));
    assert_eq!(qc.kept.len(), tests.len() - 5);
    assert!(qc.kept.iter().all(|t| !t.category.is_functional()));

    // A solution consistent with the tests keeps everything.
    let mut fixed = problem.clone();
    fixed.canonical_solution = Some(
        "def starts_one_ends(n):\n    if n < 1: return 0\n    return {1: 9, 2: 19, 3: 271}.get(n, 0)\n".into(),
    );
    let qc = qc_filter_fr_tests(&runner("ok", 1), &fixed, &tests).unwrap();
    assert!(qc.discarded.is_empty());
    assert_eq!(qc.kept, tests);

    let qc = qc_filter_fr_tests(&runner("ok", 1), &problem, &[]).unwrap();
    assert!(qc.kept.is_empty() && qc.discarded.is_empty());
}
