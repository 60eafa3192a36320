//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use reqbench_core::{parse_requirements_doc, parse_test_doc, Category, Mode, TestPayload};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Deserialize)]
pub struct Manifest {
    pub requirements: Vec<RequirementsEntry>,
    pub tests: Vec<TestsEntry>,
}

#[derive(Deserialize)]
pub struct RequirementsEntry {
    pub file: String,
    #[serde(flatten)]
    pub counts: BTreeMap<String, toml::Value>,
}

#[derive(Deserialize)]
pub struct TestsEntry {
    pub file: String,
    pub mode: Mode,
    pub cc_limits: Vec<u32>,
    pub reliability_markers: usize,
    #[serde(default)]
    pub stderr_expectations: usize,
    #[serde(flatten)]
    pub counts: BTreeMap<String, usize>,
}

pub fn manifest() -> Manifest {
    let text = std::fs::read_to_string(fixtures().join("docs/manifest.toml")).unwrap();
    toml::from_str(&text).unwrap()
}

fn read_doc(file: &str) -> String {
    std::fs::read_to_string(fixtures().join("docs").join(file)).unwrap()
}

/// Parses one requirement fixture and compares it with its manifest entry.
pub fn check_requirements(e: &RequirementsEntry) -> Result<(), String> {
    let rs = parse_requirements_doc(&read_doc(&e.file));
    let got = rs.bucket_counts();
    let mut errs = Vec::new();
    for (bucket, want) in &e.counts {
        if bucket == "contains" {
            continue;
        }
        let want = want.as_integer().ok_or(format!("{bucket}: not a count"))? as usize;
        let have = got
            .get(bucket.as_str())
            .copied()
            .ok_or(format!("unknown bucket {bucket}"))?;
        if have != want {
            errs.push(format!("{bucket}: got {have}, want {want}"));
        }
    }
    if got.len() != e.counts.keys().filter(|k| *k != "contains").count() {
        errs.push("manifest does not list every bucket".into());
    }
    if let Some(toml::Value::Table(t)) = e.counts.get("contains") {
        let buckets: BTreeMap<&str, &Vec<String>> = rs.named_buckets().into_iter().collect();
        for (bucket, item) in t {
            let item = item.as_str().unwrap_or_default();
            if !buckets
                .get(bucket.as_str())
                .is_some_and(|b| b.iter().any(|x| x == item))
            {
                errs.push(format!("{bucket} lacks {item:?}"));
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs.join("; "))
    }
}

/// Parses one test fixture and compares it with its manifest entry.
pub fn check_tests(e: &TestsEntry) -> Result<(), String> {
    let doc = parse_test_doc(&read_doc(&e.file), e.mode);
    let mut errs = Vec::new();
    let by_cat = doc.count_by_category();
    for c in Category::ALL {
        let want = e
            .counts
            .get(c.as_str())
            .copied()
            .ok_or(format!("manifest lacks {c}"))?;
        let have = by_cat.get(&c).copied().unwrap_or(0);
        if have != want {
            errs.push(format!("{c}: got {have}, want {want}"));
        }
    }
    let mut cc: Vec<u32> = doc
        .tests
        .iter()
        .filter_map(|t| match t.payload {
            TestPayload::CcThreshold { cc_limit } => Some(cc_limit),
            _ => None,
        })
        .collect();
    cc.sort_unstable();
    if cc != e.cc_limits {
        errs.push(format!("cc limits: got {cc:?}, want {:?}", e.cc_limits));
    }
    let markers = doc
        .tests
        .iter()
        .filter(|t| matches!(t.payload, TestPayload::ReliabilityMarker {}))
        .count();
    if markers != e.reliability_markers {
        errs.push(format!(
            "reliability markers: got {markers}, want {}",
            e.reliability_markers
        ));
    }
    let stderr = doc
        .tests
        .iter()
        .filter(|t| {
            matches!(
                t.payload,
                TestPayload::Stdio {
                    expected_stderr_substring: Some(_),
                    ..
                }
            )
        })
        .count();
    if stderr != e.stderr_expectations {
        errs.push(format!(
            "stderr expectations: got {stderr}, want {}",
            e.stderr_expectations
        ));
    }
    if !doc.warnings.is_empty() {
        errs.push(format!("warnings: {:?}", doc.warnings));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs.join("; "))
    }
}
