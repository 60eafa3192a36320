//! Candidate scoring, top-k filtering and Pass@k.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::evaluate_reliability;
use crate::model::{Category, GeneratedTest, TestKind, Verdict, VerdictMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("pass@k undefined for n={n}, c={c}, k={k}")]
    Domain { n: usize, c: usize, k: usize },
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("no ground-truth tests for {0}")]
    MissingCategoryTests(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each test adds its category weight when it passes.
    PerTest,
    /// Each category adds its weight times its pass fraction.
    #[default]
    PerCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    weights: BTreeMap<Category, f64>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl Default for WeightProfile {
    fn default() -> Self {
        WeightProfile {
            weights: Category::ALL.into_iter().map(|c| (c, 1.0)).collect(),
            normalization: Normalization::PerCategory,
        }
    }
}

impl WeightProfile {
    /// Categories missing from `weights` get 1.0.
    pub fn new(
        weights: BTreeMap<Category, f64>,
        normalization: Normalization,
    ) -> Result<Self, RankError> {
        let mut full: BTreeMap<Category, f64> =
            Category::ALL.into_iter().map(|c| (c, 1.0)).collect();
        full.extend(weights);
        let wp = WeightProfile {
            weights: full,
            normalization,
        };
        wp.validate()?;
        Ok(wp)
    }

    /// Weight 1 on `targets`, 0 elsewhere.
    pub fn only(targets: &[Category]) -> Result<Self, RankError> {
        let w = Category::ALL
            .into_iter()
            .map(|c| (c, if targets.contains(&c) { 1.0 } else { 0.0 }))
            .collect();
        WeightProfile::new(w, Normalization::PerCategory)
    }

    pub fn validate(&self) -> Result<(), RankError> {
        for (c, w) in &self.weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(RankError::InvalidWeights(format!("{c} has weight {w}")));
            }
        }
        if !self.weights.values().any(|w| *w > 0.0) {
            return Err(RankError::InvalidWeights(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn weight(&self, c: Category) -> f64 {
        self.weights.get(&c).copied().unwrap_or(1.0)
    }

    pub fn weights(&self) -> &BTreeMap<Category, f64> {
        &self.weights
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        WeightProfile {
            weights: self.weights.iter().map(|(c, w)| (*c, w * lambda)).collect(),
            normalization: self.normalization,
        }
    }
}

/// Weighted compliance of one candidate row with the generated tests.
/// Tests without a verdict in `row` count as not passed.
pub fn score_candidate(row: &[Verdict], tests: &[GeneratedTest], weights: &WeightProfile) -> f64 {
    let passed: BTreeSet<&str> = row
        .iter()
        .filter(|v| v.passed())
        .map(|v| v.test_id.as_str())
        .collect();
    match weights.normalization {
        Normalization::PerTest => tests
            .iter()
            .filter(|t| passed.contains(t.test_id.as_str()))
            .map(|t| weights.weight(t.category))
            .sum(),
        Normalization::PerCategory => {
            let mut per: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
            for t in tests {
                let e = per.entry(t.category).or_default();
                e.1 += 1;
                if passed.contains(t.test_id.as_str()) {
                    e.0 += 1;
                }
            }
            per.iter()
                .map(|(c, (p, n))| weights.weight(*c) * (*p as f64 / (*n).max(1) as f64))
                .sum()
        }
    }
}

/// The `min(k, n)` best sample indices by score, ties broken by ascending
/// sample index.
///
/// Scores are compared relative to the pool maximum at a resolution of
/// 1e-9, so sums that are equal in exact arithmetic tie even when rounding
/// differs, and scaling every weight by a positive constant never changes
/// the selection.
pub fn filter_top_k(scores: &[(usize, f64)], k: usize) -> Result<Vec<usize>, RankError> {
    if scores.is_empty() {
        return Err(RankError::EmptyPool);
    }
    if k == 0 {
        return Err(RankError::ZeroK);
    }
    let max = scores
        .iter()
        .map(|(_, s)| s.abs())
        .filter(|s| s.is_finite())
        .fold(0.0, f64::max);
    let key = |s: f64| -> i64 {
        if max > 0.0 && s.is_finite() {
            (s / max * 1e9).round() as i64
        } else {
            0
        }
    };
    let mut v: Vec<(usize, i64)> = scores.iter().map(|&(i, s)| (i, key(s))).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(v.into_iter().take(k).map(|(i, _)| i).collect())
}

/// Unbiased Pass@k estimate `1 - C(n-c, k) / C(n, k)`, evaluated as
/// `1 - prod_{i=n-c+1}^{n} (1 - k/i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, RankError> {
    if c > n || k == 0 || k > n {
        return Err(RankError::Domain { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // The product is the ratio prod (i - k) / prod i. While both fit in
    // integers, 1 - ratio is formed exactly and divided once, so results
    // such as k/n for c = 1 are correctly rounded.
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in n - c + 1..=n {
        match (num.checked_mul((i - k) as u128), den.checked_mul(i as u128)) {
            (Some(a), Some(b)) => {
                let g = gcd(a, b);
                num = a / g;
                den = b / g;
            }
            _ => {
                let prod: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
                return Ok(1.0 - prod);
            }
        }
    }
    Ok((den - num) as f64 / den as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Which ground-truth tests a candidate must pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Every functional test: the headline pass criterion.
    Functional,
    Category(Category),
    /// Every ground-truth test of every category.
    All,
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Functional => "FR".into(),
            Target::Category(c) => c.label().into(),
            Target::All => "All".into(),
        }
    }
}

/// Everything the ranker needs about one problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemVerdicts {
    pub task_id: String,
    pub gen_tests: Vec<GeneratedTest>,
    pub gen: VerdictMatrix,
    pub gt_tests: Vec<GeneratedTest>,
    pub gt: VerdictMatrix,
}

impl ProblemVerdicts {
    /// Candidates with complete rows in both matrices.
    pub fn candidates(&self) -> Vec<usize> {
        self.gt
            .rows
            .keys()
            .copied()
            .filter(|i| self.gen_tests.is_empty() || self.gen.rows.contains_key(i))
            .collect()
    }

    /// Whether candidate `idx` satisfies `target` on the ground truth.
    pub fn passes(&self, idx: usize, target: Target) -> Result<bool, RankError> {
        let row = self.gt.row(idx).unwrap_or(&[]);
        let status_of = |id: &str| {
            row.iter()
                .find(|v| v.test_id == id)
                .map(|v| v.passed())
                .unwrap_or(false)
        };
        let non_marker = |t: &&GeneratedTest| t.kind() != TestKind::ReliabilityMarker;
        let reliability = || {
            let others: Vec<Verdict> = self
                .gt_tests
                .iter()
                .filter(non_marker)
                .filter_map(|t| row.iter().find(|v| v.test_id == t.test_id).cloned())
                .collect();
            evaluate_reliability("reliability", &others).passed()
        };
        let selected: Vec<&GeneratedTest> = match target {
            Target::Functional => self
                .gt_tests
                .iter()
                .filter(|t| t.category.is_functional())
                .collect(),
            Target::Category(Category::NfrReliability) => {
                if !self.gt_tests.iter().any(|t| non_marker(&t)) {
                    return Err(RankError::MissingCategoryTests(
                        Category::NfrReliability.to_string(),
                    ));
                }
                return Ok(reliability());
            }
            Target::Category(c) => self.gt_tests.iter().filter(|t| t.category == c).collect(),
            Target::All => {
                let all_pass = self
                    .gt_tests
                    .iter()
                    .filter(|t| t.category != Category::NfrReliability)
                    .all(|t| status_of(&t.test_id));
                if self.gt_tests.is_empty() {
                    return Err(RankError::MissingCategoryTests("all".into()));
                }
                return Ok(all_pass && reliability());
            }
        };
        if selected.is_empty() {
            return Err(RankError::MissingCategoryTests(match target {
                Target::Functional => "functional".into(),
                _ => target.label(),
            }));
        }
        Ok(selected.iter().all(|t| status_of(&t.test_id)))
    }

    /// Scores of every candidate against the generated tests.
    pub fn scores(&self, weights: &WeightProfile) -> Vec<(usize, f64)> {
        self.candidates()
            .into_iter()
            .map(|i| {
                (
                    i,
                    score_candidate(self.gen.row(i).unwrap_or(&[]), &self.gen_tests, weights),
                )
            })
            .collect()
    }

    /// Number of candidates satisfying `target`.
    pub fn count_passing(&self, target: Target) -> Result<usize, RankError> {
        let mut c = 0;
        for i in self.candidates() {
            if self.passes(i, target)? {
                c += 1;
            }
        }
        Ok(c)
    }
}

/// 1 if any of the top-k candidates by generated-test score passes the
/// functional ground truth, else 0.
pub fn filtered_pass_at_k(
    pv: &ProblemVerdicts,
    k: usize,
    weights: &WeightProfile,
) -> Result<f64, RankError> {
    filtered_target_pass(pv, Target::Functional, k, weights)
}

fn filtered_target_pass(
    pv: &ProblemVerdicts,
    target: Target,
    k: usize,
    weights: &WeightProfile,
) -> Result<f64, RankError> {
    let top = filter_top_k(&pv.scores(weights), k)?;
    for i in top {
        if pv.passes(i, target)? {
            return Ok(1.0);
        }
    }
    Ok(0.0)
}

/// Unfiltered Pass@k for each `k`, counting candidates that pass every
/// ground-truth test of `category`. `k` larger than the pool is clamped to
/// the pool size.
pub fn category_pass_at_k(
    pv: &ProblemVerdicts,
    target: Target,
    ks: &[usize],
) -> Result<Vec<f64>, RankError> {
    let n = pv.candidates().len();
    if n == 0 {
        return Err(RankError::EmptyPool);
    }
    let c = pv.count_passing(target)?;
    ks.iter().map(|&k| pass_at_k(n, c, k.min(n))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub task_id: String,
    pub n: usize,
    /// Candidates passing the functional ground truth.
    pub c_gt: usize,
    /// Sample indices in filtered order.
    pub ranking: Vec<usize>,
    pub scores: BTreeMap<usize, f64>,
    pub aborted: usize,
    /// Passing-candidate counts per target; absent when the problem has no
    /// ground-truth tests for it.
    pub target_counts: BTreeMap<String, usize>,
}

/// Pass@k with and without filtering, overall and per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKReport {
    pub ks: Vec<usize>,
    pub problems: Vec<ProblemReport>,
    /// Problems with no executable candidate, excluded from the means.
    pub excluded: Vec<String>,
    /// `k -> mean Pass@k` over the functional ground truth.
    pub unfiltered: BTreeMap<usize, f64>,
    pub filtered: BTreeMap<usize, f64>,
    pub per_category: Vec<CategoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub target: Target,
    pub label: String,
    /// Problems contributing to this row.
    pub problems: usize,
    /// Problems lacking ground-truth tests for this target.
    pub missing: usize,
    pub unfiltered: BTreeMap<usize, f64>,
    pub filtered: BTreeMap<usize, f64>,
}

/// Rows reported per category: the four non-functional categories and the
/// all-tests row.
pub const CATEGORY_ROWS: [Target; 5] = [
    Target::All,
    Target::Category(Category::NfrTime),
    Target::Category(Category::NfrRobustness),
    Target::Category(Category::NfrMaintainability),
    Target::Category(Category::NfrReliability),
];

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Aggregates per-problem verdicts into a report.
pub fn build_report(
    problems: &[ProblemVerdicts],
    ks: &[usize],
    weights: &WeightProfile,
) -> Result<PassKReport, RankError> {
    weights.validate()?;
    if ks.contains(&0) {
        return Err(RankError::ZeroK);
    }
    let mut reports = Vec::new();
    let mut excluded = Vec::new();
    let mut fr_unf: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut fr_fil: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    // (target, problems missing it, unfiltered by k, filtered by k)
    type Row = (
        Target,
        usize,
        BTreeMap<usize, Vec<f64>>,
        BTreeMap<usize, Vec<f64>>,
    );
    let mut rows: Vec<Row> = CATEGORY_ROWS
        .iter()
        .map(|t| (*t, 0, BTreeMap::new(), BTreeMap::new()))
        .collect();
    for pv in problems {
        let cands = pv.candidates();
        let n = cands.len();
        if n == 0 {
            excluded.push(pv.task_id.clone());
            continue;
        }
        let scores = pv.scores(weights);
        let ranking = filter_top_k(&scores, n)?;
        let mut target_counts = BTreeMap::new();
        let c_gt = match pv.count_passing(Target::Functional) {
            Ok(c) => c,
            Err(RankError::MissingCategoryTests(_)) => {
                excluded.push(pv.task_id.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        target_counts.insert(Target::Functional.label(), c_gt);
        for &k in ks {
            let kk = k.min(n);
            fr_unf.entry(k).or_default().push(pass_at_k(n, c_gt, kk)?);
            fr_fil.entry(k).or_default().push(filtered_target_pass(
                pv,
                Target::Functional,
                kk,
                weights,
            )?);
        }
        for (target, missing, unf, fil) in rows.iter_mut() {
            let c = match pv.count_passing(*target) {
                Ok(c) => c,
                Err(RankError::MissingCategoryTests(_)) => {
                    *missing += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            target_counts.insert(target.label(), c);
            for &k in ks {
                let kk = k.min(n);
                unf.entry(k).or_default().push(pass_at_k(n, c, kk)?);
                fil.entry(k)
                    .or_default()
                    .push(filtered_target_pass(pv, *target, kk, weights)?);
            }
        }
        reports.push(ProblemReport {
            task_id: pv.task_id.clone(),
            n,
            c_gt,
            ranking,
            scores: scores.into_iter().collect(),
            aborted: pv.gen.aborted.len().max(pv.gt.aborted.len()),
            target_counts,
        });
    }
    let means = |m: &BTreeMap<usize, Vec<f64>>| -> BTreeMap<usize, f64> {
        ks.iter()
            .map(|k| (*k, mean(m.get(k).map(Vec::as_slice).unwrap_or(&[]))))
            .collect()
    };
    let per_category = rows
        .iter()
        .map(|(target, missing, unf, fil)| CategoryRow {
            target: *target,
            label: target.label(),
            problems: reports.len() - missing,
            missing: *missing,
            unfiltered: means(unf),
            filtered: means(fil),
        })
        .collect();
    Ok(PassKReport {
        ks: ks.to_vec(),
        unfiltered: means(&fr_unf),
        filtered: means(&fr_fil),
        problems: reports,
        excluded,
        per_category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Status;

    fn choose(n: u64, k: u64) -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(10, 10, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
        assert!((pass_at_k(10, 3, 2).unwrap() - 8.0 / 15.0).abs() < 1e-15);
        assert_eq!(pass_at_k(10, 1, 1).unwrap(), 0.1);
        assert!((pass_at_k(10, 4, 1).unwrap() - 0.4).abs() < 1e-15);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn pass_at_k_matches_binomial_for_larger_n() {
        for n in 1..=40u64 {
            for c in 0..=n {
                for k in 1..=n {
                    let want = 1.0 - choose(n - c, k) / choose(n, k);
                    let got = pass_at_k(n as usize, c as usize, k as usize).unwrap();
                    assert!((want - got).abs() < 1e-9, "{n} {c} {k}");
                }
            }
        }
    }

    #[test]
    fn pass_at_k_float_fallback_agrees() {
        // c large enough that the exact ratio overflows u128.
        let got = pass_at_k(200, 60, 3).unwrap();
        let want = 1.0 - choose(140, 3) / choose(200, 3);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn pass_at_k_monotone() {
        for n in 1..=12 {
            for c in 0..=n {
                for k in 1..=n {
                    let v = pass_at_k(n, c, k).unwrap();
                    assert!((0.0..=1.0).contains(&v));
                    if k < n {
                        assert!(pass_at_k(n, c, k + 1).unwrap() >= v - 1e-15);
                    }
                    if c < n {
                        assert!(pass_at_k(n, c + 1, k).unwrap() >= v - 1e-15);
                    }
                }
                assert_eq!(pass_at_k(n, c, n).unwrap(), if c > 0 { 1.0 } else { 0.0 });
            }
        }
    }

    fn t(id: &str, c: Category) -> GeneratedTest {
        GeneratedTest::assertion(id, c, "assert True")
    }

    fn v(id: &str, pass: bool) -> Verdict {
        Verdict::new(id, if pass { Status::Pass } else { Status::Fail })
    }

    #[test]
    fn score_examples() {
        let tests = vec![
            t("g1", Category::FrGeneral),
            t("g2", Category::FrGeneral),
            t("g3", Category::FrGeneral),
            t("e1", Category::FrEdge),
            t("e2", Category::FrEdge),
        ];
        let w = WeightProfile::default();
        let all: Vec<Verdict> = tests.iter().map(|x| v(&x.test_id, true)).collect();
        assert_eq!(score_candidate(&all, &tests, &w), 2.0);
        let mixed = vec![
            v("g1", true),
            v("g2", true),
            v("g3", true),
            v("e1", false),
            v("e2", false),
        ];
        assert_eq!(score_candidate(&mixed, &tests, &w), 1.0);
        assert_eq!(score_candidate(&mixed, &tests, &w.scaled(2.0)), 2.0);
        let per_test = WeightProfile {
            normalization: Normalization::PerTest,
            ..w.clone()
        };
        assert_eq!(score_candidate(&mixed, &tests, &per_test), 3.0);
        assert_eq!(score_candidate(&[], &tests, &w), 0.0);
    }

    #[test]
    fn weight_validation() {
        assert!(WeightProfile::only(&[]).is_err());
        let mut m = BTreeMap::new();
        m.insert(Category::FrEdge, -1.0);
        assert!(WeightProfile::new(m, Normalization::PerTest).is_err());
        let w = WeightProfile::only(&[Category::NfrTime]).unwrap();
        assert_eq!(w.weight(Category::NfrTime), 1.0);
        assert_eq!(w.weight(Category::FrGeneral), 0.0);
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<WeightProfile>(&json).unwrap(), w);
    }

    #[test]
    fn top_k_tie_break() {
        assert_eq!(
            filter_top_k(&[(0, 2.0), (1, 3.0), (2, 3.0)], 2).unwrap(),
            [1, 2]
        );
        assert_eq!(
            filter_top_k(&[(0, 2.0), (1, 3.0), (2, 3.0)], 9).unwrap(),
            [1, 2, 0]
        );
        assert_eq!(filter_top_k(&[], 1), Err(RankError::EmptyPool));
        assert_eq!(filter_top_k(&[(0, 1.0)], 0), Err(RankError::ZeroK));
    }

    #[test]
    fn top_k_ignores_rounding_noise() {
        let a = 7.3 / 3.0 + 7.3 * 2.0 / 3.0;
        assert_eq!(
            filter_top_k(&[(0, 7.3), (1, a), (2, 1.0)], 3).unwrap(),
            [0, 1, 2]
        );
        assert_eq!(filter_top_k(&[(0, a), (1, 7.3)], 2).unwrap(), [0, 1]);
        assert_eq!(filter_top_k(&[(0, 0.0), (1, 0.0)], 1).unwrap(), [0]);
    }

    fn matrix(rows: Vec<(usize, Vec<Verdict>)>) -> VerdictMatrix {
        VerdictMatrix {
            rows: rows.into_iter().collect(),
            aborted: vec![],
        }
    }

    /// n candidates; candidate `good` passes ground truth and every
    /// generated test, the rest fail both.
    fn one_good_pool(n: usize, good: usize) -> ProblemVerdicts {
        let gen_tests = vec![t("a", Category::FrGeneral), t("b", Category::NfrRobustness)];
        let gt_tests = vec![t("g", Category::FrGeneral), t("r", Category::NfrRobustness)];
        ProblemVerdicts {
            task_id: "p".into(),
            gen: matrix(
                (0..n)
                    .map(|i| (i, vec![v("a", i == good), v("b", i == good)]))
                    .collect(),
            ),
            gt: matrix(
                (0..n)
                    .map(|i| (i, vec![v("g", i == good), v("r", i == good)]))
                    .collect(),
            ),
            gen_tests,
            gt_tests,
        }
    }

    #[test]
    fn filtering_finds_the_single_good_candidate() {
        let pv = one_good_pool(10, 7);
        let w = WeightProfile::default();
        assert_eq!(filtered_pass_at_k(&pv, 1, &w).unwrap(), 1.0);
        assert_eq!(
            category_pass_at_k(&pv, Target::Functional, &[1]).unwrap(),
            [0.1]
        );
        let none = ProblemVerdicts {
            gt: matrix(
                (0..10)
                    .map(|i| (i, vec![v("g", false), v("r", false)]))
                    .collect(),
            ),
            ..pv.clone()
        };
        for k in 1..=10 {
            assert_eq!(filtered_pass_at_k(&none, k, &w).unwrap(), 0.0);
        }
    }

    #[test]
    fn identical_pool_is_plain_pass() {
        for pass in [true, false] {
            let pv = ProblemVerdicts {
                task_id: "p".into(),
                gen_tests: vec![t("a", Category::FrGeneral)],
                gen: matrix((0..5).map(|i| (i, vec![v("a", true)])).collect()),
                gt_tests: vec![t("g", Category::FrGeneral)],
                gt: matrix((0..5).map(|i| (i, vec![v("g", pass)])).collect()),
            };
            let want = if pass { 1.0 } else { 0.0 };
            assert_eq!(
                filtered_pass_at_k(&pv, 1, &WeightProfile::default()).unwrap(),
                want
            );
        }
    }

    #[test]
    fn category_semantics() {
        let gt_tests = vec![
            t("g", Category::FrGeneral),
            t("p", Category::NfrTime),
            t("r", Category::NfrRobustness),
            GeneratedTest::cc_threshold("m", 5),
            GeneratedTest::reliability_marker("rel"),
        ];
        let all = vec![
            v("g", true),
            v("p", true),
            v("r", true),
            v("m", true),
            v("rel", true),
        ];
        let cc_fail = vec![
            v("g", true),
            v("p", true),
            v("r", true),
            v("m", false),
            v("rel", true),
        ];
        let errored = vec![
            v("g", true),
            Verdict::new("p", Status::Error),
            v("r", true),
            v("m", true),
            v("rel", false),
        ];
        let pv = ProblemVerdicts {
            task_id: "p".into(),
            gen_tests: vec![],
            gen: VerdictMatrix::default(),
            gt_tests,
            gt: matrix(vec![(0, all), (1, cc_fail), (2, errored)]),
        };
        let passes = |i, t| pv.passes(i, t).unwrap();
        for target in CATEGORY_ROWS {
            assert!(passes(0, target));
        }
        assert!(!passes(1, Target::Category(Category::NfrMaintainability)));
        assert!(!passes(1, Target::All));
        assert!(passes(1, Target::Category(Category::NfrTime)));
        assert!(passes(1, Target::Category(Category::NfrReliability)));
        assert!(!passes(2, Target::Category(Category::NfrReliability)));
        assert!(!passes(2, Target::Category(Category::NfrTime)));
        assert!(passes(2, Target::Functional));
        assert_eq!(pv.count_passing(Target::All).unwrap(), 1);
    }

    #[test]
    fn missing_category_is_reported() {
        let pv = ProblemVerdicts {
            task_id: "p".into(),
            gt_tests: vec![t("g", Category::FrGeneral)],
            gt: matrix(vec![(0, vec![v("g", true)])]),
            ..Default::default()
        };
        assert_eq!(
            category_pass_at_k(&pv, Target::Category(Category::NfrTime), &[1]),
            Err(RankError::MissingCategoryTests("Time Perf.".into()))
        );
        let r = build_report(&[pv], &[1], &WeightProfile::default()).unwrap();
        let time = r
            .per_category
            .iter()
            .find(|c| c.label == "Time Perf.")
            .unwrap();
        assert_eq!((time.problems, time.missing), (0, 1));
        assert_eq!(r.unfiltered[&1], 1.0);
    }

    #[test]
    fn targeted_weights_rank_by_that_category_only() {
        let gen_tests = vec![
            t("g", Category::FrGeneral),
            t("r1", Category::NfrRobustness),
            t("r2", Category::NfrRobustness),
        ];
        // Robustness passes: c0 0, c1 2, c2 1; general passes vary independently.
        let rows = vec![
            (0, vec![v("g", true), v("r1", false), v("r2", false)]),
            (1, vec![v("g", false), v("r1", true), v("r2", true)]),
            (2, vec![v("g", true), v("r1", true), v("r2", false)]),
        ];
        let pv = ProblemVerdicts {
            task_id: "p".into(),
            gen_tests,
            gen: matrix(rows.clone()),
            gt_tests: vec![t("x", Category::FrGeneral)],
            gt: matrix((0..3).map(|i| (i, vec![v("x", true)])).collect()),
        };
        let w = WeightProfile::only(&[Category::NfrRobustness]).unwrap();
        let top = filter_top_k(&pv.scores(&w), 3).unwrap();
        assert_eq!(top, [1, 2, 0]);
        // Flipping the general verdicts leaves the selection unchanged.
        let mut flipped = pv.clone();
        for row in flipped.gen.rows.values_mut() {
            row[0].status = if row[0].status == Status::Pass {
                Status::Fail
            } else {
                Status::Pass
            };
        }
        assert_eq!(filter_top_k(&flipped.scores(&w), 3).unwrap(), top);
    }

    #[test]
    fn report_excludes_empty_problems_and_clamps_k() {
        let good = one_good_pool(3, 0);
        let empty = ProblemVerdicts {
            task_id: "empty".into(),
            ..Default::default()
        };
        let r = build_report(&[good, empty], &[1, 5], &WeightProfile::default()).unwrap();
        assert_eq!(r.excluded, ["empty"]);
        assert_eq!(r.problems.len(), 1);
        assert_eq!(r.filtered[&1], 1.0);
        assert!((r.unfiltered[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.unfiltered[&5], 1.0);
        assert_eq!(r.problems[0].ranking, [0, 1, 2]);
    }
}
