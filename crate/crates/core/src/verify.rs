//! Self-check battery run by `fairrank verify`: oracle equivalence of the
//! exact re-ranker, the λ = 0 identity, monotone exposure along a λ grid,
//! and metric bounds, all on seeded random instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{Interaction, InteractionMatrix, PopularityPartition};
use crate::error::Result;
use crate::metrics::{evaluate_all, RelevanceJudgments};
use crate::rerank::{
    fairness_f, rerank_exact_with, rerank_oracle, top_k, RecommendationLists, RerankConfig,
    TieBreak,
};
use crate::scorers::{ScoreMatrix, MASKED};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub evaluations: usize,
    #[doc(hidden)]
    pub tie_break: TieBreak,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 2024,
            instances: 200,
            evaluations: 100,
            tie_break: TieBreak::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub failures: Vec<String>,
}

/// A small random re-ranking instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub scores: ScoreMatrix,
    pub part: PopularityPartition,
    pub k: usize,
}

/// `λ ∈ {0, 0.1, …, 2.0}`.
pub fn lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

/// Random instance with m ≤ 5, n ≤ 12, K ≤ 4. Odd-numbered cases draw
/// scores from a coarse grid so that ties are common; some cells are masked
/// while keeping at least K selectable items per user.
pub fn random_instance(rng: &mut impl Rng, case: usize) -> Instance {
    let m = rng.gen_range(1..=5);
    let n = rng.gen_range(2..=12);
    let k = rng.gen_range(1..=4.min(n));
    let coarse = case % 2 == 1;
    let mut scores = ScoreMatrix::filled(m, n, 0.0);
    for u in 0..m {
        for j in 0..n {
            let v = if coarse {
                rng.gen_range(0..8) as f64 / 8.0
            } else {
                rng.gen::<f64>()
            };
            scores.set(u, j, v);
        }
        let maskable = n - k;
        let masked = if case.is_multiple_of(3) {
            rng.gen_range(0..=maskable)
        } else {
            0
        };
        let mut cols: Vec<usize> = (0..n).collect();
        cols.shuffle(rng);
        for &j in cols.iter().take(masked) {
            scores.set(u, j, MASKED);
        }
    }
    let short_head = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    Instance {
        scores,
        part: PopularityPartition {
            short_head,
            popularity_count: vec![0; n],
        },
        k,
    }
}

fn sets(lists: &RecommendationLists) -> Vec<Vec<usize>> {
    (0..lists.m()).map(|u| lists.selected_set(u)).collect()
}

fn outcome(name: &'static str, cases: usize, failures: Vec<String>) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failures.is_empty(),
        cases,
        failures,
    }
}

fn oracle_equivalence(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut failures = Vec::new();
    let mut cases = 0;
    for case in 0..opts.instances {
        let inst = random_instance(&mut rng, case);
        for lambda in lambda_grid() {
            let cfg = RerankConfig::with_lambda(inst.k, lambda);
            let exact = rerank_exact_with(&inst.scores, &inst.part, &cfg, opts.tie_break)?;
            let oracle = rerank_oracle(&inst.scores, &inst.part, &cfg)?;
            cases += 1;
            let dz = (exact.objective - oracle.objective).abs();
            if dz > 1e-9 {
                failures.push(format!("instance {case}, λ={lambda}: |ΔZ| = {dz:e}"));
            } else if sets(&exact.lists) != sets(&oracle.lists) {
                failures.push(format!("instance {case}, λ={lambda}: selected sets differ"));
            }
        }
    }
    Ok(outcome("oracle equivalence", cases, failures))
}

fn lambda_zero_identity(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut failures = Vec::new();
    for case in 0..opts.instances {
        let inst = random_instance(&mut rng, case);
        let cfg = RerankConfig::with_lambda(inst.k, 0.0);
        let exact = rerank_exact_with(&inst.scores, &inst.part, &cfg, opts.tie_break)?;
        let plain = top_k(&inst.scores, inst.k)?;
        if sets(&exact.lists) != sets(&plain) {
            failures.push(format!("instance {case}: λ = 0 differs from plain top-K"));
        }
    }
    Ok(outcome("lambda zero identity", opts.instances, failures))
}

fn monotone_exposure(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xface);
    let mut failures = Vec::new();
    for case in 0..opts.instances {
        let inst = random_instance(&mut rng, case);
        let m = inst.scores.m();
        let mut prev: Option<(usize, f64)> = None;
        let (lo, hi) = inst.scores.finite_range().unwrap_or((0.0, 0.0));
        let mut grid = lambda_grid();
        // one point past the all-long-tail threshold λ > m (max R − min R)
        let saturating = m as f64 * (hi - lo) + 1.0;
        grid.push(saturating);
        for &lambda in &grid {
            let cfg = RerankConfig::with_lambda(inst.k, lambda);
            let out = rerank_exact_with(&inst.scores, &inst.part, &cfg, opts.tie_break)?;
            let fv = fairness_f(&out.lists, &inst.part)?;
            if let Some((short, f)) = prev {
                if fv.short_count > short || fv.f > f {
                    failures.push(format!("instance {case}: exposure rose at λ={lambda}"));
                }
            }
            prev = Some((fv.short_count, fv.f));
        }
        let enough_long = (0..m).all(|u| {
            (0..inst.scores.n())
                .filter(|&j| !inst.part.is_short(j) && !inst.scores.is_masked(u, j))
                .count()
                >= inst.k
        });
        if enough_long && prev.is_some_and(|(short, _)| short != 0) {
            failures.push(format!(
                "instance {case}: short-head items survive λ={saturating}"
            ));
        }
    }
    Ok(outcome("monotone exposure", opts.instances, failures))
}

/// Random lists, judgments and training data for bound checks.
pub fn random_evaluation(
    rng: &mut impl Rng,
) -> (
    RecommendationLists,
    RelevanceJudgments,
    InteractionMatrix,
    PopularityPartition,
) {
    let m = rng.gen_range(2..=30);
    let n = rng.gen_range(12..=60);
    let k = rng.gen_range(2..=10);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for user in 0..m {
        for item in 0..n {
            let roll: f64 = rng.gen();
            if roll < 0.15 {
                train.push(Interaction {
                    user,
                    item,
                    weight: 1.0,
                });
            } else if roll < 0.2 {
                test.push(Interaction {
                    user,
                    item,
                    weight: 1.0,
                });
            }
        }
    }
    if test.is_empty() {
        test.push(Interaction {
            user: 0,
            item: 0,
            weight: 1.0,
        });
    }
    let lists = (0..m)
        .map(|_| {
            let mut items: Vec<usize> = (0..n).collect();
            items.shuffle(rng);
            items.truncate(k);
            items
        })
        .collect();
    let lists = RecommendationLists::new(k, n, lists).expect("valid lists");
    let judgments = RelevanceJudgments::from_interactions(m, &test);
    let train_matrix = InteractionMatrix::new(m, n, &train).expect("in range");
    let part = crate::dataset::partition_popularity(&train, n, 0.2).expect("n > 0");
    (lists, judgments, train_matrix, part)
}

fn metric_bounds(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xbeef);
    let mut failures = Vec::new();
    for case in 0..opts.evaluations {
        let (lists, judgments, train, part) = random_evaluation(&mut rng);
        let r = evaluate_all(&lists, &judgments, &train, &part)?;
        let unit = [
            ("ndcg", r.ndcg),
            ("precision", r.precision),
            ("recall", r.recall),
            ("diversity", r.diversity),
            ("coverage", r.coverage),
            ("personalization", r.personalization),
            ("serendipity", r.serendipity),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                failures.push(format!("evaluation {case}: {name} = {v} outside [0, 1]"));
            }
        }
        if r.novelty.is_nan() || r.novelty < 0.0 {
            failures.push(format!("evaluation {case}: novelty = {}", r.novelty));
        }
        if r.short_count + r.long_count != r.list_count * r.k
            || r.rel_short > r.short_count
            || r.rel_long > r.long_count
        {
            failures.push(format!("evaluation {case}: exposure counts inconsistent"));
        }
        let k = r.k as f64;
        if !(-k..=k).contains(&r.fairness_f) {
            failures.push(format!(
                "evaluation {case}: F = {} outside [-K, K]",
                r.fairness_f
            ));
        }
    }
    Ok(outcome("metric bounds", opts.evaluations, failures))
}

pub fn run_battery(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        oracle_equivalence(opts)?,
        lambda_zero_identity(opts)?,
        monotone_exposure(opts)?,
        metric_bounds(opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        let opts = VerifyOptions {
            instances: 40,
            evaluations: 20,
            ..VerifyOptions::default()
        };
        for check in run_battery(&opts).unwrap() {
            assert!(check.passed, "{}: {:?}", check.name, check.failures);
        }
    }

    #[test]
    fn inverted_tie_break_is_caught() {
        let opts = VerifyOptions {
            instances: 60,
            tie_break: TieBreak::LargerIndex,
            ..VerifyOptions::default()
        };
        let checks = run_battery(&opts).unwrap();
        assert!(
            !checks[0].passed,
            "equivalence check should notice the mutation"
        );
    }
}
