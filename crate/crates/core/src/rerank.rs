//! Provider-fairness metric and the λ-controlled top-K re-ranker.
//!
//! The objective `Z(X) = Σ R_ij X_ij − λ F(X)` with
//! `F = (1/m) Σ_i (Σ_j Y_j X_ij − Σ_j (1 − Y_j) X_ij)` is a sum of
//! per-cell terms, so under the per-user cardinality constraint it is
//! maximized by taking, for every user independently, the K items with the
//! largest adjusted score `S_ij = R_ij − (λ/m)(2 Y_j − 1)`.
//! [`rerank_oracle`] checks that reduction by exhaustive enumeration.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionMatrix, PopularityPartition};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, EvaluationReport, RelevanceJudgments};
use crate::scorers::ScoreMatrix;

/// Largest per-user subset count [`rerank_oracle`] will enumerate.
pub const ORACLE_LIMIT: u64 = 1_000_000;

/// Objective differences at or below this are ties in the oracle.
const ORACLE_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    pub k: usize,
    pub lambda: f64,
    pub lambda_grid: Option<Vec<f64>>,
    /// Apply λ per item instead of λ/m.
    pub per_user_lambda: bool,
    /// Restrict each user's candidates to their top-N items by original score.
    pub pool_size: Option<usize>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            k: 10,
            lambda: 0.0,
            lambda_grid: None,
            per_user_lambda: false,
            pool_size: None,
        }
    }
}

impl RerankConfig {
    pub fn with_lambda(k: usize, lambda: f64) -> Self {
        RerankConfig {
            k,
            lambda,
            ..RerankConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("rerank.k must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(
                "rerank.lambda must be a nonnegative number".into(),
            ));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(Error::Config("rerank.lambda_grid is empty".into()));
            }
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::Config(
                    "rerank.lambda_grid values must be nonnegative".into(),
                ));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "rerank.lambda_grid must be strictly ascending".into(),
                ));
            }
        }
        if self.pool_size == Some(0) {
            return Err(Error::Config("rerank.pool_size must be positive".into()));
        }
        Ok(())
    }

    /// Score shift applied to each selected item for `m` users.
    pub fn penalty(&self, m: usize) -> f64 {
        if self.per_user_lambda {
            self.lambda
        } else {
            self.lambda / m as f64
        }
    }

    /// Sweep grid with 0.0 prepended when missing.
    pub fn sweep_grid(&self) -> Vec<f64> {
        let mut grid = self
            .lambda_grid
            .clone()
            .unwrap_or_else(|| vec![self.lambda]);
        if !grid.contains(&0.0) {
            grid.insert(0, 0.0);
        }
        grid
    }
}

/// Per-user ordered top-K item selections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationLists {
    k: usize,
    n: usize,
    lists: Vec<Vec<usize>>,
}

impl RecommendationLists {
    pub fn new(k: usize, n: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        for (u, list) in lists.iter().enumerate() {
            if list.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "user {u} has {} items, expected {k}",
                    list.len()
                )));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::DimensionMismatch(format!(
                    "user {u} has a duplicate item"
                )));
            }
            if sorted.last().is_some_and(|&j| j >= n) {
                return Err(Error::DimensionMismatch(format!(
                    "user {u} has an item outside the catalog of {n}"
                )));
            }
        }
        Ok(RecommendationLists { k, n, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, u: usize) -> &[usize] {
        &self.lists[u]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.lists.iter().map(Vec::as_slice)
    }

    /// Selected items of user `u` as a sorted set.
    pub fn selected_set(&self, u: usize) -> Vec<usize> {
        let mut s = self.lists[u].clone();
        s.sort_unstable();
        s
    }

    /// The binary selection matrix X (row per user).
    pub fn selection_matrix(&self) -> Vec<Vec<bool>> {
        self.lists
            .iter()
            .map(|list| {
                let mut row = vec![false; self.n];
                for &j in list {
                    row[j] = true;
                }
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FairnessValue {
    pub f: f64,
    pub short_count: usize,
    pub long_count: usize,
}

/// Mean over users of short-head minus long-tail items in the list.
pub fn fairness_f(
    lists: &RecommendationLists,
    part: &PopularityPartition,
) -> Result<FairnessValue> {
    if lists.n() != part.n() {
        return Err(Error::DimensionMismatch(format!(
            "lists over {} items, partition over {}",
            lists.n(),
            part.n()
        )));
    }
    let short_count = lists
        .iter()
        .flat_map(|l| l.iter())
        .filter(|&&j| part.is_short(j))
        .count();
    let long_count = lists.m() * lists.k() - short_count;
    let f = if lists.m() == 0 {
        0.0
    } else {
        (short_count as f64 - long_count as f64) / lists.m() as f64
    };
    Ok(FairnessValue {
        f,
        short_count,
        long_count,
    })
}

/// `S_ij = R_ij − λ/m` for short-head items and `R_ij + λ/m` otherwise.
/// Masked cells stay masked; λ = 0 returns `R` unchanged.
pub fn adjusted_scores(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    lambda: f64,
    m: usize,
) -> ScoreMatrix {
    adjust(r, part, lambda / m as f64)
}

fn adjust(r: &ScoreMatrix, part: &PopularityPartition, penalty: f64) -> ScoreMatrix {
    let mut s = r.clone();
    if penalty == 0.0 {
        return s;
    }
    let n = r.n();
    for (idx, v) in s.values_mut().iter_mut().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if part.is_short(idx % n) {
            *v -= penalty;
        } else {
            *v += penalty;
        }
    }
    s
}

/// `Σ R_ij X_ij − penalty · Σ_i (short_i − long_i)`, evaluated from the
/// definition rather than from adjusted scores.
pub fn objective(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    lists: &RecommendationLists,
    penalty: f64,
) -> f64 {
    (0..lists.m())
        .map(|u| user_objective(r.row(u), part, lists.list(u), penalty))
        .sum()
}

fn user_objective(row: &[f64], part: &PopularityPartition, items: &[usize], penalty: f64) -> f64 {
    let mut score = 0.0;
    let mut balance = 0i64;
    for &j in items {
        score += row[j];
        balance += if part.is_short(j) { 1 } else { -1 };
    }
    score - penalty * balance as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub lists: RecommendationLists,
    /// Achieved objective Z(X).
    pub objective: f64,
}

/// Final tie-break between items equal on adjusted and original score.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    SmallerIndex,
    /// Mutation hook for checking that the verification battery notices a
    /// wrong tie-break.
    LargerIndex,
}

/// Selectable items of one user, optionally truncated to the top `pool`
/// by original score.
fn candidates(row: &[f64], pool: Option<usize>) -> Vec<usize> {
    let mut cands: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_finite()).collect();
    if let Some(p) = pool {
        if cands.len() > p {
            cands.sort_by(|&a, &b| by_score_desc(row, a, b));
            cands.truncate(p);
            cands.sort_unstable();
        }
    }
    cands
}

fn by_score_desc(row: &[f64], a: usize, b: usize) -> Ordering {
    row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

fn display_order(row: &[f64], items: &mut [usize]) {
    items.sort_by(|&a, &b| by_score_desc(row, a, b));
}

fn insufficient(u: usize, available: usize, k: usize) -> Error {
    Error::InsufficientCandidates {
        user: u.to_string(),
        available,
        k,
    }
}

/// Per-user top-K on adjusted scores, the exact optimum of the objective.
/// Ties go to the larger original score, then the smaller item index.
/// Lists are displayed in descending original-score order.
pub fn rerank_exact(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<Reranked> {
    rerank_exact_with(r, part, cfg, TieBreak::default())
}

#[doc(hidden)]
pub fn rerank_exact_with(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    cfg: &RerankConfig,
    tie: TieBreak,
) -> Result<Reranked> {
    cfg.validate()?;
    check_dims(r, part)?;
    let k = cfg.k;
    let penalty = cfg.penalty(r.m());
    let s = adjust(r, part, penalty);

    let lists = (0..r.m())
        .into_par_iter()
        .map(|u| {
            let row = r.row(u);
            let adj = s.row(u);
            let mut cands = candidates(row, cfg.pool_size);
            if cands.len() < k {
                return Err(insufficient(u, cands.len(), k));
            }
            let cmp = |&a: &usize, &b: &usize| {
                let primary = adj[b].total_cmp(&adj[a]).then(row[b].total_cmp(&row[a]));
                match tie {
                    TieBreak::SmallerIndex => primary.then(a.cmp(&b)),
                    TieBreak::LargerIndex => primary.then(b.cmp(&a)),
                }
            };
            if cands.len() > k {
                cands.select_nth_unstable_by(k - 1, cmp);
                cands.truncate(k);
            }
            display_order(row, &mut cands);
            Ok(cands)
        })
        .collect::<Result<Vec<_>>>()?;

    let lists = RecommendationLists::new(k, r.n(), lists)?;
    let objective = objective(r, part, &lists, penalty);
    Ok(Reranked { lists, objective })
}

/// Plain per-user top-K of the original scores (ties by smaller index).
pub fn top_k(r: &ScoreMatrix, k: usize) -> Result<RecommendationLists> {
    let lists = (0..r.m())
        .map(|u| {
            let row = r.row(u);
            let mut cands: Vec<usize> = (0..r.n()).filter(|&j| row[j].is_finite()).collect();
            if cands.len() < k {
                return Err(insufficient(u, cands.len(), k));
            }
            cands.sort_by(|&a, &b| by_score_desc(row, a, b));
            cands.truncate(k);
            Ok(cands)
        })
        .collect::<Result<Vec<_>>>()?;
    RecommendationLists::new(k, r.n(), lists)
}

fn check_dims(r: &ScoreMatrix, part: &PopularityPartition) -> Result<()> {
    if r.n() != part.n() {
        return Err(Error::DimensionMismatch(format!(
            "scores over {} items, partition over {}",
            r.n(),
            part.n()
        )));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Advance `idx` to the next K-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive reference solver. For each user it enumerates every K-subset
/// of the selectable items and keeps the one with the largest contribution
/// to the objective; ties go to the larger summed original score, then the
/// lexicographically smallest index set.
pub fn rerank_oracle(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<Reranked> {
    cfg.validate()?;
    check_dims(r, part)?;
    let k = cfg.k;
    let penalty = cfg.penalty(r.m());

    let mut lists = Vec::with_capacity(r.m());
    for u in 0..r.m() {
        let row = r.row(u);
        let cands = candidates(row, cfg.pool_size);
        if cands.len() < k {
            return Err(insufficient(u, cands.len(), k));
        }
        if binomial(cands.len(), k) > ORACLE_LIMIT {
            return Err(Error::InstanceTooLarge {
                n: cands.len(),
                k,
                limit: ORACLE_LIMIT,
            });
        }

        let mut idx: Vec<usize> = (0..k).collect();
        let mut subset = vec![0usize; k];
        let mut best: Option<(f64, f64, Vec<usize>)> = None;
        loop {
            for (slot, &p) in subset.iter_mut().zip(&idx) {
                *slot = cands[p];
            }
            let z = user_objective(row, part, &subset, penalty);
            let rsum: f64 = subset.iter().map(|&j| row[j]).sum();
            let better = match &best {
                None => true,
                Some((bz, br, _)) => {
                    z > bz + ORACLE_TIE_TOL
                        || ((z - bz).abs() <= ORACLE_TIE_TOL && rsum > br + ORACLE_TIE_TOL)
                }
            };
            if better {
                best = Some((z, rsum, subset.clone()));
            }
            if !next_combination(&mut idx, cands.len()) {
                break;
            }
        }
        let (_, _, mut chosen) = best.expect("at least one subset");
        display_order(row, &mut chosen);
        lists.push(chosen);
    }

    let lists = RecommendationLists::new(k, r.n(), lists)?;
    let objective = objective(r, part, &lists, penalty);
    Ok(Reranked { lists, objective })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda: f64,
    pub reranked: Reranked,
    pub report: EvaluationReport,
}

/// Re-rank and evaluate at every grid point; λ = 0 (the fairness-unaware
/// row) is prepended when the grid lacks it.
pub fn lambda_sweep(
    r: &ScoreMatrix,
    part: &PopularityPartition,
    cfg: &RerankConfig,
    judgments: &RelevanceJudgments,
    train: &InteractionMatrix,
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    cfg.sweep_grid()
        .into_iter()
        .map(|lambda| {
            let point_cfg = RerankConfig {
                lambda,
                lambda_grid: None,
                ..cfg.clone()
            };
            let reranked = rerank_exact(r, part, &point_cfg)?;
            let report = evaluate_all(&reranked.lists, judgments, train, part)?;
            Ok(SweepPoint {
                lambda,
                reranked,
                report,
            })
        })
        .collect()
}
