//! Accuracy, beyond-accuracy and item-exposure metrics over top-K lists.
//!
//! Relevance is binary: a user's test-split items. Users without test items
//! are skipped for precision, recall and NDCG but count everywhere else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{popularity_order, Interaction, InteractionMatrix, PopularityPartition};
use crate::error::{Error, Result};
use crate::rerank::{fairness_f, RecommendationLists};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgments {
    per_user: Vec<Vec<usize>>,
}

impl RelevanceJudgments {
    pub fn from_interactions(m: usize, test: &[Interaction]) -> Self {
        let mut per_user = vec![Vec::new(); m];
        for it in test {
            per_user[it.user].push(it.item);
        }
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        RelevanceJudgments { per_user }
    }

    pub fn from_sets(per_user: Vec<Vec<usize>>) -> Self {
        let per_user = per_user
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        RelevanceJudgments { per_user }
    }

    pub fn m(&self) -> usize {
        self.per_user.len()
    }

    pub fn items(&self, u: usize) -> &[usize] {
        &self.per_user[u]
    }

    pub fn is_relevant(&self, u: usize, item: usize) -> bool {
        self.per_user[u].binary_search(&item).is_ok()
    }

    /// Users with at least one relevant item.
    pub fn judged_users(&self) -> usize {
        self.per_user.iter().filter(|s| !s.is_empty()).count()
    }
}

fn check_users(lists: &RecommendationLists, judgments: &RelevanceJudgments) -> Result<()> {
    if lists.m() != judgments.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} lists but judgments for {} users",
            lists.m(),
            judgments.m()
        )));
    }
    Ok(())
}

fn hits(list: &[usize], judgments: &RelevanceJudgments, u: usize, k: usize) -> usize {
    list.iter()
        .take(k)
        .filter(|&&j| judgments.is_relevant(u, j))
        .count()
}

/// Mean precision@K and recall@K over users with judgments.
pub fn precision_recall_at_k(
    lists: &RecommendationLists,
    judgments: &RelevanceJudgments,
    k: usize,
) -> Result<(f64, f64)> {
    check_users(lists, judgments)?;
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut users = 0usize;
    for u in 0..lists.m() {
        let relevant = judgments.items(u).len();
        if relevant == 0 {
            continue;
        }
        let h = hits(lists.list(u), judgments, u, k) as f64;
        precision += h / k as f64;
        recall += h / relevant as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::NoJudgments);
    }
    Ok((precision / users as f64, recall / users as f64))
}

/// Binary-relevance NDCG@K with `1 / log2(rank + 1)` discounts and an ideal
/// DCG truncated at `min(K, |relevant|)`.
pub fn ndcg_at_k(
    lists: &RecommendationLists,
    judgments: &RelevanceJudgments,
    k: usize,
) -> Result<f64> {
    check_users(lists, judgments)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut total = 0.0;
    let mut users = 0usize;
    for u in 0..lists.m() {
        let relevant = judgments.items(u).len();
        if relevant == 0 {
            continue;
        }
        let dcg: f64 = lists
            .list(u)
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, &j)| judgments.is_relevant(u, j))
            .map(|(r, _)| discount(r + 1))
            .sum();
        let idcg: f64 = (1..=k.min(relevant)).map(discount).sum();
        total += dcg / idcg;
        users += 1;
    }
    if users == 0 {
        return Err(Error::NoJudgments);
    }
    Ok(total / users as f64)
}

/// Mean self-information `−log2(max(pop_j, 1) / m)` over all recommended slots.
pub fn novelty(lists: &RecommendationLists, popularity_count: &[usize], m: usize) -> f64 {
    let slots = lists.m() * lists.k();
    if slots == 0 || m == 0 {
        return 0.0;
    }
    let bits: f64 = lists
        .iter()
        .flat_map(|l| l.iter())
        .map(|&j| -(popularity_count[j].max(1) as f64 / m as f64).log2())
        .sum();
    bits / slots as f64
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Cosine similarity of two items' binary training-user vectors.
pub fn item_cosine(train: &InteractionMatrix, a: usize, b: usize) -> f64 {
    let ua = train.item_users(a);
    let ub = train.item_users(b);
    if ua.is_empty() || ub.is_empty() {
        return 0.0;
    }
    sorted_intersection(ua, ub) as f64 / ((ua.len() * ub.len()) as f64).sqrt()
}

/// Mean over users of one minus the mean pairwise item cosine in the list.
pub fn diversity(lists: &RecommendationLists, train: &InteractionMatrix) -> Result<f64> {
    let k = lists.k();
    if k < 2 {
        return Err(Error::ListTooShort(k));
    }
    if lists.m() == 0 {
        return Ok(0.0);
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let per_user: Vec<f64> = (0..lists.m())
        .into_par_iter()
        .map(|u| {
            let list = lists.list(u);
            let mut sim = 0.0;
            for a in 0..k {
                for b in a + 1..k {
                    sim += item_cosine(train, list[a], list[b]);
                }
            }
            1.0 - sim / pairs
        })
        .collect();
    Ok(per_user.iter().sum::<f64>() / lists.m() as f64)
}

/// Fraction of the catalog appearing in at least one list.
pub fn coverage(lists: &RecommendationLists, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen = vec![false; n];
    for list in lists.iter() {
        for &j in list {
            seen[j] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / n as f64
}

/// One minus the mean list overlap `|L_u ∩ L_v| / K` over all user pairs.
///
/// Computed exactly for any m: the summed pairwise overlap equals
/// `Σ_j C(c_j, 2)` where `c_j` counts the lists containing item j.
pub fn personalization(lists: &RecommendationLists) -> Result<f64> {
    let m = lists.m();
    if m < 2 {
        return Err(Error::TooFewUsers(m));
    }
    let mut containing = vec![0u64; lists.n()];
    for list in lists.iter() {
        for &j in list {
            containing[j] += 1;
        }
    }
    let shared: u64 = containing
        .iter()
        .map(|&c| c * c.saturating_sub(1) / 2)
        .sum();
    let pairs = (m as u64 * (m as u64 - 1) / 2) as f64;
    Ok(1.0 - shared as f64 / pairs / lists.k() as f64)
}

/// [`personalization`] estimated from `pairs` seeded random user pairs.
pub fn personalization_sampled(
    lists: &RecommendationLists,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let m = lists.m();
    if m < 2 {
        return Err(Error::TooFewUsers(m));
    }
    if pairs == 0 {
        return Err(Error::Config(
            "personalization sample needs at least one pair".into(),
        ));
    }
    let sets: Vec<Vec<usize>> = (0..m).map(|u| lists.selected_set(u)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlap = 0.0;
    for _ in 0..pairs {
        let u = rng.gen_range(0..m);
        let mut v = rng.gen_range(0..m - 1);
        if v >= u {
            v += 1;
        }
        overlap += sorted_intersection(&sets[u], &sets[v]) as f64 / lists.k() as f64;
    }
    Ok(1.0 - overlap / pairs as f64)
}

/// Mean fraction of each list absent from the global top-K most popular
/// training items.
pub fn serendipity(lists: &RecommendationLists, popularity_count: &[usize], k: usize) -> f64 {
    if lists.m() == 0 || k == 0 {
        return 0.0;
    }
    let mut primitive = vec![false; popularity_count.len()];
    for &j in popularity_order(popularity_count).iter().take(k) {
        primitive[j] = true;
    }
    let total: f64 = lists
        .iter()
        .map(|l| {
            let list = &l[..k.min(l.len())];
            list.iter().filter(|&&j| !primitive[j]).count() as f64 / list.len() as f64
        })
        .sum();
    total / lists.m() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exposure {
    pub short_count: usize,
    pub rel_short: usize,
    pub long_count: usize,
    pub rel_long: usize,
}

/// Recommended slots by popularity group, with relevant-hit subcounts.
pub fn exposure_counts(
    lists: &RecommendationLists,
    judgments: &RelevanceJudgments,
    part: &PopularityPartition,
) -> Result<Exposure> {
    check_users(lists, judgments)?;
    let mut e = Exposure {
        short_count: 0,
        rel_short: 0,
        long_count: 0,
        rel_long: 0,
    };
    for u in 0..lists.m() {
        for &j in lists.list(u) {
            let relevant = judgments.is_relevant(u, j);
            if part.is_short(j) {
                e.short_count += 1;
                e.rel_short += relevant as usize;
            } else {
                e.long_count += 1;
                e.rel_long += relevant as usize;
            }
        }
    }
    Ok(e)
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
    pub novelty: f64,
    pub diversity: f64,
    pub coverage: f64,
    pub personalization: f64,
    pub serendipity: f64,
    pub short_count: usize,
    pub rel_short: usize,
    pub long_count: usize,
    pub rel_long: usize,
    pub fairness_f: f64,
    pub k: usize,
    /// Users with judgments, over which accuracy is averaged.
    pub evaluated_users: usize,
    pub list_count: usize,
}

pub fn evaluate_all(
    lists: &RecommendationLists,
    judgments: &RelevanceJudgments,
    train: &InteractionMatrix,
    part: &PopularityPartition,
) -> Result<EvaluationReport> {
    let k = lists.k();
    if train.n() != lists.n() || part.n() != lists.n() {
        return Err(Error::DimensionMismatch(format!(
            "lists over {} items, train over {}, partition over {}",
            lists.n(),
            train.n(),
            part.n()
        )));
    }
    let (precision, recall) = precision_recall_at_k(lists, judgments, k)?;
    let ndcg = ndcg_at_k(lists, judgments, k)?;
    let popularity = train.popularity_counts();
    let exposure = exposure_counts(lists, judgments, part)?;
    let fairness = fairness_f(lists, part)?;
    Ok(EvaluationReport {
        ndcg,
        precision,
        recall,
        novelty: novelty(lists, &popularity, train.m()),
        diversity: diversity(lists, train)?,
        coverage: coverage(lists, lists.n()),
        personalization: personalization(lists)?,
        serendipity: serendipity(lists, &popularity, k),
        short_count: exposure.short_count,
        rel_short: exposure.rel_short,
        long_count: exposure.long_count,
        rel_long: exposure.rel_long,
        fairness_f: fairness.f,
        k,
        evaluated_users: judgments.judged_users(),
        list_count: lists.m(),
    })
}
