//! Interaction ingestion, dense indexing, per-user splitting and the
//! short-head / long-tail popularity partition.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when flooring products of ratios and counts, so that e.g.
/// `0.1 * 30` lands on 3 rather than 2.
const FLOOR_EPS: f64 = 1e-9;

pub(crate) fn floor_count(ratio: f64, count: usize) -> usize {
    (ratio * count as f64 + FLOOR_EPS).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_key: String,
    pub item_key: String,
    pub weight: f64,
    pub timestamp: Option<i64>,
}

/// Column layout of a delimiter-separated interaction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Format {
    pub delimiter: u8,
    pub has_header: bool,
    pub user_col: usize,
    pub item_col: usize,
    pub weight_col: Option<usize>,
    pub timestamp_col: Option<usize>,
}

impl Default for Format {
    fn default() -> Self {
        Format {
            delimiter: b'\t',
            has_header: false,
            user_col: 0,
            item_col: 1,
            weight_col: Some(2),
            timestamp_col: Some(3),
        }
    }
}

impl Format {
    pub fn with_delimiter(delimiter: u8) -> Self {
        Format {
            delimiter,
            ..Format::default()
        }
    }
}

/// Parse delimiter-separated interaction lines. Missing or empty weight
/// columns default to 1.0.
pub fn parse_interactions<R: Read>(source: R, format: &Format) -> Result<Vec<InteractionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut row).map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |col: usize, name: &str| -> Result<&str> {
            match row.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("missing {name} column {col}"),
                }),
            }
        };
        let user_key = field(format.user_col, "user")?.to_owned();
        let item_key = field(format.item_col, "item")?.to_owned();

        let weight = match format.weight_col.and_then(|c| row.get(c)) {
            None | Some("") => 1.0,
            Some(raw) => raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("weight {raw:?} is not a number"),
            })?,
        };
        if !weight.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("weight {weight} is not finite"),
            });
        }
        if weight < 0.0 {
            return Err(Error::NegativeWeight { line, weight });
        }

        let timestamp = match format.timestamp_col.and_then(|c| row.get(c)) {
            None | Some("") => None,
            Some(raw) => Some(raw.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("timestamp {raw:?} is not an integer"),
            })?),
        };

        records.push(InteractionRecord {
            user_key,
            item_key,
            weight,
            timestamp,
        });
    }
    Ok(records)
}

/// Bijection between opaque string keys and dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyIndex {
    keys: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl KeyIndex {
    pub fn insert(&mut self, key: &str) -> usize {
        if let Some(&idx) = self.lookup.get(key) {
            return idx;
        }
        let idx = self.keys.len();
        self.keys.push(key.to_owned());
        self.lookup.insert(key.to_owned(), idx);
        idx
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn key(&self, idx: usize) -> &str {
        &self.keys[idx]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub weight: f64,
}

/// How repeated (user, item) records are merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Sum,
    Last,
}

impl Aggregation {
    fn merge(self, current: f64, incoming: f64) -> f64 {
        match self {
            Aggregation::Max => current.max(incoming),
            Aggregation::Sum => current + incoming,
            Aggregation::Last => incoming,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: KeyIndex,
    pub items: KeyIndex,
    /// Unique (user, item) pairs in first-appearance order.
    pub interactions: Vec<Interaction>,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.users.len()
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }
}

/// Index users and items in first-appearance order and merge duplicate pairs.
pub fn build_dataset(records: &[InteractionRecord], dedup: Aggregation) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut users = KeyIndex::default();
    let mut items = KeyIndex::default();
    let mut interactions: Vec<Interaction> = Vec::new();
    let mut position: HashMap<(usize, usize), usize> = HashMap::new();

    for rec in records {
        let user = users.insert(&rec.user_key);
        let item = items.insert(&rec.item_key);
        match position.get(&(user, item)) {
            Some(&pos) => {
                let slot = &mut interactions[pos];
                slot.weight = dedup.merge(slot.weight, rec.weight);
            }
            None => {
                position.insert((user, item), interactions.len());
                interactions.push(Interaction {
                    user,
                    item,
                    weight: rec.weight,
                });
            }
        }
    }
    Ok(Dataset {
        users,
        items,
        interactions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub seed: u64,
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(ratios.to_vec()));
    }
    Ok(())
}

/// Per-user seeded random split. Validation and test sizes are floored,
/// train takes the remainder; users with fewer than 3 interactions stay
/// entirely in train. Each output set is sorted by (user, item).
pub fn split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitTriple> {
    validate_ratios(ratios)?;

    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); ds.m()];
    for it in &ds.interactions {
        per_user[it.user].push(*it);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitTriple {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for mut group in per_user {
        let c = group.len();
        if c < 3 {
            out.train.extend(group);
            continue;
        }
        group.shuffle(&mut rng);
        let n_valid = floor_count(ratios[1], c);
        let n_test = floor_count(ratios[2], c);
        let n_train = c - n_valid - n_test;
        out.train.extend_from_slice(&group[..n_train]);
        out.valid
            .extend_from_slice(&group[n_train..n_train + n_valid]);
        out.test.extend_from_slice(&group[n_train + n_valid..]);
    }
    for set in [&mut out.train, &mut out.valid, &mut out.test] {
        set.sort_by_key(|it| (it.user, it.item));
    }
    Ok(out)
}

/// Compressed user-major and item-major views of an interaction set.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    m: usize,
    n: usize,
    user_ptr: Vec<usize>,
    user_items: Vec<usize>,
    user_weights: Vec<f64>,
    item_ptr: Vec<usize>,
    item_users: Vec<usize>,
    item_weights: Vec<f64>,
}

impl InteractionMatrix {
    pub fn new(m: usize, n: usize, interactions: &[Interaction]) -> Result<Self> {
        let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(interactions.len());
        for it in interactions {
            if it.user >= m || it.item >= n {
                return Err(Error::DimensionMismatch(format!(
                    "interaction ({}, {}) outside {m}x{n}",
                    it.user, it.item
                )));
            }
            cells.push((it.user, it.item, it.weight));
        }
        cells.sort_by_key(|c| (c.0, c.1));
        cells.dedup_by(|next, kept| {
            if (next.0, next.1) == (kept.0, kept.1) {
                kept.2 = kept.2.max(next.2);
                true
            } else {
                false
            }
        });

        let mut user_ptr = vec![0; m + 1];
        for &(u, _, _) in &cells {
            user_ptr[u + 1] += 1;
        }
        for u in 0..m {
            user_ptr[u + 1] += user_ptr[u];
        }
        let user_items = cells.iter().map(|c| c.1).collect();
        let user_weights = cells.iter().map(|c| c.2).collect();

        let mut by_item = cells.clone();
        by_item.sort_by_key(|c| (c.1, c.0));
        let mut item_ptr = vec![0; n + 1];
        for &(_, i, _) in &by_item {
            item_ptr[i + 1] += 1;
        }
        for i in 0..n {
            item_ptr[i + 1] += item_ptr[i];
        }
        let item_users = by_item.iter().map(|c| c.0).collect();
        let item_weights = by_item.iter().map(|c| c.2).collect();

        Ok(InteractionMatrix {
            m,
            n,
            user_ptr,
            user_items,
            user_weights,
            item_ptr,
            item_users,
            item_weights,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.user_items.len()
    }

    /// Items of user `u`, ascending.
    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    pub fn user_weights(&self, u: usize) -> &[f64] {
        &self.user_weights[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    /// Users of item `i`, ascending.
    pub fn item_users(&self, i: usize) -> &[usize] {
        &self.item_users[self.item_ptr[i]..self.item_ptr[i + 1]]
    }

    pub fn item_weights(&self, i: usize) -> &[f64] {
        &self.item_weights[self.item_ptr[i]..self.item_ptr[i + 1]]
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// Distinct users per item.
    pub fn popularity_counts(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.item_users(i).len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopularityPartition {
    /// `short_head[j]` is true for popular items.
    pub short_head: Vec<bool>,
    /// Distinct training users per item.
    pub popularity_count: Vec<usize>,
}

impl PopularityPartition {
    pub fn n(&self) -> usize {
        self.short_head.len()
    }

    pub fn is_short(&self, item: usize) -> bool {
        self.short_head[item]
    }

    pub fn short_len(&self) -> usize {
        self.short_head.iter().filter(|&&s| s).count()
    }

    pub fn group_label(&self, item: usize) -> &'static str {
        if self.short_head[item] {
            "short"
        } else {
            "long"
        }
    }
}

/// Items ordered by popularity descending, ties by index ascending.
pub fn popularity_order(popularity_count: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..popularity_count.len()).collect();
    order.sort_by(|&a, &b| {
        popularity_count[b]
            .cmp(&popularity_count[a])
            .then(a.cmp(&b))
    });
    order
}

/// Number of short-head items for a catalog of `n` items.
pub fn short_head_size(n: usize, ratio: f64) -> usize {
    floor_count(ratio, n)
}

/// Mark the top `floor(ratio * n)` items by distinct training users as short-head.
pub fn partition_popularity(
    train: &[Interaction],
    n: usize,
    ratio: f64,
) -> Result<PopularityPartition> {
    if n == 0 {
        return Err(Error::EmptyCatalog);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidPartitionRatio(ratio));
    }
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(train.len());
    for it in train {
        if it.item >= n {
            return Err(Error::DimensionMismatch(format!(
                "item {} outside catalog of {n}",
                it.item
            )));
        }
        pairs.push((it.item, it.user));
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut popularity_count = vec![0usize; n];
    for (item, _) in pairs {
        popularity_count[item] += 1;
    }

    let mut short_head = vec![false; n];
    for &item in popularity_order(&popularity_count)
        .iter()
        .take(short_head_size(n, ratio))
    {
        short_head[item] = true;
    }
    Ok(PopularityPartition {
        short_head,
        popularity_count,
    })
}

/// Write interactions as `user_key<D>item_key<D>weight` lines with original keys.
pub fn write_interactions<W: Write>(
    mut out: W,
    ds: &Dataset,
    set: &[Interaction],
    delimiter: char,
) -> Result<()> {
    for it in set {
        writeln!(
            out,
            "{}{d}{}{d}{}",
            ds.users.key(it.user),
            ds.items.key(it.item),
            it.weight,
            d = delimiter
        )?;
    }
    Ok(())
}

/// Write `item_key<TAB>popularity_count<TAB>{short|long}` for every item.
pub fn write_partition<W: Write>(
    mut out: W,
    ds: &Dataset,
    part: &PopularityPartition,
) -> Result<()> {
    for item in 0..part.n() {
        writeln!(
            out,
            "{}\t{}\t{}",
            ds.items.key(item),
            part.popularity_count[item],
            part.group_label(item)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, w: f64) -> InteractionRecord {
        InteractionRecord {
            user_key: u.into(),
            item_key: i.into(),
            weight: w,
            timestamp: None,
        }
    }

    #[test]
    fn parses_tab_line() {
        let recs = parse_interactions("u1\ti9\t3.0".as_bytes(), &Format::default()).unwrap();
        assert_eq!(recs, vec![rec("u1", "i9", 3.0)]);
    }

    #[test]
    fn comma_line_defaults_weight() {
        let recs = parse_interactions("u1,i9\n".as_bytes(), &Format::with_delimiter(b',')).unwrap();
        assert_eq!(recs, vec![rec("u1", "i9", 1.0)]);
    }

    #[test]
    fn negative_weight_reports_line() {
        let err = parse_interactions("u1\ti9\t-2".as_bytes(), &Format::default()).unwrap_err();
        assert!(
            matches!(err, Error::NegativeWeight { line: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "u1\ti1\t1\nu2\n";
        match parse_interactions(src.as_bytes(), &Format::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let src = "u1\ti1\tabc\n";
        assert!(matches!(
            parse_interactions(src.as_bytes(), &Format::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn header_and_timestamp() {
        let fmt = Format {
            has_header: true,
            ..Format::with_delimiter(b',')
        };
        let recs = parse_interactions("user,item,w,ts\na,b,2,1700\n".as_bytes(), &fmt).unwrap();
        assert_eq!(recs[0].timestamp, Some(1700));
        assert_eq!(recs[0].weight, 2.0);
    }

    #[test]
    fn counts_users_and_items() {
        let ds = build_dataset(
            &[rec("u1", "i1", 1.0), rec("u2", "i1", 1.0)],
            Aggregation::Max,
        )
        .unwrap();
        assert_eq!((ds.m(), ds.n()), (2, 1));
    }

    #[test]
    fn duplicates_keep_max() {
        let ds = build_dataset(
            &[rec("u1", "i1", 2.0), rec("u1", "i1", 5.0)],
            Aggregation::Max,
        )
        .unwrap();
        assert_eq!(
            ds.interactions,
            vec![Interaction {
                user: 0,
                item: 0,
                weight: 5.0
            }]
        );
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(
            build_dataset(&[], Aggregation::Max),
            Err(Error::EmptyDataset)
        ));
    }

    fn single_user(c: usize) -> Dataset {
        let recs: Vec<_> = (0..c).map(|i| rec("u", &format!("i{i}"), 1.0)).collect();
        build_dataset(&recs, Aggregation::Max).unwrap()
    }

    #[test]
    fn split_counts() {
        let s = split(&single_user(10), [0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (7, 1, 2));
        let s = split(&single_user(2), [0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (2, 0, 0));
        let s = split(&single_user(30), [0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (21, 3, 6));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = single_user(40);
        assert_eq!(
            split(&ds, [0.7, 0.1, 0.2], 9).unwrap(),
            split(&ds, [0.7, 0.1, 0.2], 9).unwrap()
        );
    }

    #[test]
    fn bad_ratios_rejected() {
        let ds = single_user(4);
        assert!(split(&ds, [0.7, 0.2, 0.2], 0).is_err());
        assert!(split(&ds, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn table_one_partition_sizes() {
        for (n, expected) in [(2060, 412), (1019, 203), (1189, 237), (1507, 301)] {
            assert_eq!(short_head_size(n, 0.2), expected, "n = {n}");
        }
    }

    #[test]
    fn partition_ranks_by_distinct_users_with_index_ties() {
        // item 2: 3 users, items 0 and 1: 1 user each, item 3..: none
        let train: Vec<Interaction> = [(0, 2), (1, 2), (2, 2), (0, 1), (3, 0)]
            .iter()
            .map(|&(u, i)| Interaction {
                user: u,
                item: i,
                weight: 1.0,
            })
            .collect();
        let part = partition_popularity(&train, 10, 0.2).unwrap();
        assert_eq!(part.popularity_count[..4], [1, 1, 3, 0]);
        let short: Vec<usize> = (0..10).filter(|&j| part.is_short(j)).collect();
        assert_eq!(short, vec![0, 2]);
    }

    #[test]
    fn partition_rejects_empty_catalog() {
        assert!(matches!(
            partition_popularity(&[], 0, 0.2),
            Err(Error::EmptyCatalog)
        ));
        assert!(partition_popularity(&[], 5, 1.0).is_err());
    }
}
