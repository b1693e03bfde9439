//! Seeded synthetic interaction logs with a Zipf popularity profile.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::InteractionRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfSpec {
    pub users: usize,
    pub items: usize,
    pub exponent: f64,
    /// Inclusive range of distinct items drawn per user.
    pub per_user: (usize, usize),
    /// Number of taste groups; users prefer items of their own group.
    pub groups: usize,
    /// Sampling weight multiplier for in-group items.
    pub affinity: f64,
    pub seed: u64,
}

impl Default for ZipfSpec {
    fn default() -> Self {
        ZipfSpec {
            users: 500,
            items: 400,
            exponent: 1.0,
            per_user: (15, 40),
            groups: 8,
            affinity: 8.0,
            seed: 7,
        }
    }
}

/// Item `j` has base weight `1 / (j + 1)^exponent`; user `u` belongs to
/// group `u % groups` and item `j` to group `j % groups`. Keys are `u{u}`
/// and `i{j}`, weights 1.
pub fn zipf_interactions(spec: &ZipfSpec) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.groups.max(1);
    let base: Vec<f64> = (0..spec.items)
        .map(|j| 1.0 / ((j + 1) as f64).powf(spec.exponent))
        .collect();
    let mut records = Vec::new();
    for u in 0..spec.users {
        let group = u % groups;
        let mut weights: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if j % groups == group {
                    w * spec.affinity
                } else {
                    w
                }
            })
            .collect();
        let (lo, hi) = spec.per_user;
        let count = rng.gen_range(lo..=hi).min(spec.items);
        for _ in 0..count {
            let dist = WeightedIndex::new(&weights).expect("positive weights remain");
            let j = dist.sample(&mut rng);
            weights[j] = 0.0;
            records.push(InteractionRecord {
                user_key: format!("u{u}"),
                item_key: format!("i{j}"),
                weight: 1.0,
                timestamp: None,
            });
        }
    }
    records
}

/// Tab-separated `user<TAB>item<TAB>weight` text for the records.
pub fn to_tsv(records: &[InteractionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\n", r.user_key, r.item_key, r.weight));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct_per_user() {
        let spec = ZipfSpec {
            users: 20,
            items: 50,
            ..ZipfSpec::default()
        };
        let a = zipf_interactions(&spec);
        assert_eq!(a, zipf_interactions(&spec));
        let mut pairs: Vec<_> = a.iter().map(|r| (&r.user_key, &r.item_key)).collect();
        let before = pairs.len();
        pairs.sort();
        pairs.dedup();
        assert_eq!(before, pairs.len());
    }

    #[test]
    fn head_items_dominate() {
        let recs = zipf_interactions(&ZipfSpec::default());
        let head = recs.iter().filter(|r| r.item_key == "i0").count();
        let tail = recs.iter().filter(|r| r.item_key == "i399").count();
        assert!(head > tail);
    }
}
