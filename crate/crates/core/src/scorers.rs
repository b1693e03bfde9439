//! Score matrices for the re-ranker: popularity, implicit-feedback matrix
//! factorization, a random null model, and import of external scores.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};

/// Cell value meaning "never select".
pub const MASKED: f64 = f64::NEG_INFINITY;

/// Dense row-major m×n score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    m: usize,
    n: usize,
    values: Vec<f64>,
    /// Whether train-seen cells were replaced by [`MASKED`].
    pub masked_seen: bool,
}

impl ScoreMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged score rows".into()));
        }
        Ok(ScoreMatrix {
            m,
            n,
            values: rows.into_iter().flatten().collect(),
            masked_seen: false,
        })
    }

    pub fn from_vec(m: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {m}x{n} matrix",
                values.len()
            )));
        }
        Ok(ScoreMatrix {
            m,
            n,
            values,
            masked_seen: false,
        })
    }

    pub fn filled(m: usize, n: usize, value: f64) -> Self {
        ScoreMatrix {
            m,
            n,
            values: vec![value; m * n],
            masked_seen: false,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: usize, i: usize) -> f64 {
        self.values[u * self.n + i]
    }

    pub fn set(&mut self, u: usize, i: usize, v: f64) {
        self.values[u * self.n + i] = v;
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.values[u * self.n..(u + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_masked(&self, u: usize, i: usize) -> bool {
        self.get(u, i) == MASKED
    }

    /// Smallest and largest unmasked entries.
    pub fn finite_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// `R_ij = popularity(j) / m` for every user.
pub fn popularity_scorer(train: &InteractionMatrix) -> Result<ScoreMatrix> {
    let (m, n) = (train.m(), train.n());
    if n == 0 {
        return Err(Error::EmptyCatalog);
    }
    let row: Vec<f64> = train
        .popularity_counts()
        .into_iter()
        .map(|c| if m == 0 { 0.0 } else { c as f64 / m as f64 })
        .collect();
    let mut values = Vec::with_capacity(m * n);
    for _ in 0..m {
        values.extend_from_slice(&row);
    }
    ScoreMatrix::from_vec(m, n, values)
}

/// i.i.d. uniform [0, 1) scores from a seeded generator.
pub fn random_scorer(m: usize, n: usize, seed: u64) -> Result<ScoreMatrix> {
    if n == 0 {
        return Err(Error::EmptyCatalog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..m * n).map(|_| rng.gen::<f64>()).collect();
    ScoreMatrix::from_vec(m, n, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfConfig {
    pub dim: usize,
    pub reg: f64,
    pub iters: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 32,
            reg: 0.05,
            iters: 20,
            alpha: 40.0,
            seed: 0,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("mf.dim must be positive".into()));
        }
        if !(self.reg.is_finite() && self.reg > 0.0) {
            return Err(Error::Config("mf.reg must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("mf.alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted matrix factorization for implicit feedback, trained by
/// alternating least squares with confidence `1 + alpha * w` on observed
/// cells and binary preference `w > 0`.
#[derive(Debug, Clone)]
pub struct WmfModel {
    pub user_factors: DMatrix<f64>,
    pub item_factors: DMatrix<f64>,
    /// Objective after initialization, then after every full iteration.
    pub objective_history: Vec<f64>,
}

impl WmfModel {
    pub fn fit(train: &InteractionMatrix, cfg: &MfConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, n, k) = (train.m(), train.n(), cfg.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (k as f64).sqrt();
        let mut user_factors = DMatrix::from_fn(m, k, |_, _| rng.gen::<f64>() * scale);
        let mut item_factors = DMatrix::from_fn(n, k, |_, _| rng.gen::<f64>() * scale);

        let mut objective_history = vec![objective(train, &user_factors, &item_factors, cfg)];
        for iteration in 1..=cfg.iters {
            user_factors = half_step(&item_factors, m, cfg, |u| {
                (train.user_items(u), train.user_weights(u))
            })
            .ok_or(Error::NonFinite { iteration })?;
            item_factors = half_step(&user_factors, n, cfg, |i| {
                (train.item_users(i), train.item_weights(i))
            })
            .ok_or(Error::NonFinite { iteration })?;
            let loss = objective(train, &user_factors, &item_factors, cfg);
            if !loss.is_finite() {
                return Err(Error::NonFinite { iteration });
            }
            objective_history.push(loss);
        }
        Ok(WmfModel {
            user_factors,
            item_factors,
            objective_history,
        })
    }

    pub fn scores(&self) -> ScoreMatrix {
        let product = &self.user_factors * self.item_factors.transpose();
        let (m, n) = product.shape();
        let mut values = Vec::with_capacity(m * n);
        for u in 0..m {
            values.extend(product.row(u).iter().copied());
        }
        ScoreMatrix {
            m,
            n,
            values,
            masked_seen: false,
        }
    }
}

pub fn mf_scorer(train: &InteractionMatrix, cfg: &MfConfig) -> Result<ScoreMatrix> {
    Ok(WmfModel::fit(train, cfg)?.scores())
}

/// Solve every row of one factor block exactly against the fixed `other`
/// block. Returns `None` on a non-finite solution.
fn half_step<'a, F>(
    other: &DMatrix<f64>,
    rows: usize,
    cfg: &MfConfig,
    nbrs: F,
) -> Option<DMatrix<f64>>
where
    F: Fn(usize) -> (&'a [usize], &'a [f64]) + Sync,
{
    let k = other.ncols();
    let gram = other.transpose() * other;
    let solved: Vec<Option<Vec<f64>>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let (cols, weights) = nbrs(r);
            let mut a = gram.clone();
            for d in 0..k {
                a[(d, d)] += cfg.reg;
            }
            let mut b = DVector::<f64>::zeros(k);
            for (&c, &w) in cols.iter().zip(weights) {
                if w <= 0.0 {
                    continue;
                }
                let y = other.row(c).transpose();
                let conf = 1.0 + cfg.alpha * w;
                a.ger(conf - 1.0, &y, &y, 1.0);
                b.axpy(conf, &y, 1.0);
            }
            let x = a.cholesky()?.solve(&b);
            x.iter()
                .all(|v| v.is_finite())
                .then(|| x.iter().copied().collect())
        })
        .collect();

    let mut out = DMatrix::zeros(rows, k);
    for (r, row) in solved.into_iter().enumerate() {
        let row = row?;
        for (d, v) in row.into_iter().enumerate() {
            out[(r, d)] = v;
        }
    }
    Some(out)
}

/// Weighted regularized squared loss over all m×n cells.
pub fn objective(
    train: &InteractionMatrix,
    users: &DMatrix<f64>,
    items: &DMatrix<f64>,
    cfg: &MfConfig,
) -> f64 {
    let gram = items.transpose() * items;
    let mut loss = 0.0;
    for u in 0..train.m() {
        let x = users.row(u).transpose();
        loss += (x.transpose() * &gram * &x)[(0, 0)];
        for (&i, &w) in train.user_items(u).iter().zip(train.user_weights(u)) {
            if w <= 0.0 {
                continue;
            }
            let pred = users.row(u).dot(&items.row(i));
            let conf = 1.0 + cfg.alpha * w;
            loss += conf * (1.0 - pred).powi(2) - pred * pred;
        }
    }
    loss + cfg.reg * (users.norm_squared() + items.norm_squared())
}

/// Value used for cells absent from an imported score file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Value(f64),
    Sentinel,
}

impl Default for Fill {
    fn default() -> Self {
        Fill::Value(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedScores {
    pub matrix: ScoreMatrix,
    pub provided: usize,
    /// Fraction of the m×n cells present in the file.
    pub coverage: f64,
}

/// Read `user_key<D>item_key<D>score` triples. Later duplicates overwrite
/// earlier ones.
pub fn load_scores<R: Read>(
    source: R,
    ds: &Dataset,
    delimiter: u8,
    fill: Fill,
) -> Result<LoadedScores> {
    let (m, n) = (ds.m(), ds.n());
    let fill_value = match fill {
        Fill::Value(v) => v,
        Fill::Sentinel => MASKED,
    };
    let mut matrix = ScoreMatrix::filled(m, n, fill_value);
    let mut seen = vec![false; m * n];
    let mut provided = 0usize;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(source);
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
        if row.len() < 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 columns, found {}", row.len()),
            });
        }
        let u = ds.users.get(&row[0]).ok_or_else(|| Error::UnknownKey {
            line,
            kind: "user",
            key: row[0].to_owned(),
        })?;
        let i = ds.items.get(&row[1]).ok_or_else(|| Error::UnknownKey {
            line,
            kind: "item",
            key: row[1].to_owned(),
        })?;
        let score: f64 = row[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("score {:?} is not a number", &row[2]),
        })?;
        if !score.is_finite() {
            return Err(Error::NonFiniteScore { line });
        }
        matrix.set(u, i, score);
        if !seen[u * n + i] {
            seen[u * n + i] = true;
            provided += 1;
        }
    }

    let total = m * n;
    let coverage = if total == 0 {
        0.0
    } else {
        provided as f64 / total as f64
    };
    if provided < total {
        warn!(
            "score file covers {provided} of {total} cells ({:.2}%); missing cells filled",
            coverage * 100.0
        );
    }
    Ok(LoadedScores {
        matrix,
        provided,
        coverage,
    })
}

/// Write every unmasked cell as `user_key<TAB>item_key<TAB>score`.
pub fn write_scores<W: Write>(mut out: W, ds: &Dataset, scores: &ScoreMatrix) -> Result<()> {
    for u in 0..scores.m() {
        for (i, &v) in scores.row(u).iter().enumerate() {
            if v.is_finite() {
                writeln!(out, "{}\t{}\t{}", ds.users.key(u), ds.items.key(i), v)?;
            }
        }
    }
    Ok(())
}

/// Replace every training cell with [`MASKED`].
pub fn mask_seen(scores: &ScoreMatrix, train: &InteractionMatrix) -> Result<ScoreMatrix> {
    if (scores.m(), scores.n()) != (train.m(), train.n()) {
        return Err(Error::DimensionMismatch(format!(
            "scores {}x{} vs train {}x{}",
            scores.m(),
            scores.n(),
            train.m(),
            train.n()
        )));
    }
    let mut out = scores.clone();
    for u in 0..train.m() {
        for &i in train.user_items(u) {
            out.set(u, i, MASKED);
        }
    }
    out.masked_seen = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, Aggregation, Interaction, InteractionRecord};

    fn matrix(m: usize, n: usize, cells: &[(usize, usize)]) -> InteractionMatrix {
        let its: Vec<Interaction> = cells
            .iter()
            .map(|&(user, item)| Interaction {
                user,
                item,
                weight: 1.0,
            })
            .collect();
        InteractionMatrix::new(m, n, &its).unwrap()
    }

    #[test]
    fn popularity_scores_are_ratios() {
        let mut cells = Vec::new();
        for u in 0..100 {
            if u < 30 {
                cells.push((u, 0));
            }
            if u < 10 {
                cells.push((u, 1));
            }
            cells.push((u, 3));
        }
        let r = popularity_scorer(&matrix(100, 4, &cells)).unwrap();
        for u in [0, 57, 99] {
            assert_eq!(r.row(u), &[0.3, 0.1, 0.0, 1.0]);
        }
    }

    #[test]
    fn random_scorer_is_seeded() {
        let a = random_scorer(4, 5, 3).unwrap();
        assert_eq!(a, random_scorer(4, 5, 3).unwrap());
        assert!(a.values().iter().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(a, random_scorer(4, 5, 4).unwrap());
    }

    #[test]
    fn zero_iterations_uses_initialization() {
        let train = matrix(3, 3, &[(0, 0), (1, 1)]);
        let cfg = MfConfig {
            iters: 0,
            dim: 2,
            seed: 5,
            ..MfConfig::default()
        };
        let a = WmfModel::fit(&train, &cfg).unwrap();
        let b = WmfModel::fit(&matrix(3, 3, &[(2, 2)]), &cfg).unwrap();
        assert_eq!(a.scores(), b.scores());
        assert_eq!(a.objective_history.len(), 1);
    }

    #[test]
    fn invalid_mf_config() {
        let cfg = MfConfig {
            dim: 0,
            ..MfConfig::default()
        };
        assert!(WmfModel::fit(&matrix(1, 1, &[]), &cfg).is_err());
    }

    fn ds() -> Dataset {
        let recs: Vec<InteractionRecord> = [("a", "x"), ("a", "y"), ("b", "z")]
            .iter()
            .map(|(u, i)| InteractionRecord {
                user_key: (*u).into(),
                item_key: (*i).into(),
                weight: 1.0,
                timestamp: None,
            })
            .collect();
        build_dataset(&recs, Aggregation::Max).unwrap()
    }

    #[test]
    fn load_full_file() {
        let d = ds();
        let mut src = String::new();
        for (u, uk) in d.users.keys().iter().enumerate() {
            for (i, ik) in d.items.keys().iter().enumerate() {
                src.push_str(&format!("{uk}\t{ik}\t{}\n", (u * 10 + i) as f64 / 4.0));
            }
        }
        let loaded = load_scores(src.as_bytes(), &d, b'\t', Fill::default()).unwrap();
        assert_eq!(loaded.coverage, 1.0);
        for u in 0..2 {
            for i in 0..3 {
                assert_eq!(loaded.matrix.get(u, i), (u * 10 + i) as f64 / 4.0);
            }
        }
    }

    #[test]
    fn load_unknown_key_errors_with_line() {
        let err = load_scores(
            "a\tx\t1\nb\tq\t2\n".as_bytes(),
            &ds(),
            b'\t',
            Fill::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownKey { line: 2, .. }), "{err}");
        let err = load_scores("a\tx\tinf\n".as_bytes(), &ds(), b'\t', Fill::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteScore { line: 1 }));
    }

    #[test]
    fn load_single_triple() {
        let loaded = load_scores("b\ty\t0.7\n".as_bytes(), &ds(), b'\t', Fill::Value(0.0)).unwrap();
        let nonzero = loaded.matrix.values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
        assert_eq!(loaded.provided, 1);
        let sentinel = load_scores("b\ty\t0.7\n".as_bytes(), &ds(), b'\t', Fill::Sentinel).unwrap();
        assert_eq!(
            sentinel
                .matrix
                .values()
                .iter()
                .filter(|v| v.is_finite())
                .count(),
            1
        );
    }

    #[test]
    fn masking_is_idempotent_and_leaves_unseen_cells() {
        let train = matrix(2, 3, &[(0, 1), (1, 0), (1, 2)]);
        let r = random_scorer(2, 3, 1).unwrap();
        let once = mask_seen(&r, &train).unwrap();
        let twice = mask_seen(&once, &train).unwrap();
        assert_eq!(once, twice);
        assert!(once.masked_seen);
        for (a, b) in r.values().iter().zip(once.values()) {
            assert!(*b == MASKED || a.to_bits() == b.to_bits());
        }
        assert!(once.is_masked(0, 1) && once.is_masked(1, 0) && !once.is_masked(0, 0));
    }
}
