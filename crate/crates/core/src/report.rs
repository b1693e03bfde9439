//! Results-table rendering (CSV, JSON, markdown) and list files.

use std::fmt::Write as _;
use std::io::Read;

use serde::Serialize;

use crate::dataset::{Dataset, PopularityPartition};
use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;
use crate::rerank::RecommendationLists;
use crate::scorers::ScoreMatrix;

pub const CSV_COLUMNS: [&str; 16] = [
    "Model",
    "Type",
    "NDCG",
    "Pre",
    "Rec",
    "Nov",
    "Div",
    "Cov",
    "Per",
    "Ser",
    "Short",
    "Rel_Short",
    "Long",
    "Rel_Long",
    "F",
    "Lambda",
];

/// Fairness-unaware baseline (`N`) or re-ranked (`P`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    N,
    P,
}

impl RowKind {
    pub fn for_lambda(lambda: f64) -> Self {
        if lambda == 0.0 {
            RowKind::N
        } else {
            RowKind::P
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::N => "N",
            RowKind::P => "P",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub kind: RowKind,
    pub lambda: f64,
    pub report: EvaluationReport,
}

fn csv_fields(row: &ReportRow) -> Vec<String> {
    let r = &row.report;
    vec![
        row.model.clone(),
        row.kind.as_str().to_owned(),
        format!("{:.6}", r.ndcg),
        format!("{:.6}", r.precision),
        format!("{:.6}", r.recall),
        format!("{:.6}", r.novelty),
        format!("{:.6}", r.diversity),
        format!("{:.6}", r.coverage),
        format!("{:.6}", r.personalization),
        format!("{:.6}", r.serendipity),
        r.short_count.to_string(),
        r.rel_short.to_string(),
        r.long_count.to_string(),
        r.rel_long.to_string(),
        format!("{:.6}", r.fairness_f),
        row.lambda.to_string(),
    ]
}

pub fn render_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for row in rows {
        w.write_record(csv_fields(row)).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn render_json(dataset: &str, rows: &[ReportRow]) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Doc<'a> {
        dataset: &'a str,
        rows: &'a [ReportRow],
    }
    let mut out = serde_json::to_vec_pretty(&Doc { dataset, rows })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    out.push(b'\n');
    Ok(out)
}

/// Thousands-separated integer, as in the published tables.
fn grouped(v: usize) -> String {
    let digits = v.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Markdown comparison table grouped by model, N row first.
pub fn render_markdown(dataset: &str, rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### {dataset}\n");
    out.push_str(
        "| Model | Type | λ | NDCG | Pre | Rec | Nov. | Div. | Cov. | Per. | Ser. | Short. | Rel_Short | Long. | Rel_Long | F |\n",
    );
    out.push_str(
        "|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} | {} | {} | {:.4} |",
            row.model,
            row.kind.as_str(),
            row.lambda,
            r.ndcg,
            r.precision,
            r.recall,
            r.novelty,
            r.diversity,
            r.coverage,
            r.personalization,
            r.serendipity,
            grouped(r.short_count),
            grouped(r.rel_short),
            grouped(r.long_count),
            grouped(r.rel_long),
            r.fairness_f,
        );
    }
    out
}

/// Long-format `dataset,model,type,lambda,metric,value` rows for N-vs-P plots.
pub fn render_figure_csv(dataset: &str, rows: &[ReportRow]) -> String {
    let mut out = String::from("dataset,model,type,lambda,metric,value\n");
    for row in rows {
        let r = &row.report;
        let metrics = [
            ("NDCG", r.ndcg),
            ("Pre", r.precision),
            ("Rec", r.recall),
            ("Nov", r.novelty),
            ("Div", r.diversity),
            ("Cov", r.coverage),
            ("Per", r.personalization),
            ("Ser", r.serendipity),
            ("F", r.fairness_f),
        ];
        for (name, value) in metrics {
            let _ = writeln!(
                out,
                "{dataset},{},{},{},{name},{value:.6}",
                row.model,
                row.kind.as_str(),
                row.lambda
            );
        }
    }
    out
}

/// `user_key<TAB>rank<TAB>item_key<TAB>original_score<TAB>adjusted_score<TAB>{short|long}`.
pub fn render_lists(
    ds: &Dataset,
    lists: &RecommendationLists,
    original: &ScoreMatrix,
    adjusted: &ScoreMatrix,
    part: &PopularityPartition,
) -> String {
    let mut out = String::new();
    for u in 0..lists.m() {
        for (rank, &j) in lists.list(u).iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                ds.users.key(u),
                rank + 1,
                ds.items.key(j),
                original.get(u, j),
                adjusted.get(u, j),
                part.group_label(j)
            );
        }
    }
    out
}

/// Read a list file back into per-user lists. Every user of `ds` must
/// appear with the same list length.
pub fn parse_lists<R: Read>(source: R, ds: &Dataset) -> Result<RecommendationLists> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(source);
    let mut ranked: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ds.m()];
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
                message: "expected at least user, rank and item columns".into(),
            });
        }
        let u = ds.users.get(&row[0]).ok_or_else(|| Error::UnknownKey {
            line,
            kind: "user",
            key: row[0].to_owned(),
        })?;
        let rank: usize = row[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("rank {:?} is not a positive integer", &row[1]),
        })?;
        let j = ds.items.get(&row[2]).ok_or_else(|| Error::UnknownKey {
            line,
            kind: "item",
            key: row[2].to_owned(),
        })?;
        ranked[u].push((rank, j));
    }
    let k = ranked.first().map_or(0, Vec::len);
    let lists = ranked
        .into_iter()
        .enumerate()
        .map(|(u, mut entries)| {
            if entries.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "user {} has {} entries, expected {k}",
                    ds.users.key(u),
                    entries.len()
                )));
            }
            entries.sort_unstable();
            Ok(entries.into_iter().map(|(_, j)| j).collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    RecommendationLists::new(k, ds.n(), lists)
}
