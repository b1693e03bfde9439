//! Experiment configuration: flat `section.key = value` text (TOML dotted
//! keys). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Aggregation, Format};
use crate::error::{Error, Result};
use crate::rerank::RerankConfig;
use crate::scorers::{Fill, MfConfig};

pub const BUILTIN_SCORERS: [&str; 3] = ["popularity", "mf", "random"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    pub input: InputSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub mf: MfConfig,
    #[serde(default)]
    pub random: RandomSection,
    #[serde(default)]
    pub rerank: RerankConfig,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub name: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            name: "dataset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub user_col: usize,
    #[serde(default = "one")]
    pub item_col: usize,
    #[serde(default = "two")]
    pub weight_col: Option<usize>,
    #[serde(default)]
    pub timestamp_col: Option<usize>,
    #[serde(default)]
    pub dedup: Aggregation,
}

fn default_delimiter() -> String {
    "tab".into()
}
fn one() -> usize {
    1
}
fn two() -> Option<usize> {
    Some(2)
}

/// `tab`, `comma`, or a single ASCII character.
pub fn parse_delimiter(spec: &str) -> Result<u8> {
    match spec {
        "tab" | "\t" => Ok(b'\t'),
        "comma" => Ok(b','),
        s if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        s => Err(Error::Config(format!("unsupported delimiter {s:?}"))),
    }
}

impl InputSection {
    pub fn format(&self) -> Result<Format> {
        Ok(Format {
            delimiter: parse_delimiter(&self.delimiter)?,
            has_header: self.header,
            user_col: self.user_col,
            item_col: self.item_col,
            weight_col: self.weight_col,
            timestamp_col: self.timestamp_col,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            seed: 0,
            ratios: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub ratio: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { ratio: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    /// Built-in scorers to run, in report order.
    pub models: Vec<String>,
    pub mask_seen: bool,
    /// Score for cells missing from imported files.
    pub fill: f64,
    /// Fill missing imported cells with the never-select sentinel instead.
    pub fill_sentinel: bool,
    pub import_delimiter: String,
    /// Externally computed score files, by model name.
    pub import: BTreeMap<String, PathBuf>,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            models: vec!["mf".into()],
            mask_seen: true,
            fill: 0.0,
            fill_sentinel: false,
            import_delimiter: "tab".into(),
            import: BTreeMap::new(),
        }
    }
}

impl ScorerSection {
    pub fn fill(&self) -> Fill {
        if self.fill_sentinel {
            Fill::Sentinel
        } else {
            Fill::Value(self.fill)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSection {
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Md],
        }
    }
}

/// Parse a `--set key=value` override. The value is read as a TOML value,
/// falling back to a bare string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    Ok((key.to_owned(), parsed))
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a section")))?;
    }
    cursor.insert(last.to_owned(), value);
    Ok(())
}

fn absolutize(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl ExperimentConfig {
    /// Parse configuration text with overrides applied on top. Relative
    /// paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value.clone())?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        absolutize(base_dir, &mut cfg.input.path);
        absolutize(base_dir, &mut cfg.output.dir);
        for path in cfg.scorer.import.values_mut() {
            absolutize(base_dir, path);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, overrides).map_err(|e| e.in_file(path))
    }

    /// Configuration snapshot that re-parses to an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        crate::dataset::validate_ratios(self.split.ratios)?;
        let r = self.partition.ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidPartitionRatio(r));
        }
        self.input.format()?;
        parse_delimiter(&self.scorer.import_delimiter)?;
        if !self.scorer.fill.is_finite() {
            return Err(Error::Config("scorer.fill must be finite".into()));
        }
        self.mf.validate()?;
        self.rerank.validate()?;
        if self.scorer.models.is_empty() && self.scorer.import.is_empty() {
            return Err(Error::Config("no scorer configured".into()));
        }
        let mut names = Vec::new();
        for model in &self.scorer.models {
            if !BUILTIN_SCORERS.contains(&model.as_str()) {
                return Err(Error::Config(format!(
                    "unknown scorer {model:?}; built-ins are {BUILTIN_SCORERS:?}"
                )));
            }
            names.push(model.as_str());
        }
        for (name, path) in &self.scorer.import {
            names.push(name.as_str());
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "score file for {name:?} not found: {}",
                    path.display()
                )));
            }
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scorer names must be unique".into()));
        }
        if names.iter().any(|n| {
            n.is_empty() || n.contains(|c: char| c == '/' || c == '\\' || c.is_whitespace())
        }) {
            return Err(Error::Config(
                "scorer names must be nonempty path-safe words".into(),
            ));
        }
        if !self.input.path.is_file() {
            return Err(Error::Config(format!(
                "input not found: {}",
                self.input.path.display()
            )));
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn model_names(&self) -> Vec<String> {
        self.scorer
            .models
            .iter()
            .cloned()
            .chain(self.scorer.import.keys().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
input.path = "data.tsv"
split.seed = 3
rerank.k = 5
rerank.lambda_grid = [0.5, 1.0]
mf.dim = 8
"#;

    #[test]
    fn dotted_keys_and_defaults() {
        let cfg = ExperimentConfig::parse(BASIC, Path::new("/base"), &[]).unwrap();
        assert_eq!(cfg.input.path, PathBuf::from("/base/data.tsv"));
        assert_eq!(cfg.split.seed, 3);
        assert_eq!(cfg.split.ratios, [0.7, 0.1, 0.2]);
        assert_eq!(cfg.rerank.k, 5);
        assert_eq!(cfg.mf.dim, 8);
        assert_eq!(cfg.mf.alpha, 40.0);
        assert_eq!(cfg.scorer.models, vec!["mf".to_string()]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASIC}\nrerank.kk = 3\n");
        let err = ExperimentConfig::parse(&text, Path::new("/"), &[]).unwrap_err();
        assert!(err.to_string().contains("kk"), "{err}");
        assert!(
            ExperimentConfig::parse(&format!("{BASIC}\nbogus.x = 1\n"), Path::new("/"), &[])
                .is_err()
        );
    }

    #[test]
    fn overrides_apply() {
        let ov = vec![
            parse_override("rerank.k=7").unwrap(),
            parse_override("dataset.name = lastfm").unwrap(),
            parse_override("rerank.lambda_grid=[1.0, 2.0]").unwrap(),
        ];
        let cfg = ExperimentConfig::parse(BASIC, Path::new("/"), &ov).unwrap();
        assert_eq!(cfg.rerank.k, 7);
        assert_eq!(cfg.dataset.name, "lastfm");
        assert_eq!(cfg.rerank.lambda_grid, Some(vec![1.0, 2.0]));
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = ExperimentConfig::parse(BASIC, Path::new("/base"), &[]).unwrap();
        cfg.scorer
            .import
            .insert("ext".into(), PathBuf::from("/base/ext.tsv"));
        let again = ExperimentConfig::parse(&cfg.to_toml(), Path::new("/elsewhere"), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn ratio_validation() {
        let text = format!("{BASIC}\nsplit.ratios = [0.5, 0.1, 0.2]\n");
        let cfg = ExperimentConfig::parse(&text, Path::new("/"), &[]).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidRatios(_))));
    }

    #[test]
    fn delimiters() {
        assert_eq!(parse_delimiter("tab").unwrap(), b'\t');
        assert_eq!(parse_delimiter("comma").unwrap(), b',');
        assert_eq!(parse_delimiter(";").unwrap(), b';');
        assert!(parse_delimiter("::").is_err());
    }
}
