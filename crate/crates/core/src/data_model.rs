//! Records, schema, taxonomy and seed annotations, plus their file formats.
//!
//! Datasets are JSONL, one [`QueryDocRecord`] per line, accompanied by a
//! JSON schema sidecar ([`DatasetSchema`]) declaring the feature dimension,
//! the engagement label map and the labeling-function count. Taxonomies are
//! tab-separated `title phrase<TAB>industry,industry` rows.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::lf_engine::VoteVector;

/// Logged user interaction with a result, from most to least positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engagement {
    Apply,
    Save,
    View,
    Skip,
    Dismiss,
}

impl Engagement {
    pub const ALL: [Engagement; 5] = [
        Engagement::Apply,
        Engagement::Save,
        Engagement::View,
        Engagement::Skip,
        Engagement::Dismiss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Engagement::Apply => "apply",
            Engagement::Save => "save",
            Engagement::View => "view",
            Engagement::Skip => "skip",
            Engagement::Dismiss => "dismiss",
        }
    }
}

impl fmt::Display for Engagement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open token range `[start, end)` locating a job title inside the query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TitleSpan {
    pub start: usize,
    pub end: usize,
}

impl From<[usize; 2]> for TitleSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        TitleSpan { start, end }
    }
}

impl From<TitleSpan> for [usize; 2] {
    fn from(span: TitleSpan) -> Self {
        [span.start, span.end]
    }
}

/// One (user, query, document) triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryDocRecord {
    pub record_id: String,
    pub query_id: String,
    pub query_tokens: Vec<String>,
    pub query_title_span: Option<TitleSpan>,
    pub doc_title_tokens: Vec<String>,
    pub user_seniority: Option<u8>,
    pub doc_seniority: Option<u8>,
    pub doc_industry_id: Option<String>,
    /// `None` is only legal at indices the schema declares optional.
    pub features: Vec<Option<f64>>,
    pub engagement: Engagement,
    pub advertised: bool,
}

impl QueryDocRecord {
    /// Tokens covered by the title span, if the query has one.
    pub fn title_tokens(&self) -> Option<&[String]> {
        let span = self.query_title_span?;
        self.query_tokens.get(span.start..span.end)
    }

    /// Taxonomy key: title-span tokens joined with single spaces.
    pub fn title_key(&self) -> Option<String> {
        self.title_tokens().filter(|t| !t.is_empty()).map(|t| t.join(" "))
    }
}

/// Engagement → target relevance value used as `y` by the ranker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Engagement, f64>", into = "BTreeMap<Engagement, f64>")]
pub struct EngagementLabelMap {
    values: [f64; 5],
}

impl EngagementLabelMap {
    /// Builds a map from values in `Engagement::ALL` order. Values must be
    /// finite and non-increasing from apply to dismiss.
    pub fn new(values: [f64; 5]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("engagement labels must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "engagement labels must satisfy apply >= save >= view >= skip >= dismiss".into(),
            ));
        }
        Ok(EngagementLabelMap { values })
    }

    pub fn label(&self, engagement: Engagement) -> f64 {
        self.values[engagement as usize]
    }

    pub fn dismiss(&self) -> f64 {
        self.label(Engagement::Dismiss)
    }
}

impl Default for EngagementLabelMap {
    fn default() -> Self {
        EngagementLabelMap {
            values: [4.0, 3.0, 2.0, 1.0, 0.5],
        }
    }
}

impl TryFrom<BTreeMap<Engagement, f64>> for EngagementLabelMap {
    type Error = Error;

    fn try_from(map: BTreeMap<Engagement, f64>) -> Result<Self> {
        let mut values = [0.0; 5];
        for e in Engagement::ALL {
            values[e as usize] = *map
                .get(&e)
                .ok_or_else(|| Error::Config(format!("engagement label map missing `{e}`")))?;
        }
        EngagementLabelMap::new(values)
    }
}

impl From<EngagementLabelMap> for BTreeMap<Engagement, f64> {
    fn from(map: EngagementLabelMap) -> Self {
        Engagement::ALL.iter().map(|&e| (e, map.label(e))).collect()
    }
}

fn default_seniority_range() -> [u8; 2] {
    [0, 9]
}

/// Schema sidecar shared by every dataset of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub feature_dim: usize,
    /// Feature indices that may be null.
    #[serde(default)]
    pub optional_features: Vec<usize>,
    pub lf_count: usize,
    #[serde(default = "default_seniority_range")]
    pub seniority_range: [u8; 2],
    pub engagement_labels: EngagementLabelMap,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if let Some(&i) = self.optional_features.iter().find(|&&i| i >= self.feature_dim) {
            return Err(Error::FeatureIndex {
                index: i,
                dim: self.feature_dim,
            });
        }
        if self.seniority_range[0] > self.seniority_range[1] {
            return Err(Error::Config("seniority_range must be [low, high]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let schema: DatasetSchema = io::read_json(path)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// A validated, immutable collection of records with a uniform feature
/// dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub records: Vec<QueryDocRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.record_id.clone()).collect()
    }
}

/// Loads and validates a JSONL dataset against `schema`, preserving line order.
pub fn load_records(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    let rows: Vec<(usize, QueryDocRecord)> = io::read_jsonl(path)?;
    let optional: HashSet<usize> = schema.optional_features.iter().copied().collect();
    let [lo, hi] = schema.seniority_range;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for (line, record) in rows {
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if record.features.len() != schema.feature_dim {
            return Err(Error::FeatureDimension {
                path: path.to_owned(),
                line,
                expected: schema.feature_dim,
                found: record.features.len(),
            });
        }
        for (i, f) in record.features.iter().enumerate() {
            match f {
                None if !optional.contains(&i) => {
                    return Err(bad(format!("feature {i} is null but not declared optional")))
                }
                Some(v) if !v.is_finite() => return Err(bad(format!("feature {i} is not finite"))),
                _ => {}
            }
        }
        for s in [record.user_seniority, record.doc_seniority].into_iter().flatten() {
            if s < lo || s > hi {
                return Err(bad(format!("seniority {s} outside [{lo}, {hi}]")));
            }
        }
        if let Some(span) = record.query_title_span {
            if span.start >= span.end || span.end > record.query_tokens.len() {
                return Err(bad(format!(
                    "title span [{}, {}) invalid for {} query tokens",
                    span.start,
                    span.end,
                    record.query_tokens.len()
                )));
            }
        }
        if !seen.insert(record.record_id.clone()) {
            return Err(Error::DuplicateRecordId(record.record_id));
        }
        records.push(record);
    }
    Ok(Dataset {
        feature_dim: schema.feature_dim,
        records,
    })
}

pub fn write_records(path: &Path, dataset: &Dataset) -> Result<()> {
    io::write_jsonl(path, &dataset.records)
}

/// Title phrase → set of industries it belongs to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Taxonomy {
    pub title_to_industry: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    /// Builds a taxonomy from rows, merging duplicate keys by set union.
    pub fn from_rows<I, K, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, Vec<S>)>,
        K: Into<String>,
        S: Into<String>,
    {
        let mut title_to_industry: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (key, industries) in rows {
            let key = key.into();
            if industries.is_empty() {
                return Err(Error::Config(format!("taxonomy key `{key}` has no industries")));
            }
            title_to_industry
                .entry(key)
                .or_default()
                .extend(industries.into_iter().map(Into::into));
        }
        Ok(Taxonomy { title_to_industry })
    }

    pub fn industries(&self, title_key: &str) -> Option<&BTreeSet<String>> {
        self.title_to_industry.get(title_key)
    }

    pub fn is_empty(&self) -> bool {
        self.title_to_industry.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (key, industries) in &self.title_to_industry {
            out.push_str(key);
            out.push('\t');
            out.push_str(&industries.iter().cloned().collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Reads a taxonomy file. Blank lines and lines starting with `#` are skipped.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = io::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, list) = line.split_once('\t').unwrap_or((line, ""));
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                message: "empty title key".into(),
            });
        }
        let industries: Vec<String> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        if industries.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                message: format!("taxonomy key `{key}` has no industries"),
            });
        }
        rows.push((key.to_owned(), industries));
    }
    Taxonomy::from_rows(rows)
}

pub fn write_taxonomy(path: &Path, taxonomy: &Taxonomy) -> Result<()> {
    io::write_atomic(path, taxonomy.to_tsv().as_bytes())
}

/// One annotated seed example. `label == true` means the target condition
/// (the document is extremely irrelevant) holds.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedExample {
    pub votes: VoteVector,
    pub label: bool,
}

/// Row of a label sidecar file: `{"record_id": "...", "label": 0|1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub record_id: String,
    pub label: u8,
}

pub fn load_labels(path: &Path) -> Result<Vec<TruthRow>> {
    let rows: Vec<(usize, TruthRow)> = io::read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, row)| {
            if row.label > 1 {
                Err(Error::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!("label must be 0 or 1, found {}", row.label),
                })
            } else {
                Ok(row)
            }
        })
        .collect()
}

pub fn write_labels(path: &Path, rows: &[TruthRow]) -> Result<()> {
    io::write_jsonl(path, rows)
}
