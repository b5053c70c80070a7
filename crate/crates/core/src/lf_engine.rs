//! Labeling functions: declarative rule archetypes evaluated over records
//! into tri-state votes, plus coverage and accuracy statistics.
//!
//! A `Positive` vote means the rule's relevance condition holds. The weak
//! labeler's positive class is the opposite (irrelevant); no polarity flip is
//! applied here and the label model learns the sign from the seed data.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data_model::{Dataset, QueryDocRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::io;

/// A single labeling-function output. Serialized as `1`, `0` or `null`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Vote {
    Negative,
    Positive,
    Abstain,
}

impl Vote {
    pub const ALL: [Vote; 3] = [Vote::Negative, Vote::Positive, Vote::Abstain];

    /// Column of this state in the `{0, 1, φ}` weight layout.
    pub fn index(self) -> usize {
        match self {
            Vote::Negative => 0,
            Vote::Positive => 1,
            Vote::Abstain => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Vote::Negative => "0",
            Vote::Positive => "1",
            Vote::Abstain => "null",
        }
    }

    fn from_bool(holds: bool) -> Vote {
        if holds {
            Vote::Positive
        } else {
            Vote::Negative
        }
    }
}

impl Serialize for Vote {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Vote::Negative => s.serialize_u8(0),
            Vote::Positive => s.serialize_u8(1),
            Vote::Abstain => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Vote {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(Vote::Abstain),
            Some(0) => Ok(Vote::Negative),
            Some(1) => Ok(Vote::Positive),
            Some(v) => Err(serde::de::Error::custom(format!(
                "vote must be 0, 1 or null, found {v}"
            ))),
        }
    }
}

/// The `m` votes for one record, in LF config order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteVector(pub Vec<Vote>);

impl VoteVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vote> + '_ {
        self.0.iter().copied()
    }
}

impl From<Vec<Vote>> for VoteVector {
    fn from(votes: Vec<Vote>) -> Self {
        VoteVector(votes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LfKind {
    /// Query title tokens must all appear in the document title. Without
    /// `span_required`, queries lacking a title span fall back to all tokens.
    TokenContainment {
        #[serde(default = "default_true")]
        span_required: bool,
    },
    /// User and document seniority at most `max_delta` levels apart.
    OrdinalDelta { max_delta: u32 },
    /// Document industry belongs to the taxonomy entry of the query title.
    TaxonomyMatch,
    /// Inclusive threshold on one model feature.
    FeatureThreshold {
        feature_index: usize,
        threshold: f64,
        direction: Direction,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LfKind,
    #[serde(default)]
    pub serveable: bool,
}

impl LfSpec {
    pub fn evaluate(&self, record: &QueryDocRecord, taxonomy: &Taxonomy) -> Result<Vote> {
        match &self.kind {
            LfKind::TokenContainment { span_required } => Ok(eval_token_containment(record, *span_required)),
            LfKind::OrdinalDelta { max_delta } => Ok(eval_ordinal_delta(record, *max_delta)),
            LfKind::TaxonomyMatch => Ok(eval_taxonomy_match(record, taxonomy)),
            LfKind::FeatureThreshold {
                feature_index,
                threshold,
                direction,
            } => eval_feature_threshold(record, *feature_index, *threshold, *direction),
        }
    }

    pub fn needs_taxonomy(&self) -> bool {
        matches!(self.kind, LfKind::TaxonomyMatch)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LfConfigFile {
    #[serde(rename = "lf")]
    lfs: Vec<LfSpec>,
}

pub fn validate_specs(specs: &[LfSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("at least one labeling function is required".into()));
    }
    let mut names = HashSet::new();
    for spec in specs {
        if !names.insert(spec.name.as_str()) {
            return Err(Error::Config(format!("duplicate LF name `{}`", spec.name)));
        }
        if let LfKind::FeatureThreshold { threshold, .. } = spec.kind {
            if !threshold.is_finite() {
                return Err(Error::Config(format!("LF `{}`: threshold must be finite", spec.name)));
            }
        }
    }
    Ok(())
}

/// Parses an LF config (TOML `[[lf]]` tables). File order fixes vote columns.
pub fn parse_lf_config(text: &str) -> Result<Vec<LfSpec>> {
    let file: LfConfigFile = toml::from_str(text).map_err(|e| Error::Config(format!("LF config: {e}")))?;
    validate_specs(&file.lfs)?;
    Ok(file.lfs)
}

pub fn load_lf_config(path: &Path) -> Result<Vec<LfSpec>> {
    parse_lf_config(&io::read_to_string(path)?)
}

pub fn lf_config_to_toml(specs: &[LfSpec]) -> Result<String> {
    toml::to_string(&LfConfigFile { lfs: specs.to_vec() }).map_err(|e| Error::Config(format!("LF config: {e}")))
}

pub fn eval_token_containment(record: &QueryDocRecord, span_required: bool) -> Vote {
    if record.query_tokens.is_empty() {
        return Vote::Abstain;
    }
    let needle = match record.title_tokens() {
        Some(tokens) => tokens,
        None if span_required => return Vote::Abstain,
        None => &record.query_tokens[..],
    };
    let title: HashSet<&str> = record.doc_title_tokens.iter().map(String::as_str).collect();
    Vote::from_bool(needle.iter().all(|t| title.contains(t.as_str())))
}

pub fn eval_ordinal_delta(record: &QueryDocRecord, max_delta: u32) -> Vote {
    match (record.user_seniority, record.doc_seniority) {
        (Some(u), Some(d)) => Vote::from_bool(u32::from(u.abs_diff(d)) <= max_delta),
        _ => Vote::Abstain,
    }
}

pub fn eval_taxonomy_match(record: &QueryDocRecord, taxonomy: &Taxonomy) -> Vote {
    let (Some(key), Some(industry)) = (record.title_key(), record.doc_industry_id.as_ref()) else {
        return Vote::Abstain;
    };
    match taxonomy.industries(&key) {
        Some(set) => Vote::from_bool(set.contains(industry)),
        None => Vote::Abstain,
    }
}

pub fn eval_feature_threshold(
    record: &QueryDocRecord,
    feature_index: usize,
    threshold: f64,
    direction: Direction,
) -> Result<Vote> {
    let value = record.features.get(feature_index).ok_or(Error::FeatureIndex {
        index: feature_index,
        dim: record.features.len(),
    })?;
    Ok(match value {
        None => Vote::Abstain,
        Some(v) => Vote::from_bool(match direction {
            Direction::AtLeast => *v >= threshold,
            Direction::AtMost => *v <= threshold,
        }),
    })
}

/// `n × m` vote matrix with rows aligned to record ids.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteMatrix {
    pub lf_count: usize,
    pub record_ids: Vec<String>,
    pub rows: Vec<VoteVector>,
}

#[derive(Serialize, Deserialize)]
struct VoteRow {
    record_id: String,
    votes: VoteVector,
}

impl VoteMatrix {
    pub fn new(lf_count: usize, record_ids: Vec<String>, rows: Vec<VoteVector>) -> Result<Self> {
        if record_ids.len() != rows.len() {
            return Err(Error::LengthMismatch {
                what: "vote matrix record ids",
                expected: rows.len(),
                found: record_ids.len(),
            });
        }
        if let Some(row) = rows.iter().find(|r| r.len() != lf_count) {
            return Err(Error::LengthMismatch {
                what: "vote vector",
                expected: lf_count,
                found: row.len(),
            });
        }
        Ok(VoteMatrix {
            lf_count,
            record_ids,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, lf: usize) -> impl Iterator<Item = Vote> + '_ {
        self.rows.iter().map(move |r| r.0[lf])
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let rows: Vec<VoteRow> = self
            .record_ids
            .iter()
            .zip(&self.rows)
            .map(|(id, v)| VoteRow {
                record_id: id.clone(),
                votes: v.clone(),
            })
            .collect();
        io::to_jsonl(&rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_jsonl()?)
    }

    pub fn load(path: &Path, lf_count: usize) -> Result<Self> {
        let rows: Vec<(usize, VoteRow)> = io::read_jsonl(path)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut votes = Vec::with_capacity(rows.len());
        for (line, row) in rows {
            if row.votes.len() != lf_count {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!("expected {lf_count} votes, found {}", row.votes.len()),
                });
            }
            ids.push(row.record_id);
            votes.push(row.votes);
        }
        VoteMatrix::new(lf_count, ids, votes)
    }
}

/// Applies every LF to every record. Rows follow dataset order regardless of
/// how work is split across threads.
pub fn eval_all(dataset: &Dataset, specs: &[LfSpec], taxonomy: &Taxonomy) -> Result<VoteMatrix> {
    validate_specs(specs)?;
    let rows = dataset
        .records
        .par_iter()
        .map(|record| {
            specs
                .iter()
                .map(|spec| spec.evaluate(record, taxonomy))
                .collect::<Result<Vec<_>>>()
                .map(VoteVector)
        })
        .collect::<Result<Vec<_>>>()?;
    VoteMatrix::new(specs.len(), dataset.record_ids(), rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    pub coverage: f64,
    pub positive: usize,
    pub negative: usize,
    pub abstain: usize,
    /// Share of non-abstaining votes that agree with the seed label, where a
    /// `Positive` (relevant) vote agrees with label 0 and `Negative` with 1.
    pub empirical_accuracy: Option<f64>,
}

pub fn compute_stats(votes: &VoteMatrix, seed_labels: Option<&[bool]>) -> Result<Vec<LfStats>> {
    if let Some(labels) = seed_labels {
        if labels.len() != votes.len() {
            return Err(Error::LengthMismatch {
                what: "seed labels",
                expected: votes.len(),
                found: labels.len(),
            });
        }
    }
    let n = votes.len();
    let stats = (0..votes.lf_count)
        .map(|lf| {
            let mut counts = [0usize; 3];
            let mut correct = 0usize;
            for (row, vote) in votes.column(lf).enumerate() {
                counts[vote.index()] += 1;
                if let Some(labels) = seed_labels {
                    let irrelevant = labels[row];
                    correct +=
                        usize::from((vote == Vote::Positive && !irrelevant) || (vote == Vote::Negative && irrelevant));
                }
            }
            let voted = counts[0] + counts[1];
            LfStats {
                coverage: if n == 0 {
                    0.0
                } else {
                    1.0 - counts[Vote::Abstain.index()] as f64 / n as f64
                },
                positive: counts[Vote::Positive.index()],
                negative: counts[Vote::Negative.index()],
                abstain: counts[Vote::Abstain.index()],
                empirical_accuracy: match seed_labels {
                    Some(_) if voted > 0 => Some(correct as f64 / voted as f64),
                    _ => None,
                },
            }
        })
        .collect();
    Ok(stats)
}
