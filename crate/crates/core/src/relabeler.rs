//! Target rewriting from weak-labeler probabilities.
//!
//! A document with engagement target `y` and irrelevance probability `p` gets
//! the expected target `(1 - p) · y + p · y_p`, where `y_p` is the label a
//! false positive would have carried. Because the ListNet loss is linear in
//! its targets, training on these targets is the same as training on the
//! two-term weakly supervised loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{doc_count, QueryGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// `y_p = y_dismiss`.
    R1,
    /// `y_p = 0`.
    R2,
    /// As R1 for organic results; advertised results keep their target (`p := 0`).
    R3,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R1" => Ok(PolicyKind::R1),
            "R2" => Ok(PolicyKind::R2),
            "R3" => Ok(PolicyKind::R3),
            _ => Err(Error::Config(format!("unknown relabel policy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelabelPolicy {
    pub kind: PolicyKind,
    pub y_dismiss: f64,
}

impl RelabelPolicy {
    pub fn new(kind: PolicyKind, y_dismiss: f64) -> Self {
        RelabelPolicy { kind, y_dismiss }
    }

    /// Target assigned when a document is a false positive.
    pub fn false_positive_label(&self) -> f64 {
        match self.kind {
            PolicyKind::R1 | PolicyKind::R3 => self.y_dismiss,
            PolicyKind::R2 => 0.0,
        }
    }

    /// Probability actually used for mixing after policy overrides.
    pub fn mixing_probability(&self, advertised: bool, p: f64) -> f64 {
        match self.kind {
            PolicyKind::R3 if advertised => 0.0,
            _ => p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabeledTarget {
    pub y_original: f64,
    /// Mixing probability after any policy override.
    pub p: f64,
    pub y_effective: f64,
}

pub fn mix(y: f64, p: f64, y_p: f64) -> f64 {
    (1.0 - p) * y + p * y_p
}

pub fn relabel(advertised: bool, y: f64, p: f64, policy: &RelabelPolicy) -> RelabeledTarget {
    debug_assert!((0.0..=1.0).contains(&p), "p = {p}");
    let p = policy.mixing_probability(advertised, p);
    RelabeledTarget {
        y_original: y,
        p,
        y_effective: mix(y, p, policy.false_positive_label()),
    }
}

/// Replaces every document's effective target, leaving structure and
/// features untouched. `probabilities` follow the flattened document order
/// and are also stored on each document.
pub fn relabel_dataset(
    groups: &[QueryGroup],
    probabilities: &[f64],
    policy: &RelabelPolicy,
) -> Result<Vec<QueryGroup>> {
    let n = doc_count(groups);
    if probabilities.len() != n {
        return Err(Error::LengthMismatch {
            what: "probabilities",
            expected: n,
            found: probabilities.len(),
        });
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut probs = probabilities.iter();
    let out = groups
        .iter()
        .map(|g| QueryGroup {
            query_id: g.query_id.clone(),
            docs: g
                .docs
                .iter()
                .map(|d| {
                    let p = *probs.next().expect("length checked");
                    let target = relabel(d.advertised, d.y_original, p, policy);
                    let mut doc = d.clone();
                    doc.p = p;
                    doc.y_effective = target.y_effective;
                    doc
                })
                .collect(),
        })
        .collect();
    Ok(out)
}
