//! Seeded Naive-Bayes label model.
//!
//! Each labeling function contributes a log-likelihood ratio
//! `w[i][a] = ln(P(z_i = a | y = 1) / P(z_i = a | y = 0))` for its observed
//! vote `a ∈ {0, 1, φ}`, and the class prior contributes
//! `b = ln(P(y = 1) / P(y = 0))`. The posterior log-odds are the sum, which
//! is a linear model over one-hot vote indicators, i.e. weighted majority
//! voting. Conditionals are estimated from the annotated seed set with
//! additive smoothing over the three vote states.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::SeedExample;
use crate::error::{Error, Result};
use crate::io;
use crate::lf_engine::{Vote, VoteMatrix, VoteVector};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// Number of vote states per labeling function.
pub const VOTE_STATES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelModel {
    weights: Vec<[f64; VOTE_STATES]>,
    bias: f64,
    smoothing_alpha: f64,
    /// Seed counts `(n0, n1)`.
    class_counts: [u64; 2],
}

/// One-hot encoding of a vote vector: `x[i][a] = 1` iff `z_i = a`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorFeatures {
    pub x: Vec<[u8; VOTE_STATES]>,
}

impl IndicatorFeatures {
    pub fn from_votes(votes: &VoteVector) -> Self {
        IndicatorFeatures {
            x: votes
                .iter()
                .map(|v| {
                    let mut row = [0u8; VOTE_STATES];
                    row[v.index()] = 1;
                    row
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    m: usize,
    smoothing_alpha: f64,
    class_counts: [u64; 2],
    weights: Vec<[f64; VOTE_STATES]>,
    bias: f64,
}

impl WeakLabelModel {
    /// Assembles a model from explicit weights. `class_counts` is metadata
    /// only and may be zero for hand-built models.
    pub fn from_parts(
        weights: Vec<[f64; VOTE_STATES]>,
        bias: f64,
        smoothing_alpha: f64,
        class_counts: [u64; 2],
    ) -> Self {
        WeakLabelModel {
            weights,
            bias,
            smoothing_alpha,
            class_counts,
        }
    }

    pub fn lf_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[[f64; VOTE_STATES]] {
        &self.weights
    }

    pub fn weight(&self, lf: usize, vote: Vote) -> f64 {
        self.weights[lf][vote.index()]
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn class_counts(&self) -> [u64; 2] {
        self.class_counts
    }

    /// Posterior log-odds by table lookup.
    pub fn logit(&self, votes: &VoteVector) -> f64 {
        debug_assert_eq!(votes.len(), self.lf_count());
        let mut acc = 0.0;
        for (row, vote) in self.weights.iter().zip(votes.iter()) {
            acc += row[vote.index()];
        }
        acc + self.bias
    }

    /// Posterior log-odds as `wᵀx + b` over indicator features.
    pub fn logit_linear(&self, features: &IndicatorFeatures) -> f64 {
        let mut acc = 0.0;
        for (w, x) in self.weights.iter().zip(&features.x) {
            for a in 0..VOTE_STATES {
                acc += w[a] * f64::from(x[a]);
            }
        }
        acc + self.bias
    }

    pub fn predict(&self, votes: &VoteVector) -> f64 {
        sigmoid(self.logit(votes))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            m: self.lf_count(),
            smoothing_alpha: self.smoothing_alpha,
            class_counts: self.class_counts,
            weights: self.weights.clone(),
            bias: self.bias,
        };
        let mut bytes =
            serde_json::to_vec_pretty(&file).map_err(|e| Error::invalid(format!("serialize model: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = io::read_json(path)?;
        if file.weights.len() != file.m {
            return Err(Error::LengthMismatch {
                what: "label model weights",
                expected: file.m,
                found: file.weights.len(),
            });
        }
        Ok(WeakLabelModel {
            weights: file.weights,
            bias: file.bias,
            smoothing_alpha: file.smoothing_alpha,
            class_counts: file.class_counts,
        })
    }
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-LF vote counts split by class: `counts[lf][class][state]`.
pub(crate) fn tally(seed: &[SeedExample], m: usize) -> Result<Vec<[[u64; VOTE_STATES]; 2]>> {
    let mut counts = vec![[[0u64; VOTE_STATES]; 2]; m];
    for ex in seed {
        if ex.votes.len() != m {
            return Err(Error::LengthMismatch {
                what: "seed vote vector",
                expected: m,
                found: ex.votes.len(),
            });
        }
        let class = usize::from(ex.label);
        for (lf, vote) in ex.votes.iter().enumerate() {
            counts[lf][class][vote.index()] += 1;
        }
    }
    Ok(counts)
}

/// Estimates the label model from annotated seed examples in one pass.
pub fn fit(seed: &[SeedExample], smoothing_alpha: f64) -> Result<WeakLabelModel> {
    if !(smoothing_alpha >= 0.0 && smoothing_alpha.is_finite()) {
        return Err(Error::Config(format!(
            "smoothing alpha must be finite and >= 0, got {smoothing_alpha}"
        )));
    }
    let first = seed.first().ok_or_else(|| Error::invalid("seed set is empty"))?;
    let m = first.votes.len();
    let counts = tally(seed, m)?;
    let n1 = seed.iter().filter(|ex| ex.label).count() as u64;
    let n0 = seed.len() as u64 - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass { n0, n1 });
    }

    let alpha = smoothing_alpha;
    let denom = [
        n0 as f64 + VOTE_STATES as f64 * alpha,
        n1 as f64 + VOTE_STATES as f64 * alpha,
    ];
    let mut weights = Vec::with_capacity(m);
    for (lf, c) in counts.iter().enumerate() {
        let mut row = [0.0; VOTE_STATES];
        for vote in Vote::ALL {
            let a = vote.index();
            if alpha == 0.0 {
                for (class, per_state) in c.iter().enumerate() {
                    if per_state[a] == 0 {
                        return Err(Error::ZeroCell {
                            lf,
                            state: vote.name(),
                            class: class as u8,
                        });
                    }
                }
            }
            let p0 = (c[0][a] as f64 + alpha) / denom[0];
            let p1 = (c[1][a] as f64 + alpha) / denom[1];
            row[a] = (p1 / p0).ln();
        }
        weights.push(row);
    }
    let bias = (n1 as f64 / n0 as f64).ln();
    Ok(WeakLabelModel {
        weights,
        bias,
        smoothing_alpha,
        class_counts: [n0, n1],
    })
}

/// Scores every row of a vote matrix, preserving row order.
pub fn predict_batch(model: &WeakLabelModel, votes: &VoteMatrix) -> Result<Vec<f64>> {
    if votes.lf_count != model.lf_count() {
        return Err(Error::LengthMismatch {
            what: "vote matrix columns",
            expected: model.lf_count(),
            found: votes.lf_count,
        });
    }
    Ok(votes.rows.par_iter().map(|row| model.predict(row)).collect())
}

/// Seed size needed to estimate a Bernoulli rate to within `±max_error` at
/// the given normal quantile, using the worst case `p = 0.5`:
/// `ceil(z² · 0.25 / E²)`.
pub fn estimate_required_samples(max_error: f64, z_alpha: f64) -> Result<u64> {
    if !(max_error > 0.0 && max_error < 1.0) {
        return Err(Error::invalid(format!("max error must lie in (0, 1), got {max_error}")));
    }
    if !(z_alpha > 0.0 && z_alpha.is_finite()) {
        return Err(Error::invalid(format!("z must be positive, got {z_alpha}")));
    }
    let n = z_alpha * z_alpha * 0.25 / (max_error * max_error);
    // Snap values within rounding noise of an integer so a hair above it does not add one.
    let nearest = n.round();
    let n = if (n - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        n.ceil()
    };
    Ok(n as u64)
}

/// Rank-based (Mann–Whitney) AUC; tied scores contribute one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "AUC labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass {
            n0: n_neg as u64,
            n1: n_pos as u64,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mean_rank * pos_in_tie as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

pub fn evaluate_auc(model: &WeakLabelModel, held_out: &[SeedExample]) -> Result<f64> {
    let scores: Vec<f64> = held_out.iter().map(|ex| model.predict(&ex.votes)).collect();
    let labels: Vec<bool> = held_out.iter().map(|ex| ex.label).collect();
    roc_auc(&scores, &labels)
}

/// Pairwise Pearson correlation of LF votes (Positive = 1, Negative = 0)
/// over records where both LFs vote. `None` when undefined. Diagnostic only.
#[allow(clippy::needless_range_loop)]
pub fn pairwise_vote_correlation(votes: &VoteMatrix) -> Vec<Vec<Option<f64>>> {
    let m = votes.lf_count;
    let mut out = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let pairs: Vec<(f64, f64)> = votes
                .rows
                .iter()
                .filter_map(|r| match (r.0[i], r.0[j]) {
                    (Vote::Abstain, _) | (_, Vote::Abstain) => None,
                    (a, b) => Some((a.index() as f64, b.index() as f64)),
                })
                .collect();
            let corr = pearson(&pairs);
            out[i][j] = corr;
            out[j][i] = corr;
        }
    }
    out
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}
