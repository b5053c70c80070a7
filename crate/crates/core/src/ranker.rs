//! Listwise ranker trained with the ListNet softmax cross-entropy loss
//!
//! ```text
//! L = -(1/q) Σ_i Σ_j y_ij · log softmax(ŷ_i)_j
//! ```
//!
//! where the softmax spans the documents of one query group. The scorer is
//! either linear or a single rectifier hidden layer; gradients are analytic.
//!
//! Parameter layout:
//! - linear: `[w_0 .. w_{d-1}, b]`
//! - one hidden layer of width `h`: `[W1 (h × d, row-major), b1 (h), w2 (h), b2]`

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Engagement, EngagementLabelMap};
use crate::error::{Error, Result};
use crate::io;
use crate::lf_engine::{LfSpec, Vote, VoteMatrix};

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

/// One ranked document with both raw and relabeled targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub record_id: String,
    pub features: Vec<f64>,
    pub y_original: f64,
    pub y_effective: f64,
    /// Weak-labeler irrelevance probability.
    pub p: f64,
    pub engagement: Engagement,
    pub advertised: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub docs: Vec<RankedDoc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Original,
    Effective,
}

impl QueryGroup {
    pub fn labels(&self, source: LabelSource) -> Vec<f64> {
        self.docs
            .iter()
            .map(|d| match source {
                LabelSource::Original => d.y_original,
                LabelSource::Effective => d.y_effective,
            })
            .collect()
    }
}

pub fn doc_count(groups: &[QueryGroup]) -> usize {
    groups.iter().map(|g| g.docs.len()).sum()
}

/// Groups records by `query_id`. Each query's records must be contiguous,
/// so the flattened document order equals the record order. Null features
/// become 0.
pub fn build_groups(dataset: &Dataset, labels: &EngagementLabelMap, probabilities: &[f64]) -> Result<Vec<QueryGroup>> {
    if probabilities.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "probabilities",
            expected: dataset.len(),
            found: probabilities.len(),
        });
    }
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (record, &p) in dataset.records.iter().zip(probabilities) {
        let y = labels.label(record.engagement);
        let doc = RankedDoc {
            record_id: record.record_id.clone(),
            features: record.features.iter().map(|f| f.unwrap_or(0.0)).collect(),
            y_original: y,
            y_effective: y,
            p,
            engagement: record.engagement,
            advertised: record.advertised,
        };
        match groups.last_mut() {
            Some(g) if g.query_id == record.query_id => g.docs.push(doc),
            _ => {
                if !seen.insert(record.query_id.clone()) {
                    return Err(Error::invalid(format!(
                        "records of query `{}` are not contiguous",
                        record.query_id
                    )));
                }
                groups.push(QueryGroup {
                    query_id: record.query_id.clone(),
                    docs: vec![doc],
                });
            }
        }
    }
    Ok(groups)
}

#[derive(Serialize, Deserialize)]
struct DocRow {
    query_id: String,
    #[serde(flatten)]
    doc: RankedDoc,
}

pub fn groups_to_jsonl(groups: &[QueryGroup]) -> Result<Vec<u8>> {
    let rows: Vec<DocRow> = groups
        .iter()
        .flat_map(|g| {
            g.docs.iter().map(|d| DocRow {
                query_id: g.query_id.clone(),
                doc: d.clone(),
            })
        })
        .collect();
    io::to_jsonl(&rows)
}

/// Writes a relabeled dataset, one document per line.
pub fn write_groups(path: &Path, groups: &[QueryGroup]) -> Result<()> {
    io::write_atomic(path, &groups_to_jsonl(groups)?)
}

pub fn load_groups(path: &Path) -> Result<Vec<QueryGroup>> {
    let rows: Vec<(usize, DocRow)> = io::read_jsonl(path)?;
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut dim = None;
    for (line, row) in rows {
        let d = *dim.get_or_insert(row.doc.features.len());
        if row.doc.features.len() != d {
            return Err(Error::FeatureDimension {
                path: path.to_owned(),
                line,
                expected: d,
                found: row.doc.features.len(),
            });
        }
        match groups.last_mut() {
            Some(g) if g.query_id == row.query_id => g.docs.push(row.doc),
            _ => groups.push(QueryGroup {
                query_id: row.query_id,
                docs: vec![row.doc],
            }),
        }
    }
    Ok(groups)
}

/// Appends one feature per serveable LF: Positive → 1, Negative → 0,
/// Abstain → 0.5. `votes` must be aligned with the flattened documents.
pub fn augment_with_serveable_lfs(
    groups: &[QueryGroup],
    votes: &VoteMatrix,
    specs: &[LfSpec],
) -> Result<Vec<QueryGroup>> {
    if specs.len() != votes.lf_count {
        return Err(Error::LengthMismatch {
            what: "LF specs",
            expected: votes.lf_count,
            found: specs.len(),
        });
    }
    let n = doc_count(groups);
    if votes.len() != n {
        return Err(Error::LengthMismatch {
            what: "vote rows",
            expected: n,
            found: votes.len(),
        });
    }
    let serveable: Vec<usize> = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.serveable)
        .map(|(i, _)| i)
        .collect();
    let mut row = 0;
    let mut out = groups.to_vec();
    for group in &mut out {
        for doc in &mut group.docs {
            if votes.record_ids[row] != doc.record_id {
                return Err(Error::invalid(format!(
                    "vote row {row} is for `{}`, expected `{}`",
                    votes.record_ids[row], doc.record_id
                )));
            }
            for &lf in &serveable {
                doc.features.push(match votes.rows[row].0[lf] {
                    Vote::Positive => 1.0,
                    Vote::Negative => 0.0,
                    Vote::Abstain => 0.5,
                });
            }
            row += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// One rectifier hidden layer followed by a linear output unit.
    OneHiddenLayer {
        hidden_width: usize,
    },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::OneHiddenLayer {
            hidden_width: DEFAULT_HIDDEN_WIDTH,
        }
    }
}

impl Architecture {
    pub fn parameter_count(self, feature_dim: usize) -> usize {
        match self {
            Architecture::Linear => feature_dim + 1,
            Architecture::OneHiddenLayer { hidden_width: h } => h * feature_dim + 2 * h + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub parameters: Vec<f64>,
}

impl RankerModel {
    pub fn new(architecture: Architecture, feature_dim: usize, parameters: Vec<f64>) -> Result<Self> {
        let expected = architecture.parameter_count(feature_dim);
        if parameters.len() != expected {
            return Err(Error::LengthMismatch {
                what: "ranker parameters",
                expected,
                found: parameters.len(),
            });
        }
        Ok(RankerModel {
            architecture,
            feature_dim,
            parameters,
        })
    }

    pub fn zeros(architecture: Architecture, feature_dim: usize) -> Self {
        RankerModel {
            architecture,
            feature_dim,
            parameters: vec![0.0; architecture.parameter_count(feature_dim)],
        }
    }

    /// Uniform initialization in `[-s, s]` with `s = 1/√fan_in` per layer.
    pub fn init(architecture: Architecture, feature_dim: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |fan_in: usize, n: usize, out: &mut Vec<f64>| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            out.extend((0..n).map(|_| rng.random_range(-s..=s)));
        };
        let mut parameters = Vec::with_capacity(architecture.parameter_count(feature_dim));
        match architecture {
            Architecture::Linear => draw(feature_dim, feature_dim + 1, &mut parameters),
            Architecture::OneHiddenLayer { hidden_width: h } => {
                draw(feature_dim, h * feature_dim + h, &mut parameters);
                draw(h, h + 1, &mut parameters);
            }
        }
        RankerModel {
            architecture,
            feature_dim,
            parameters,
        }
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim {
            return Err(Error::LengthMismatch {
                what: "ranker input",
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        Ok(self.forward(features))
    }

    fn forward(&self, x: &[f64]) -> f64 {
        let d = self.feature_dim;
        let p = &self.parameters;
        match self.architecture {
            Architecture::Linear => dot(&p[..d], x) + p[d],
            Architecture::OneHiddenLayer { hidden_width: h } => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut s = b2[0];
                for k in 0..h {
                    let z = dot(&w1[k * d..(k + 1) * d], x) + b1[k];
                    if z > 0.0 {
                        s += w2[k] * z;
                    }
                }
                s
            }
        }
    }

    /// Adds `upstream · ∂score/∂θ` into `grad`.
    fn backward(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        let d = self.feature_dim;
        match self.architecture {
            Architecture::Linear => {
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += upstream * xi;
                }
                grad[d] += upstream;
            }
            Architecture::OneHiddenLayer { hidden_width: h } => {
                let p = &self.parameters;
                let w1 = &p[..h * d];
                let b1 = &p[h * d..h * d + h];
                let w2 = &p[h * d + h..h * d + 2 * h];
                let (g_w1, rest) = grad.split_at_mut(h * d);
                let (g_b1, rest) = rest.split_at_mut(h);
                let (g_w2, g_b2) = rest.split_at_mut(h);
                for k in 0..h {
                    let z = dot(&w1[k * d..(k + 1) * d], x) + b1[k];
                    if z > 0.0 {
                        g_w2[k] += upstream * z;
                        let dz = upstream * w2[k];
                        for (g, xi) in g_w1[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += dz * xi;
                        }
                        g_b1[k] += dz;
                    }
                }
                g_b2[0] += upstream;
            }
        }
    }

    pub fn scores(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        group.docs.iter().map(|d| self.score(&d.features)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RankerModel = io::read_json(path)?;
        RankerModel::new(m.architecture, m.feature_dim, m.parameters)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable log-softmax over one group's scores.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One group's un-normalized contribution `-Σ_j y_j log softmax(ŷ)_j`.
pub fn group_listnet_loss(scores: &[f64], targets: &[f64]) -> f64 {
    let log_p = log_softmax(scores);
    -targets.iter().zip(&log_p).map(|(y, lp)| y * lp).sum::<f64>()
}

/// Two-term mixture form of the weakly supervised loss for one group:
/// `-Σ_j (1 - p_j) y_j log s_j - Σ_j p_j y_p log s_j`. Equal to
/// [`group_listnet_loss`] on the relabeled targets `(1 - p) y + p y_p`.
pub fn mixture_listnet_loss(scores: &[f64], y: &[f64], p: &[f64], y_p: f64) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_s: Vec<f64> = scores.iter().map(|s| ((s - max).exp() / denom).ln()).collect();
    let observed: f64 = (0..scores.len()).map(|j| (1.0 - p[j]) * y[j] * log_s[j]).sum();
    let false_positive: f64 = (0..scores.len()).map(|j| p[j] * y_p * log_s[j]).sum();
    -observed - false_positive
}

fn check_groups(groups: &[QueryGroup], model: &RankerModel) -> Result<()> {
    for g in groups {
        if g.docs.is_empty() {
            return Err(Error::invalid(format!("query group `{}` is empty", g.query_id)));
        }
        if let Some(d) = g.docs.iter().find(|d| d.features.len() != model.feature_dim) {
            return Err(Error::LengthMismatch {
                what: "document features",
                expected: model.feature_dim,
                found: d.features.len(),
            });
        }
    }
    Ok(())
}

/// Per-group targets, optionally rescaled to sum to one.
fn targets(group: &QueryGroup, source: LabelSource, normalize: bool) -> Vec<f64> {
    let mut y = group.labels(source);
    if normalize {
        let total: f64 = y.iter().sum();
        if total > 0.0 {
            y.iter_mut().for_each(|v| *v /= total);
        }
    }
    y
}

fn mean_loss(groups: &[&QueryGroup], model: &RankerModel, source: LabelSource, normalize: bool) -> f64 {
    let total: f64 = groups
        .iter()
        .map(|g| {
            let scores: Vec<f64> = g.docs.iter().map(|d| model.forward(&d.features)).collect();
            group_listnet_loss(&scores, &targets(g, source, normalize))
        })
        .sum();
    total / groups.len() as f64
}

fn group_gradient(group: &QueryGroup, model: &RankerModel, targets: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; model.parameters.len()];
    let scores: Vec<f64> = group.docs.iter().map(|d| model.forward(&d.features)).collect();
    let probs = softmax(&scores);
    let total: f64 = targets.iter().sum();
    for ((doc, y), s) in group.docs.iter().zip(targets).zip(&probs) {
        let upstream = total * s - y;
        if upstream != 0.0 {
            model.backward(&doc.features, upstream, &mut grad);
        }
    }
    grad
}

/// Gradient of the mean loss; groups are reduced in order for determinism.
fn mean_gradient(groups: &[&QueryGroup], model: &RankerModel, source: LabelSource, normalize: bool) -> Vec<f64> {
    let per_group: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| group_gradient(g, model, &targets(g, source, normalize)))
        .collect();
    let mut grad = vec![0.0; model.parameters.len()];
    for g in &per_group {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let q = groups.len() as f64;
    grad.iter_mut().for_each(|v| *v /= q);
    grad
}

/// Mean ListNet loss over `groups`.
pub fn listnet_loss(groups: &[QueryGroup], model: &RankerModel, source: LabelSource) -> Result<f64> {
    check_groups(groups, model)?;
    if groups.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&QueryGroup> = groups.iter().collect();
    Ok(mean_loss(&refs, model, source, false))
}

/// Analytic gradient of [`listnet_loss`] with respect to all parameters.
pub fn loss_gradient(groups: &[QueryGroup], model: &RankerModel, source: LabelSource) -> Result<Vec<f64>> {
    check_groups(groups, model)?;
    if groups.is_empty() {
        return Ok(vec![0.0; model.parameters.len()]);
    }
    let refs: Vec<&QueryGroup> = groups.iter().collect();
    Ok(mean_gradient(&refs, model, source, false))
}

fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(default)]
    pub architecture: Architecture,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size_groups: usize,
    pub seed: u64,
    pub label_source: LabelSource,
    /// Rescale each group's targets to sum to one before the loss.
    #[serde(default)]
    pub normalize_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::default(),
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 15,
            batch_size_groups: default_batch(),
            seed: 7,
            label_source: LabelSource::Effective,
            normalize_labels: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size_groups == 0 {
            return Err(Error::Config("batch_size_groups must be >= 1".into()));
        }
        if let Architecture::OneHiddenLayer { hidden_width: 0 } = self.architecture {
            return Err(Error::Config("hidden_width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Mini-batch gradient descent (with optional momentum) over whole query
/// groups. Returns the model and the training loss before the first epoch
/// and after each one.
pub fn train_logged(
    groups: &[QueryGroup],
    config: &TrainConfig,
    initial: Option<RankerModel>,
) -> Result<(RankerModel, Vec<EpochLoss>)> {
    config.validate()?;
    let first = groups
        .first()
        .and_then(|g| g.docs.first())
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = match initial {
        Some(m) => m,
        None => RankerModel::init(config.architecture, first.features.len(), &mut rng),
    };
    check_groups(groups, &model)?;

    let all: Vec<&QueryGroup> = groups.iter().collect();
    let (source, normalize) = (config.label_source, config.normalize_labels);
    let initial_loss = mean_loss(&all, &model, source, normalize);
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            value: initial_loss,
        });
    }
    let mut log = vec![EpochLoss {
        epoch: 0,
        loss: initial_loss,
    }];

    let mut velocity = vec![0.0; model.parameters.len()];
    let mut order: Vec<usize> = (0..groups.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(config.batch_size_groups).enumerate() {
            let refs: Vec<&QueryGroup> = chunk.iter().map(|&i| &groups[i]).collect();
            let grad = mean_gradient(&refs, &model, source, normalize);
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    value: *bad,
                });
            }
            for ((theta, v), g) in model.parameters.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *theta -= config.learning_rate * *v;
            }
        }
        let loss = mean_loss(&all, &model, source, normalize);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size_groups),
                value: loss,
            });
        }
        log.push(EpochLoss { epoch, loss });
    }
    Ok((model, log))
}

pub fn train(groups: &[QueryGroup], config: &TrainConfig, initial: Option<RankerModel>) -> Result<RankerModel> {
    train_logged(groups, config, initial).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(id: &str, features: Vec<f64>, y: f64) -> RankedDoc {
        RankedDoc {
            record_id: id.into(),
            features,
            y_original: y,
            y_effective: y,
            p: 0.0,
            engagement: Engagement::View,
            advertised: false,
        }
    }

    fn group(id: &str, docs: Vec<RankedDoc>) -> QueryGroup {
        QueryGroup {
            query_id: id.into(),
            docs,
        }
    }

    fn rng_fixture(seed: u64, n_groups: usize, d: usize) -> Vec<QueryGroup> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_groups)
            .map(|g| {
                let n = rng.random_range(1..6);
                group(
                    &format!("q{g}"),
                    (0..n)
                        .map(|j| {
                            doc(
                                &format!("q{g}d{j}"),
                                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                                rng.random_range(0..4) as f64,
                            )
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn linear_scores() {
        let zero = RankerModel::zeros(Architecture::Linear, 3);
        assert_eq!(zero.score(&[1.0, -2.0, 5.0]).unwrap(), 0.0);
        let m = RankerModel::new(Architecture::Linear, 2, vec![1.0, 2.0, 0.0]).unwrap();
        assert_eq!(m.score(&[3.0, 4.0]).unwrap(), 11.0);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn hidden_layer_forward_by_hand() {
        // W1 = [[1, -1], [0.5, 2]], b1 = [0, -1], w2 = [2, -3], b2 = 0.25
        // x = [1, 2]: z = [-1, 3.5] → relu [0, 3.5] → 0·2 + 3.5·(−3) + 0.25 = −10.25
        let m = RankerModel::new(
            Architecture::OneHiddenLayer { hidden_width: 2 },
            2,
            vec![1.0, -1.0, 0.5, 2.0, 0.0, -1.0, 2.0, -3.0, 0.25],
        )
        .unwrap();
        assert_eq!(m.score(&[1.0, 2.0]).unwrap(), -10.25);
        assert!(RankerModel::new(Architecture::OneHiddenLayer { hidden_width: 2 }, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn loss_special_cases() {
        let m = RankerModel::new(Architecture::Linear, 1, vec![1.0, 0.0]).unwrap();
        let single = vec![group("a", vec![doc("a0", vec![3.0], 5.0)])];
        assert_eq!(listnet_loss(&single, &m, LabelSource::Original).unwrap(), 0.0);
        assert!(loss_gradient(&single, &m, LabelSource::Original)
            .unwrap()
            .iter()
            .all(|g| *g == 0.0));

        let zeros = vec![group("a", vec![doc("a0", vec![1.0], 0.0), doc("a1", vec![-1.0], 0.0)])];
        assert_eq!(listnet_loss(&zeros, &m, LabelSource::Original).unwrap(), 0.0);
        assert!(loss_gradient(&zeros, &m, LabelSource::Original)
            .unwrap()
            .iter()
            .all(|g| *g == 0.0));
    }

    #[test]
    fn three_doc_loss_by_direct_formula() {
        // Scores [1, 0, -1] via identity weights; y = [2, 1, 0].
        let m = RankerModel::new(Architecture::Linear, 1, vec![1.0, 0.0]).unwrap();
        let g = vec![group(
            "a",
            vec![
                doc("a0", vec![1.0], 2.0),
                doc("a1", vec![0.0], 1.0),
                doc("a2", vec![-1.0], 0.0),
            ],
        )];
        let z = 1f64.exp() + 1.0 + (-1f64).exp();
        let want = -(2.0 * (1f64.exp() / z).ln() + 1.0 * (1.0 / z).ln());
        let got = listnet_loss(&g, &m, LabelSource::Original).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn softmax_and_shift_invariance() {
        let g = rng_fixture(3, 30, 4);
        let m = RankerModel::init(Architecture::default(), 4, &mut ChaCha8Rng::seed_from_u64(1));
        for grp in &g {
            let s = m.scores(grp).unwrap();
            assert!((softmax(&s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let y = grp.labels(LabelSource::Original);
            let shifted: Vec<f64> = s.iter().map(|v| v + 17.5).collect();
            assert!((group_listnet_loss(&s, &y) - group_listnet_loss(&shifted, &y)).abs() < 1e-9);
            let scaled: Vec<f64> = y.iter().map(|v| v * 2.5).collect();
            assert!((group_listnet_loss(&s, &scaled) - 2.5 * group_listnet_loss(&s, &y)).abs() < 1e-9);
        }
    }

    pub(crate) fn finite_difference(groups: &[QueryGroup], model: &RankerModel, h: f64) -> Vec<f64> {
        (0..model.parameters.len())
            .map(|i| {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.parameters[i] += h;
                minus.parameters[i] -= h;
                let lp = listnet_loss(groups, &plus, LabelSource::Original).unwrap();
                let lm = listnet_loss(groups, &minus, LabelSource::Original).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for arch in [Architecture::Linear, Architecture::OneHiddenLayer { hidden_width: 5 }] {
            let groups = rng_fixture(11, 6, 3);
            let m = RankerModel::init(arch, 3, &mut ChaCha8Rng::seed_from_u64(5));
            let analytic = loss_gradient(&groups, &m, LabelSource::Original).unwrap();
            let numeric = finite_difference(&groups, &m, 1e-5);
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-5, "{arch:?}: {}", diff / norm);
        }
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let groups = rng_fixture(2, 5, 2);
        let init = RankerModel::init(Architecture::Linear, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&groups, &cfg, Some(init.clone())).unwrap(), init);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let groups = rng_fixture(4, 40, 3);
        let cfg = TrainConfig {
            architecture: Architecture::Linear,
            learning_rate: 0.01,
            momentum: 0.0,
            epochs: 10,
            batch_size_groups: 8,
            seed: 42,
            label_source: LabelSource::Original,
            normalize_labels: false,
        };
        let (a, log) = train_logged(&groups, &cfg, None).unwrap();
        let b = train(&groups, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert!(log.last().unwrap().loss <= log[0].loss);
        assert_eq!(log.len(), 11);
    }

    #[test]
    fn separable_pairs_are_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let groups: Vec<QueryGroup> = (0..200)
            .map(|g| {
                let pos: Vec<f64> = vec![rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)];
                let neg: Vec<f64> = vec![rng.random_range(-1.0..-0.2), rng.random_range(-1.0..1.0)];
                group(&format!("q{g}"), vec![doc("n", neg, 0.0), doc("p", pos, 1.0)])
            })
            .collect();
        let cfg = TrainConfig {
            architecture: Architecture::Linear,
            learning_rate: 0.5,
            momentum: 0.0,
            epochs: 20,
            batch_size_groups: 10,
            seed: 3,
            label_source: LabelSource::Original,
            normalize_labels: false,
        };
        let m = train(&groups, &cfg, None).unwrap();
        let correct = groups
            .iter()
            .filter(|g| {
                let s = m.scores(g).unwrap();
                s[1] > s[0]
            })
            .count();
        assert!(correct as f64 >= 0.95 * groups.len() as f64, "{correct}");
    }

    #[test]
    fn p_zero_original_and_effective_train_identically() {
        let groups = rng_fixture(8, 20, 3);
        let mut cfg = TrainConfig {
            epochs: 3,
            label_source: LabelSource::Original,
            ..TrainConfig::default()
        };
        let a = train(&groups, &cfg, None).unwrap();
        cfg.label_source = LabelSource::Effective;
        let b = train(&groups, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergent_training_aborts() {
        let groups = vec![group(
            "a",
            vec![doc("a0", vec![1e200], 1.0), doc("a1", vec![-1e200], 0.0)],
        )];
        let cfg = TrainConfig {
            architecture: Architecture::Linear,
            learning_rate: 1e200,
            momentum: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&groups, &cfg, None), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn serveable_augmentation() {
        use crate::lf_engine::{LfKind, VoteVector};
        let groups = vec![
            group("a", vec![doc("a0", vec![0.1], 1.0), doc("a1", vec![0.2], 0.0)]),
            group("b", vec![doc("b0", vec![0.3], 1.0)]),
        ];
        let specs = vec![
            LfSpec {
                name: "served".into(),
                kind: LfKind::TaxonomyMatch,
                serveable: true,
            },
            LfSpec {
                name: "offline".into(),
                kind: LfKind::OrdinalDelta { max_delta: 1 },
                serveable: false,
            },
        ];
        let votes = VoteMatrix::new(
            2,
            vec!["a0".into(), "a1".into(), "b0".into()],
            vec![
                VoteVector(vec![Vote::Positive, Vote::Negative]),
                VoteVector(vec![Vote::Abstain, Vote::Positive]),
                VoteVector(vec![Vote::Negative, Vote::Abstain]),
            ],
        )
        .unwrap();
        let out = augment_with_serveable_lfs(&groups, &votes, &specs).unwrap();
        let col: Vec<f64> = out.iter().flat_map(|g| g.docs.iter().map(|d| d.features[1])).collect();
        assert_eq!(col, vec![1.0, 0.5, 0.0]);
        assert!(out.iter().all(|g| g.docs.iter().all(|d| d.features.len() == 2)));

        let none: Vec<LfSpec> = specs
            .iter()
            .cloned()
            .map(|s| LfSpec { serveable: false, ..s })
            .collect();
        assert_eq!(augment_with_serveable_lfs(&groups, &votes, &none).unwrap(), groups);

        let short = VoteMatrix::new(2, vec!["a0".into()], vec![VoteVector(vec![Vote::Positive; 2])]).unwrap();
        assert!(augment_with_serveable_lfs(&groups, &short, &specs).is_err());
    }

    #[test]
    fn group_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        let groups = rng_fixture(5, 7, 3);
        write_groups(&path, &groups).unwrap();
        assert_eq!(load_groups(&path).unwrap(), groups);
    }
}
