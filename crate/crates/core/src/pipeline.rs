//! Stage orchestration over files.
//!
//! One TOML config drives every stage. Stages talk only through files: the
//! inputs named under `[paths]` and fixed output names under `paths.out_dir`.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    load_labels, load_records, load_taxonomy, write_labels, write_records, write_taxonomy, Dataset, DatasetSchema,
    SeedExample, Taxonomy, TruthRow,
};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, group_quantiles, EvalReport, GainKind};
use crate::io::{write_atomic, write_json, write_jsonl};
use crate::lf_engine::{compute_stats, eval_all, lf_config_to_toml, load_lf_config, LfSpec, LfStats, VoteMatrix};
use crate::ranker::{
    augment_with_serveable_lfs, build_groups, load_groups, train_logged, write_groups, RankerModel, TrainConfig,
};
use crate::relabeler::{relabel_dataset, PolicyKind, RelabelPolicy};
use crate::synthgen::{generate, SynthConfig};
use crate::weak_labeler::{
    estimate_required_samples, fit, pairwise_vote_correlation, predict_batch, roc_auc, WeakLabelModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub schema: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    pub lf_config: PathBuf,
    pub seed_records: PathBuf,
    pub seed_labels: PathBuf,
    pub train_records: PathBuf,
    pub eval_records: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub alpha: f64,
    /// Share of the seed set held out for AUC.
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            alpha: 1.0,
            test_fraction: 0.2,
            split_seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelabelConfig {
    pub policy: PolicyKind,
    /// Append serveable LF votes as ranker features.
    pub augment_serveable: bool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig {
            policy: PolicyKind::R1,
            augment_serveable: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub gain: GainKind,
    pub quantiles: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            gain: GainKind::Linear,
            quantiles: vec![0.1, 0.25, 0.5, 0.75, 0.9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSizeConfig {
    pub max_error: f64,
    pub z: f64,
}

impl Default for SampleSizeConfig {
    fn default() -> Self {
        SampleSizeConfig {
            max_error: 0.05,
            z: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub labeler: LabelerConfig,
    #[serde(default)]
    pub relabel: RelabelConfig,
    #[serde(default)]
    pub ranker: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sample_size: SampleSizeConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl PipelineConfig {
    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.schema,
            &mut p.lf_config,
            &mut p.seed_records,
            &mut p.seed_labels,
            &mut p.train_records,
            &mut p.eval_records,
            &mut p.out_dir,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(t) = p.taxonomy.as_mut().filter(|t| t.is_relative()) {
            *t = base.join(&*t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.labeler.alpha >= 0.0 && self.labeler.alpha.is_finite()) {
            return Err(Error::Config("labeler.alpha must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.labeler.test_fraction) {
            return Err(Error::Config("labeler.test_fraction must lie in [0, 1)".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be >= 1".into()));
        }
        if let Some(q) = self.eval.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::Config(format!("eval.quantiles: {q} outside [0, 1]")));
        }
        self.ranker.validate()
    }

    pub fn outputs(&self) -> Outputs {
        let dir = &self.paths.out_dir;
        let f = |name: &str| dir.join(name);
        Outputs {
            seed_votes: f("seed_votes.jsonl"),
            train_votes: f("train_votes.jsonl"),
            eval_votes: f("eval_votes.jsonl"),
            lf_stats: f("lf_stats.json"),
            labeler_model: f("labeler_model.json"),
            labeler_report: f("labeler_report.json"),
            train_relabeled: f("train_relabeled.jsonl"),
            eval_relabeled: f("eval_relabeled.jsonl"),
            ranker_model: f("ranker_model.json"),
            training_log: f("training_log.jsonl"),
            eval_report: f("eval_report.json"),
            eval_metrics: f("eval_metrics.jsonl"),
            train_truth: f("train_truth.jsonl"),
            eval_truth: f("eval_truth.jsonl"),
        }
    }
}

/// Fixed output locations under `out_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    pub seed_votes: PathBuf,
    pub train_votes: PathBuf,
    pub eval_votes: PathBuf,
    pub lf_stats: PathBuf,
    pub labeler_model: PathBuf,
    pub labeler_report: PathBuf,
    pub train_relabeled: PathBuf,
    pub eval_relabeled: PathBuf,
    pub ranker_model: PathBuf,
    pub training_log: PathBuf,
    pub eval_report: PathBuf,
    pub eval_metrics: PathBuf,
    /// Planted labels written by `synth`.
    pub train_truth: PathBuf,
    pub eval_truth: PathBuf,
}

fn staged<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

fn load_specs(config: &PipelineConfig, schema: &DatasetSchema) -> Result<Vec<LfSpec>> {
    let specs = load_lf_config(&config.paths.lf_config)?;
    if specs.len() != schema.lf_count {
        return Err(Error::LengthMismatch {
            what: "LF config",
            expected: schema.lf_count,
            found: specs.len(),
        });
    }
    Ok(specs)
}

fn load_taxonomy_for(config: &PipelineConfig, specs: &[LfSpec]) -> Result<Taxonomy> {
    match &config.paths.taxonomy {
        Some(path) => load_taxonomy(path),
        None => match specs.iter().find(|s| s.needs_taxonomy()) {
            Some(s) => Err(Error::Config(format!(
                "LF `{}` needs a taxonomy but paths.taxonomy is not set",
                s.name
            ))),
            None => Ok(Taxonomy::default()),
        },
    }
}

/// Labels (`true` = irrelevant) in the order of `record_ids`.
fn aligned_labels(record_ids: &[String], rows: &[TruthRow]) -> Result<Vec<bool>> {
    let mut by_id = BTreeMap::new();
    for row in rows {
        if by_id.insert(row.record_id.as_str(), row.label == 1).is_some() {
            return Err(Error::DuplicateRecordId(row.record_id.clone()));
        }
    }
    record_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("no seed label for record `{id}`")))
        })
        .collect()
}

fn check_alignment(votes: &VoteMatrix, dataset: &Dataset, what: &str) -> Result<()> {
    if votes.record_ids != dataset.record_ids() {
        return Err(Error::invalid(format!(
            "{what} votes are not aligned with the {what} records; rerun eval-lfs"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct LfStatsEntry<'a> {
    name: &'a str,
    seed: &'a LfStats,
    train: &'a LfStats,
    eval: &'a LfStats,
}

#[derive(Serialize)]
struct LfStatsReport<'a> {
    n_seed: usize,
    n_train: usize,
    n_eval: usize,
    lfs: Vec<LfStatsEntry<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalLfsSummary {
    pub rows: [usize; 3],
    pub seed_stats: Vec<LfStats>,
}

/// Evaluates every LF over the seed, train and eval records.
pub fn cmd_eval_lfs(config: &PipelineConfig) -> Result<EvalLfsSummary> {
    staged("eval-lfs", || {
        let schema = DatasetSchema::load(&config.paths.schema)?;
        let specs = load_specs(config, &schema)?;
        let taxonomy = load_taxonomy_for(config, &specs)?;
        let out = config.outputs();

        let seed = load_records(&config.paths.seed_records, &schema)?;
        let train = load_records(&config.paths.train_records, &schema)?;
        let eval = load_records(&config.paths.eval_records, &schema)?;
        let seed_labels = aligned_labels(&seed.record_ids(), &load_labels(&config.paths.seed_labels)?)?;

        let votes: Vec<VoteMatrix> = [&seed, &train, &eval]
            .into_iter()
            .map(|d| eval_all(d, &specs, &taxonomy))
            .collect::<Result<_>>()?;
        let seed_stats = compute_stats(&votes[0], Some(&seed_labels))?;
        let train_stats = compute_stats(&votes[1], None)?;
        let eval_stats = compute_stats(&votes[2], None)?;

        votes[0].write(&out.seed_votes)?;
        votes[1].write(&out.train_votes)?;
        votes[2].write(&out.eval_votes)?;
        let report = LfStatsReport {
            n_seed: seed.len(),
            n_train: train.len(),
            n_eval: eval.len(),
            lfs: specs
                .iter()
                .enumerate()
                .map(|(i, s)| LfStatsEntry {
                    name: &s.name,
                    seed: &seed_stats[i],
                    train: &train_stats[i],
                    eval: &eval_stats[i],
                })
                .collect(),
        };
        write_json(&out.lf_stats, &report)?;
        Ok(EvalLfsSummary {
            rows: [seed.len(), train.len(), eval.len()],
            seed_stats,
        })
    })
}

#[derive(Serialize)]
struct LfWeights<'a> {
    name: &'a str,
    negative: f64,
    positive: f64,
    abstain: f64,
}

#[derive(Serialize)]
struct LabelerReport<'a> {
    n_train: usize,
    n_test: usize,
    held_out_auc: Option<f64>,
    class_counts: [u64; 2],
    bias: f64,
    weights: Vec<LfWeights<'a>>,
    /// Pearson correlation of vote indicators (Positive = 1, Negative = 0)
    /// over seed rows where both LFs voted.
    vote_correlation: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLabelerSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub held_out_auc: Option<f64>,
}

/// Seeded shuffle, then the first `round(n · test_fraction)` rows are held out.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let train = idx.split_off(n_test);
    (train, idx)
}

/// Fits the label model on the seed votes and scores the held-out part.
pub fn cmd_train_labeler(config: &PipelineConfig) -> Result<TrainLabelerSummary> {
    staged("train-labeler", || {
        let schema = DatasetSchema::load(&config.paths.schema)?;
        let specs = load_specs(config, &schema)?;
        let out = config.outputs();
        let votes = VoteMatrix::load(&out.seed_votes, schema.lf_count)?;
        let labels = aligned_labels(&votes.record_ids, &load_labels(&config.paths.seed_labels)?)?;
        let examples: Vec<SeedExample> = votes
            .rows
            .iter()
            .zip(&labels)
            .map(|(v, &label)| SeedExample {
                votes: v.clone(),
                label,
            })
            .collect();

        let (train_idx, test_idx) =
            split_indices(examples.len(), config.labeler.test_fraction, config.labeler.split_seed);
        let train: Vec<SeedExample> = train_idx.iter().map(|&i| examples[i].clone()).collect();
        let model = fit(&train, config.labeler.alpha)?;
        let held_out_auc = if test_idx.is_empty() {
            None
        } else {
            let scores: Vec<f64> = test_idx.iter().map(|&i| model.predict(&examples[i].votes)).collect();
            let y: Vec<bool> = test_idx.iter().map(|&i| examples[i].label).collect();
            Some(roc_auc(&scores, &y)?)
        };

        model.write(&out.labeler_model)?;
        let report = LabelerReport {
            n_train: train.len(),
            n_test: test_idx.len(),
            held_out_auc,
            class_counts: model.class_counts(),
            bias: model.bias(),
            weights: specs
                .iter()
                .zip(model.weights())
                .map(|(s, w)| LfWeights {
                    name: &s.name,
                    negative: w[0],
                    positive: w[1],
                    abstain: w[2],
                })
                .collect(),
            vote_correlation: pairwise_vote_correlation(&votes),
        };
        write_json(&out.labeler_report, &report)?;
        Ok(TrainLabelerSummary {
            n_train: train.len(),
            n_test: test_idx.len(),
            held_out_auc,
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelabelSummary {
    pub train_docs: usize,
    pub eval_docs: usize,
    pub mean_p_train: f64,
}

/// Scores train and eval records with the label model and rewrites targets.
pub fn cmd_relabel(config: &PipelineConfig) -> Result<RelabelSummary> {
    staged("relabel", || {
        let schema = DatasetSchema::load(&config.paths.schema)?;
        let specs = load_specs(config, &schema)?;
        let out = config.outputs();
        let model = WeakLabelModel::load(&out.labeler_model)?;
        let policy = RelabelPolicy::new(config.relabel.policy, schema.engagement_labels.dismiss());

        let mut sizes = Vec::new();
        let mut mean_p = 0.0;
        for (records, votes_path, dest) in [
            (&config.paths.train_records, &out.train_votes, &out.train_relabeled),
            (&config.paths.eval_records, &out.eval_votes, &out.eval_relabeled),
        ] {
            let dataset = load_records(records, &schema)?;
            let votes = VoteMatrix::load(votes_path, schema.lf_count)?;
            check_alignment(&votes, &dataset, if sizes.is_empty() { "train" } else { "eval" })?;
            let p = predict_batch(&model, &votes)?;
            let mut groups = build_groups(&dataset, &schema.engagement_labels, &p)?;
            if config.relabel.augment_serveable {
                groups = augment_with_serveable_lfs(&groups, &votes, &specs)?;
            }
            let relabeled = relabel_dataset(&groups, &p, &policy)?;
            write_groups(dest, &relabeled)?;
            if sizes.is_empty() && !p.is_empty() {
                mean_p = p.iter().sum::<f64>() / p.len() as f64;
            }
            sizes.push(dataset.len());
        }
        Ok(RelabelSummary {
            train_docs: sizes[0],
            eval_docs: sizes[1],
            mean_p_train: mean_p,
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRankerSummary {
    pub groups: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn cmd_train_ranker(config: &PipelineConfig) -> Result<TrainRankerSummary> {
    staged("train-ranker", || {
        let out = config.outputs();
        let groups = load_groups(&out.train_relabeled)?;
        let (model, log) = train_logged(&groups, &config.ranker, None)?;
        model.write(&out.ranker_model)?;
        write_jsonl(&out.training_log, &log)?;
        Ok(TrainRankerSummary {
            groups: groups.len(),
            initial_loss: log[0].loss,
            final_loss: log[log.len() - 1].loss,
        })
    })
}

pub fn cmd_evaluate(config: &PipelineConfig) -> Result<EvalReport> {
    staged("evaluate", || {
        let out = config.outputs();
        let groups = load_groups(&out.eval_relabeled)?;
        let model = RankerModel::load(&out.ranker_model)?;
        let mut report = evaluate(&groups, &model, config.eval.k, config.eval.gain)?;
        report.per_engagement_quantiles = group_quantiles(&groups, &config.eval.quantiles)?;
        report.write(&out.eval_report, &out.eval_metrics)?;
        Ok(report)
    })
}

pub fn cmd_sample_size(max_error: f64, z: f64) -> Result<u64> {
    staged("sample-size", || estimate_required_samples(max_error, z))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub seed: usize,
    pub train: usize,
    pub eval: usize,
}

/// Generates a corpus into the configured input paths, with planted labels
/// for train and eval next to the other outputs.
pub fn cmd_synth(config: &PipelineConfig) -> Result<SynthSummary> {
    staged("synth", || {
        let corpus = generate(&config.synth)?;
        let p = &config.paths;
        let out = config.outputs();
        if corpus.lf_specs.iter().any(LfSpec::needs_taxonomy) && p.taxonomy.is_none() {
            return Err(Error::Config(
                "the synthetic LF set needs a taxonomy but paths.taxonomy is not set".into(),
            ));
        }
        corpus.schema.write(&p.schema)?;
        if let Some(t) = &p.taxonomy {
            write_taxonomy(t, &corpus.taxonomy)?;
        }
        write_atomic(&p.lf_config, lf_config_to_toml(&corpus.lf_specs)?.as_bytes())?;
        write_records(&p.seed_records, &corpus.seed)?;
        write_labels(&p.seed_labels, &corpus.seed_labels)?;
        write_records(&p.train_records, &corpus.train)?;
        write_records(&p.eval_records, &corpus.eval)?;
        write_labels(&out.train_truth, &corpus.train_truth)?;
        write_labels(&out.eval_truth, &corpus.eval_truth)?;
        Ok(SynthSummary {
            seed: corpus.seed.len(),
            train: corpus.train.len(),
            eval: corpus.eval.len(),
        })
    })
}

/// synth → eval-lfs → train-labeler → relabel → train-ranker → evaluate.
pub fn run_all(config: &PipelineConfig) -> Result<EvalReport> {
    cmd_synth(config)?;
    cmd_eval_lfs(config)?;
    cmd_train_labeler(config)?;
    cmd_relabel(config)?;
    cmd_train_ranker(config)?;
    cmd_evaluate(config)
}
