use std::path::Path;

use weakrank::data_model::{write_labels, TruthRow};
use weakrank::lf_engine::VoteMatrix;
use weakrank::pipeline::*;
use weakrank::ranker::{load_groups, Architecture, RankerModel};
use weakrank::relabeler::PolicyKind;
use weakrank::weak_labeler::WeakLabelModel;

const CONFIG: &str = r#"
[paths]
schema = "data/schema.json"
taxonomy = "data/taxonomy.tsv"
lf_config = "data/lfs.toml"
seed_records = "data/seed.jsonl"
seed_labels = "data/seed_labels.jsonl"
train_records = "data/train.jsonl"
eval_records = "data/eval.jsonl"
out_dir = "out"

[ranker]
epochs = 4

[synth]
n_queries = 60
docs_per_query = 6
seed_queries = 150
"#;

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig::parse(CONFIG, dir).unwrap()
}

#[test]
fn full_run_produces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let report = run_all(&cfg).unwrap();
    assert_eq!(report.n_queries, 12);
    for v in [report.ndcg_original, report.ndcg_effective, report.ndcg_weak] {
        assert!((0.0..=1.0).contains(&v));
    }
    let out = cfg.outputs();
    for path in [
        &out.seed_votes,
        &out.train_votes,
        &out.eval_votes,
        &out.lf_stats,
        &out.labeler_model,
        &out.labeler_report,
        &out.train_relabeled,
        &out.eval_relabeled,
        &out.ranker_model,
        &out.training_log,
        &out.eval_report,
        &out.eval_metrics,
    ] {
        assert!(path.is_file(), "{}", path.display());
        assert!(!path.with_extension("jsonl.tmp").exists());
    }
    let votes = VoteMatrix::load(&out.train_votes, 10).unwrap();
    assert_eq!(votes.len(), 48 * 6);
    let log = std::fs::read_to_string(&out.training_log).unwrap();
    assert_eq!(log.lines().count(), 5);
    // One serveable LF is appended as a feature.
    let model = RankerModel::load(&out.ranker_model).unwrap();
    assert_eq!(model.feature_dim, 10);
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_all(&cfg).unwrap();
    let out = cfg.outputs();
    let before: Vec<Vec<u8>> = [
        &out.labeler_model,
        &out.train_relabeled,
        &out.ranker_model,
        &out.eval_report,
    ]
    .iter()
    .map(|p| std::fs::read(p).unwrap())
    .collect();
    cmd_train_labeler(&cfg).unwrap();
    cmd_relabel(&cfg).unwrap();
    cmd_train_ranker(&cfg).unwrap();
    cmd_evaluate(&cfg).unwrap();
    let after: Vec<Vec<u8>> = [
        &out.labeler_model,
        &out.train_relabeled,
        &out.ranker_model,
        &out.eval_report,
    ]
    .iter()
    .map(|p| std::fs::read(p).unwrap())
    .collect();
    assert_eq!(before, after);
}

#[test]
fn missing_taxonomy_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cmd_synth(&cfg).unwrap();
    cfg.paths.taxonomy = None;
    let err = cmd_eval_lfs(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.starts_with("eval-lfs: "), "{msg}");
    assert!(msg.contains("title_industry_match"), "{msg}");
    assert!(!cfg.outputs().seed_votes.exists());
}

#[test]
fn single_class_seed_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_synth(&cfg).unwrap();
    cmd_eval_lfs(&cfg).unwrap();
    let votes = VoteMatrix::load(&cfg.outputs().seed_votes, 10).unwrap();
    let rows: Vec<TruthRow> = votes
        .record_ids
        .iter()
        .map(|id| TruthRow {
            record_id: id.clone(),
            label: 0,
        })
        .collect();
    write_labels(&cfg.paths.seed_labels, &rows).unwrap();
    let msg = cmd_train_labeler(&cfg).unwrap_err().to_string();
    assert!(msg.starts_with("train-labeler: "), "{msg}");
    assert!(msg.contains("single class"), "{msg}");
}

#[test]
fn empty_datasets_give_empty_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_synth(&cfg).unwrap();
    std::fs::write(&cfg.paths.train_records, "").unwrap();
    std::fs::write(&cfg.paths.eval_records, "").unwrap();
    let summary = cmd_eval_lfs(&cfg).unwrap();
    assert_eq!(summary.rows[1..], [0, 0]);
    assert_eq!(std::fs::read(&cfg.outputs().train_votes).unwrap(), b"");
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg.outputs().lf_stats).unwrap()).unwrap();
    for lf in stats["lfs"].as_array().unwrap() {
        assert_eq!(lf["train"]["coverage"], 0.0);
    }
}

#[test]
fn r3_on_all_advertised_corpus_keeps_targets() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.synth.advertised_rate = 1.0;
    cfg.relabel.policy = PolicyKind::R3;
    cmd_synth(&cfg).unwrap();
    cmd_eval_lfs(&cfg).unwrap();
    cmd_train_labeler(&cfg).unwrap();
    cmd_relabel(&cfg).unwrap();
    let groups = load_groups(&cfg.outputs().train_relabeled).unwrap();
    assert!(groups.iter().flat_map(|g| &g.docs).any(|d| d.p > 0.5));
    for d in groups.iter().flat_map(|g| &g.docs) {
        assert_eq!(d.y_effective, d.y_original);
    }
}

#[test]
fn certain_relevance_leaves_targets_unchanged() {
    // A label model that always outputs p = 0 must reproduce the inputs.
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_synth(&cfg).unwrap();
    cmd_eval_lfs(&cfg).unwrap();
    // The sigmoid underflows to exactly 0 at this bias.
    WeakLabelModel::from_parts(vec![[0.0; 3]; 10], -1e4, 1.0, [0, 0])
        .write(&cfg.outputs().labeler_model)
        .unwrap();
    cmd_relabel(&cfg).unwrap();
    let groups = load_groups(&cfg.outputs().train_relabeled).unwrap();
    for d in groups.iter().flat_map(|g| &g.docs) {
        assert_eq!(d.p, 0.0);
        assert_eq!(d.y_effective, d.y_original);
    }
}

#[test]
fn zero_epochs_persist_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.ranker.epochs = 0;
    cfg.ranker.architecture = Architecture::Linear;
    cmd_synth(&cfg).unwrap();
    cmd_eval_lfs(&cfg).unwrap();
    cmd_train_labeler(&cfg).unwrap();
    cmd_relabel(&cfg).unwrap();
    let s = cmd_train_ranker(&cfg).unwrap();
    assert_eq!(s.initial_loss, s.final_loss);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.ranker.seed);
    let expected = RankerModel::init(Architecture::Linear, 10, &mut rng);
    assert_eq!(RankerModel::load(&cfg.outputs().ranker_model).unwrap(), expected);
}

#[test]
fn misaligned_votes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_all(&cfg).unwrap();
    let out = cfg.outputs();
    std::fs::copy(&out.eval_votes, &out.train_votes).unwrap();
    let msg = cmd_relabel(&cfg).unwrap_err().to_string();
    assert!(msg.starts_with("relabel: "), "{msg}");
}
