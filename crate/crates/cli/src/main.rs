use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weakrank::evaluator::GainKind;
use weakrank::pipeline::{self, PipelineConfig};
use weakrank::ranker::LabelSource;
use weakrank::relabeler::PolicyKind;

#[derive(Parser)]
#[command(
    name = "weakrank",
    version,
    about = "Weakly supervised relabeling for learning-to-rank"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override `paths.out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the configured input paths.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the labeling functions over seed, train and eval records.
    EvalLfs {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the label model on the seed votes.
    TrainLabeler {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Rewrite train and eval targets from label-model probabilities.
    Relabel {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<PolicyKind>,
    },
    /// Train the ListNet ranker on the relabeled train set.
    TrainRanker {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_label_source)]
        label_source: Option<LabelSource>,
    },
    /// NDCG@k on original, relabeled and weak labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_gain)]
        gain: Option<GainKind>,
    },
    /// Seed-set size needed to estimate an LF accuracy within a margin.
    SampleSize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_error: Option<f64>,
        #[arg(long)]
        z: Option<f64>,
    },
    /// synth, eval-lfs, train-labeler, relabel, train-ranker, evaluate.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: weakrank::Error| e.to_string())
}

fn parse_label_source(s: &str) -> Result<LabelSource, String> {
    match s {
        "original" => Ok(LabelSource::Original),
        "effective" => Ok(LabelSource::Effective),
        _ => Err(format!("expected `original` or `effective`, got `{s}`")),
    }
}

fn parse_gain(s: &str) -> Result<GainKind, String> {
    match s {
        "linear" => Ok(GainKind::Linear),
        "exponential" => Ok(GainKind::Exponential),
        _ => Err(format!("expected `linear` or `exponential`, got `{s}`")),
    }
}

fn load(common: &Common) -> weakrank::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&common.config)?;
    if let Some(dir) = &common.out_dir {
        config.paths.out_dir = dir.clone();
    }
    Ok(config)
}

fn run(command: Command) -> weakrank::Result<()> {
    match command {
        Command::Synth { common, seed } => {
            let mut config = load(&common)?;
            if let Some(s) = seed {
                config.synth.seed = s;
            }
            let s = pipeline::cmd_synth(&config)?;
            println!("synth: {} seed, {} train, {} eval records", s.seed, s.train, s.eval);
        }
        Command::EvalLfs { common } => {
            let config = load(&common)?;
            let s = pipeline::cmd_eval_lfs(&config)?;
            println!(
                "eval-lfs: {} seed, {} train, {} eval rows; stats in {}",
                s.rows[0],
                s.rows[1],
                s.rows[2],
                config.outputs().lf_stats.display()
            );
        }
        Command::TrainLabeler {
            common,
            alpha,
            split_seed,
        } => {
            let mut config = load(&common)?;
            if let Some(a) = alpha {
                config.labeler.alpha = a;
            }
            if let Some(s) = split_seed {
                config.labeler.split_seed = s;
            }
            config.validate()?;
            let s = pipeline::cmd_train_labeler(&config)?;
            match s.held_out_auc {
                Some(auc) => println!(
                    "train-labeler: fit on {}, held-out AUC {auc:.4} on {}",
                    s.n_train, s.n_test
                ),
                None => println!("train-labeler: fit on {}, no held-out split", s.n_train),
            }
        }
        Command::Relabel { common, policy } => {
            let mut config = load(&common)?;
            if let Some(p) = policy {
                config.relabel.policy = p;
            }
            let s = pipeline::cmd_relabel(&config)?;
            println!(
                "relabel: {} train, {} eval docs; mean train p {:.4}",
                s.train_docs, s.eval_docs, s.mean_p_train
            );
        }
        Command::TrainRanker {
            common,
            epochs,
            learning_rate,
            seed,
            label_source,
        } => {
            let mut config = load(&common)?;
            let r = &mut config.ranker;
            if let Some(e) = epochs {
                r.epochs = e;
            }
            if let Some(lr) = learning_rate {
                r.learning_rate = lr;
            }
            if let Some(s) = seed {
                r.seed = s;
            }
            if let Some(l) = label_source {
                r.label_source = l;
            }
            config.validate()?;
            let s = pipeline::cmd_train_ranker(&config)?;
            println!(
                "train-ranker: {} groups, loss {:.6} -> {:.6}",
                s.groups, s.initial_loss, s.final_loss
            );
        }
        Command::Evaluate { common, k, gain } => {
            let mut config = load(&common)?;
            if let Some(k) = k {
                config.eval.k = k;
            }
            if let Some(g) = gain {
                config.eval.gain = g;
            }
            config.validate()?;
            let r = pipeline::cmd_evaluate(&config)?;
            println!(
                "evaluate: NDCG@{} original {:.4}, relabeled {:.4}, weak {:.4} over {} queries",
                r.k, r.ndcg_original, r.ndcg_effective, r.ndcg_weak, r.n_queries
            );
        }
        Command::SampleSize { config, max_error, z } => {
            let defaults = match config {
                Some(path) => PipelineConfig::load(&path)?.sample_size,
                None => Default::default(),
            };
            let n = pipeline::cmd_sample_size(max_error.unwrap_or(defaults.max_error), z.unwrap_or(defaults.z))?;
            println!("{n}");
        }
        Command::Run { common } => {
            let config = load(&common)?;
            let r = pipeline::run_all(&config)?;
            println!(
                "run: NDCG@{} original {:.4}, relabeled {:.4}, weak {:.4}",
                r.k, r.ndcg_original, r.ndcg_effective, r.ndcg_weak
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
