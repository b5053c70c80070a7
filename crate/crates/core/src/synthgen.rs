//! Synthetic corpora with planted relevance.
//!
//! Every document is planted relevant or irrelevant. Each configured LF
//! profile first samples the vote it should cast (abstain, then agree with
//! the planted label at the profile accuracy) and the record fields that
//! rule reads are then realized so the rule reproduces that vote. Votes are
//! therefore conditionally independent given the planted label, except that
//! the taxonomy rule also abstains whenever the query carries no title.
//!
//! Feature layout: `[popularity, score_1 .. score_K, match]`, where the
//! `score_k` columns back the feature-threshold LFs and are null when those
//! LFs abstain. Engagement depends on planted relevance (flipped with
//! probability `engagement_noise`) and on a latent popularity that the
//! `popularity` feature observes with noise.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    Dataset, DatasetSchema, Engagement, EngagementLabelMap, QueryDocRecord, Taxonomy, TitleSpan, TruthRow,
};
use crate::error::{Error, Result};
use crate::lf_engine::{Direction, LfKind, LfSpec, Vote};

const TITLES: &[(&str, &[&str])] = &[
    ("software engineer", &["technology"]),
    ("data scientist", &["technology", "finance"]),
    ("staff nurse", &["healthcare"]),
    ("registered nurse", &["healthcare"]),
    ("financial analyst", &["finance"]),
    ("sales manager", &["retail"]),
    ("mechanical engineer", &["manufacturing"]),
    ("truck driver", &["logistics"]),
    ("teacher", &["education"]),
    ("accountant", &["finance"]),
    ("warehouse associate", &["logistics", "retail"]),
    ("product designer", &["technology"]),
];

const INDUSTRIES: &[&str] = &[
    "education",
    "finance",
    "healthcare",
    "hospitality",
    "logistics",
    "manufacturing",
    "retail",
    "technology",
];

const UNTITLED_QUERIES: &[&[&str]] = &[&["jobs", "near", "me"], &["hiring", "now"], &["remote", "work"]];
const LOCATIONS: &[&str] = &["boston", "denver", "austin", "seattle"];
const MODIFIERS: &[&str] = &["senior", "lead", "junior", "principal"];

/// Threshold used by every generated feature-threshold LF.
pub const SCORE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Archetype {
    TokenContainment,
    OrdinalDelta { max_delta: u32 },
    TaxonomyMatch,
    FeatureThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfProfile {
    pub name: String,
    #[serde(flatten)]
    pub archetype: Archetype,
    /// P(Positive | relevant, not abstaining).
    pub accuracy_relevant: f64,
    /// P(Negative | irrelevant, not abstaining).
    pub accuracy_irrelevant: f64,
    pub abstain_rate: f64,
    #[serde(default)]
    pub serveable: bool,
}

impl LfProfile {
    fn new(name: &str, archetype: Archetype, acc_rel: f64, acc_irr: f64, abstain: f64) -> Self {
        LfProfile {
            name: name.into(),
            archetype,
            accuracy_relevant: acc_rel,
            accuracy_irrelevant: acc_irr,
            abstain_rate: abstain,
            serveable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Train + eval queries.
    pub n_queries: usize,
    pub docs_per_query: usize,
    /// Share of `n_queries` held out for evaluation.
    pub eval_fraction: f64,
    pub seed_queries: usize,
    pub seed_docs_per_query: usize,
    pub irrelevance_rate: f64,
    pub engagement_noise: f64,
    pub advertised_rate: f64,
    pub lf_profiles: Vec<LfProfile>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use Archetype::*;
        let mut title = LfProfile::new("title_tokens_in_doc_title", TokenContainment, 0.85, 0.80, 0.2);
        title.serveable = true;
        let scores = [
            (0.90, 0.80, 0.10),
            (0.75, 0.85, 0.25),
            (0.80, 0.80, 0.20),
            (0.85, 0.75, 0.15),
            (0.90, 0.90, 0.30),
            (0.75, 0.75, 0.10),
            (0.80, 0.90, 0.20),
        ];
        let mut lf_profiles = vec![
            title,
            LfProfile::new("seniority_within_one", OrdinalDelta { max_delta: 1 }, 0.80, 0.75, 0.15),
            LfProfile::new("title_industry_match", TaxonomyMatch, 0.85, 0.85, 0.30),
        ];
        lf_profiles.extend(
            scores
                .iter()
                .enumerate()
                .map(|(i, &(r, ir, a))| LfProfile::new(&format!("model_score_{}", i + 1), FeatureThreshold, r, ir, a)),
        );
        SynthConfig {
            n_queries: 2500,
            docs_per_query: 10,
            eval_fraction: 0.2,
            seed_queries: 1500,
            seed_docs_per_query: 3,
            irrelevance_rate: 0.3,
            engagement_noise: 0.15,
            advertised_rate: 0.2,
            lf_profiles,
            seed: 2024,
        }
    }
}

/// A generated corpus: datasets, their planted labels, and the matching
/// schema, taxonomy and LF config.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub schema: DatasetSchema,
    pub taxonomy: Taxonomy,
    pub lf_specs: Vec<LfSpec>,
    pub seed: Dataset,
    pub seed_labels: Vec<TruthRow>,
    pub train: Dataset,
    pub train_truth: Vec<TruthRow>,
    pub eval: Dataset,
    pub eval_truth: Vec<TruthRow>,
}

const SENIORITY_MAX: u8 = 9;

struct Plan {
    token: Option<usize>,
    ordinal: Option<(usize, u32)>,
    taxonomy: Option<usize>,
    /// (profile index, feature column)
    scores: Vec<(usize, usize)>,
    /// P(doc industry null | query has a title) for the taxonomy LF.
    industry_null_rate: f64,
    feature_dim: usize,
}

fn probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    fn plan(&self) -> Result<Plan> {
        probability("irrelevance_rate", self.irrelevance_rate)?;
        probability("engagement_noise", self.engagement_noise)?;
        probability("advertised_rate", self.advertised_rate)?;
        probability("eval_fraction", self.eval_fraction)?;
        if self.lf_profiles.is_empty() {
            return Err(Error::Config("at least one LF profile is required".into()));
        }
        if self.docs_per_query == 0 || self.seed_docs_per_query == 0 {
            return Err(Error::Config("docs per query must be >= 1".into()));
        }
        let mut plan = Plan {
            token: None,
            ordinal: None,
            taxonomy: None,
            scores: Vec::new(),
            industry_null_rate: 0.0,
            feature_dim: 0,
        };
        for (i, p) in self.lf_profiles.iter().enumerate() {
            probability(&format!("{}: accuracy_relevant", p.name), p.accuracy_relevant)?;
            probability(&format!("{}: accuracy_irrelevant", p.name), p.accuracy_irrelevant)?;
            probability(&format!("{}: abstain_rate", p.name), p.abstain_rate)?;
            let dup = |slot: &Option<usize>| {
                if slot.is_some() {
                    Err(Error::Infeasible(format!(
                        "`{}`: at most one {:?} LF can be planted independently",
                        p.name, p.archetype
                    )))
                } else {
                    Ok(())
                }
            };
            match p.archetype {
                Archetype::TokenContainment => {
                    dup(&plan.token)?;
                    plan.token = Some(i);
                }
                Archetype::TaxonomyMatch => {
                    dup(&plan.taxonomy)?;
                    plan.taxonomy = Some(i);
                }
                Archetype::OrdinalDelta { max_delta } => {
                    dup(&plan.ordinal.map(|o| o.0))?;
                    if max_delta >= u32::from(SENIORITY_MAX) && p.abstain_rate < 1.0 {
                        return Err(Error::Infeasible(format!(
                            "`{}`: max_delta {max_delta} leaves no seniority pair that violates it",
                            p.name
                        )));
                    }
                    plan.ordinal = Some((i, max_delta));
                }
                Archetype::FeatureThreshold => plan.scores.push((i, plan.scores.len() + 1)),
            }
        }
        if let Some(t) = plan.taxonomy {
            // The taxonomy rule abstains whenever the query has no title, so
            // its abstain rate cannot fall below the token rule's.
            let span_abstain = plan.token.map_or(0.0, |i| self.lf_profiles[i].abstain_rate);
            let want = self.lf_profiles[t].abstain_rate;
            if want < span_abstain || (span_abstain == 1.0 && want < 1.0) {
                return Err(Error::Infeasible(format!(
                    "`{}`: abstain rate {want} is below the untitled-query rate {span_abstain}",
                    self.lf_profiles[t].name
                )));
            }
            plan.industry_null_rate = if span_abstain >= 1.0 {
                1.0
            } else {
                (want - span_abstain) / (1.0 - span_abstain)
            };
        }
        plan.feature_dim = plan.scores.len() + 2;
        Ok(plan)
    }

    pub fn lf_specs(&self) -> Result<Vec<LfSpec>> {
        let plan = self.plan()?;
        Ok(self.specs_for(&plan))
    }

    fn specs_for(&self, plan: &Plan) -> Vec<LfSpec> {
        let mut column = plan.scores.iter().map(|&(_, c)| c);
        self.lf_profiles
            .iter()
            .map(|p| LfSpec {
                name: p.name.clone(),
                kind: match p.archetype {
                    Archetype::TokenContainment => LfKind::TokenContainment { span_required: true },
                    Archetype::OrdinalDelta { max_delta } => LfKind::OrdinalDelta { max_delta },
                    Archetype::TaxonomyMatch => LfKind::TaxonomyMatch,
                    Archetype::FeatureThreshold => LfKind::FeatureThreshold {
                        feature_index: column.next().expect("one column per score LF"),
                        threshold: SCORE_THRESHOLD,
                        direction: Direction::AtLeast,
                    },
                },
                serveable: p.serveable,
            })
            .collect()
    }
}

pub fn reference_taxonomy() -> Taxonomy {
    Taxonomy::from_rows(TITLES.iter().map(|(t, inds)| (*t, inds.to_vec()))).expect("static taxonomy")
}

struct Generator<'a> {
    config: &'a SynthConfig,
    plan: Plan,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl Generator<'_> {
    fn planned_vote(&mut self, profile: usize, relevant: bool) -> Vote {
        let p = &self.config.lf_profiles[profile];
        if self.rng.random_bool(p.abstain_rate) {
            return Vote::Abstain;
        }
        self.label_vote(profile, relevant)
    }

    fn label_vote(&mut self, profile: usize, relevant: bool) -> Vote {
        let p = &self.config.lf_profiles[profile];
        let holds = if relevant {
            self.rng.random_bool(p.accuracy_relevant)
        } else {
            !self.rng.random_bool(p.accuracy_irrelevant)
        };
        if holds {
            Vote::Positive
        } else {
            Vote::Negative
        }
    }

    fn gauss(&mut self) -> f64 {
        self.noise.sample(&mut self.rng)
    }

    fn split(&mut self, prefix: &str, n_queries: usize, docs_per_query: usize) -> (Vec<QueryDocRecord>, Vec<TruthRow>) {
        let mut records = Vec::with_capacity(n_queries * docs_per_query);
        let mut truth = Vec::with_capacity(n_queries * docs_per_query);
        for q in 0..n_queries {
            let query_id = format!("{prefix}-q{q:05}");
            let (title, industries) = *TITLES.choose(&mut self.rng).expect("non-empty");
            let title_tokens = tokens(title);
            let titled = match self.plan.token {
                Some(i) => !self.rng.random_bool(self.config.lf_profiles[i].abstain_rate),
                None => true,
            };
            let (query_tokens, span) = if titled {
                let mut t = title_tokens.clone();
                let span = TitleSpan { start: 0, end: t.len() };
                if self.rng.random_bool(0.5) {
                    t.push("in".into());
                    t.push((*LOCATIONS.choose(&mut self.rng).expect("non-empty")).into());
                }
                (t, Some(span))
            } else {
                let words = UNTITLED_QUERIES.choose(&mut self.rng).expect("non-empty");
                (words.iter().map(|w| (*w).to_owned()).collect(), None)
            };
            let user_seniority = self.rng.random_range(0..=SENIORITY_MAX);

            for j in 0..docs_per_query {
                let relevant = !self.rng.random_bool(self.config.irrelevance_rate);
                let doc_title_tokens = self.doc_title(titled, title, relevant);
                let doc_industry_id = self.doc_industry(titled, industries, relevant);
                let doc_seniority = self.doc_seniority(user_seniority, relevant);
                let mut features = vec![None; self.plan.feature_dim];
                let popularity = self.gauss();
                features[0] = Some(popularity + 0.3 * self.gauss());
                let score_lfs = self.plan.scores.clone();
                for (profile, column) in score_lfs {
                    let u: f64 = self.rng.random();
                    features[column] = match self.planned_vote(profile, relevant) {
                        Vote::Abstain => None,
                        Vote::Positive => Some(SCORE_THRESHOLD + (1.0 - SCORE_THRESHOLD) * u),
                        Vote::Negative => Some(SCORE_THRESHOLD * u),
                    };
                }
                let last = self.plan.feature_dim - 1;
                features[last] = Some(if relevant { 0.3 } else { 0.0 } + 0.5 * self.gauss());
                let engagement = self.engagement(relevant, popularity);
                let advertised = self.rng.random_bool(self.config.advertised_rate);
                let record_id = format!("{query_id}-d{j}");
                truth.push(TruthRow {
                    record_id: record_id.clone(),
                    label: u8::from(!relevant),
                });
                records.push(QueryDocRecord {
                    record_id,
                    query_id: query_id.clone(),
                    query_tokens: query_tokens.clone(),
                    query_title_span: span,
                    doc_title_tokens,
                    user_seniority: Some(user_seniority),
                    doc_seniority,
                    doc_industry_id,
                    features,
                    engagement,
                    advertised,
                });
            }
        }
        (records, truth)
    }

    fn doc_title(&mut self, titled: bool, query_title: &str, relevant: bool) -> Vec<String> {
        let vote = match self.plan.token {
            Some(i) if titled => self.label_vote(i, relevant),
            _ => Vote::Abstain,
        };
        let base = match vote {
            Vote::Positive => query_title,
            Vote::Negative => {
                let needle = tokens(query_title);
                let others: Vec<&str> = TITLES
                    .iter()
                    .map(|t| t.0)
                    .filter(|t| {
                        let hay = tokens(t);
                        !needle.iter().all(|n| hay.contains(n))
                    })
                    .collect();
                *others.choose(&mut self.rng).expect("distinct titles")
            }
            Vote::Abstain => TITLES.choose(&mut self.rng).expect("non-empty").0,
        };
        let mut out = Vec::new();
        if self.rng.random_bool(0.3) {
            out.push((*MODIFIERS.choose(&mut self.rng).expect("non-empty")).to_owned());
        }
        out.extend(tokens(base));
        out
    }

    fn doc_industry(&mut self, titled: bool, query_industries: &[&str], relevant: bool) -> Option<String> {
        let Some(i) = self.plan.taxonomy else {
            return Some((*INDUSTRIES.choose(&mut self.rng).expect("non-empty")).to_owned());
        };
        if titled && self.rng.random_bool(self.plan.industry_null_rate) {
            return None;
        }
        let vote = self.label_vote(i, relevant);
        if !titled {
            // The rule abstains regardless; keep an industry on the record.
            return Some((*INDUSTRIES.choose(&mut self.rng).expect("non-empty")).to_owned());
        }
        let pool: Vec<&str> = match vote {
            Vote::Positive => query_industries.to_vec(),
            _ => INDUSTRIES
                .iter()
                .copied()
                .filter(|ind| !query_industries.contains(ind))
                .collect(),
        };
        Some((*pool.choose(&mut self.rng).expect("non-empty industry pool")).to_owned())
    }

    fn doc_seniority(&mut self, user: u8, relevant: bool) -> Option<u8> {
        let Some((i, max_delta)) = self.plan.ordinal else {
            return Some(self.rng.random_range(0..=SENIORITY_MAX));
        };
        let levels: Vec<u8> = match self.planned_vote(i, relevant) {
            Vote::Abstain => return None,
            Vote::Positive => (0..=SENIORITY_MAX)
                .filter(|&l| u32::from(l.abs_diff(user)) <= max_delta)
                .collect(),
            Vote::Negative => (0..=SENIORITY_MAX)
                .filter(|&l| u32::from(l.abs_diff(user)) > max_delta)
                .collect(),
        };
        Some(*levels.choose(&mut self.rng).expect("feasibility checked"))
    }

    fn engagement(&mut self, relevant: bool, popularity: f64) -> Engagement {
        let mut sign = if relevant { 1.0 } else { -1.0 };
        if self.rng.random_bool(self.config.engagement_noise) {
            sign = -sign;
        }
        let latent = sign + 0.8 * popularity + 0.5 * self.gauss();
        match latent {
            s if s > 1.4 => Engagement::Apply,
            s if s > 0.8 => Engagement::Save,
            s if s > 0.0 => Engagement::View,
            s if s > -0.9 => Engagement::Skip,
            _ => Engagement::Dismiss,
        }
    }
}

/// Generates seed, train and eval splits. Deterministic for a fixed config.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    let plan = config.plan()?;
    let lf_specs = config.specs_for(&plan);
    let feature_dim = plan.feature_dim;
    let optional_features = plan.scores.iter().map(|&(_, c)| c).collect();
    let mut gen = Generator {
        config,
        plan,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        noise: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let n_eval = (config.n_queries as f64 * config.eval_fraction).round() as usize;
    let n_train = config.n_queries - n_eval;
    let (seed, seed_labels) = gen.split("seed", config.seed_queries, config.seed_docs_per_query);
    let (train, train_truth) = gen.split("train", n_train, config.docs_per_query);
    let (eval, eval_truth) = gen.split("eval", n_eval, config.docs_per_query);
    let dataset = |records| Dataset { feature_dim, records };
    Ok(SynthCorpus {
        schema: DatasetSchema {
            feature_dim,
            optional_features,
            lf_count: lf_specs.len(),
            seniority_range: [0, SENIORITY_MAX],
            engagement_labels: EngagementLabelMap::default(),
        },
        taxonomy: reference_taxonomy(),
        lf_specs,
        seed: dataset(seed),
        seed_labels,
        train: dataset(train),
        train_truth,
        eval: dataset(eval),
        eval_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lf_engine::{compute_stats, eval_all};

    fn small() -> SynthConfig {
        SynthConfig {
            n_queries: 50,
            docs_per_query: 4,
            seed_queries: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed += 1;
        assert_ne!(generate(&other).unwrap().train, a.train);
    }

    #[test]
    fn zero_irrelevance_plants_only_relevant() {
        let corpus = generate(&SynthConfig {
            irrelevance_rate: 0.0,
            ..small()
        })
        .unwrap();
        assert!(corpus
            .seed_labels
            .iter()
            .chain(&corpus.train_truth)
            .chain(&corpus.eval_truth)
            .all(|t| t.label == 0));
    }

    #[test]
    fn split_sizes_and_schema() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.seed.len(), 90);
        assert_eq!(c.train.len(), 40 * 4);
        assert_eq!(c.eval.len(), 10 * 4);
        assert_eq!(c.schema.feature_dim, 9);
        assert_eq!(c.schema.lf_count, 10);
        assert_eq!(c.lf_specs.len(), 10);
        assert!(c.lf_specs[0].serveable);
    }

    #[test]
    fn infeasible_profiles_are_rejected() {
        let mut cfg = small();
        cfg.lf_profiles[2].abstain_rate = 0.1; // below the token rule's 0.2
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));

        let mut cfg = small();
        cfg.lf_profiles[1].archetype = Archetype::OrdinalDelta { max_delta: 9 };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));

        let mut cfg = small();
        cfg.lf_profiles.push(cfg.lf_profiles[0].clone());
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));

        let mut cfg = small();
        cfg.lf_profiles[4].accuracy_relevant = 1.2;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    fn three_sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn measured_lf_stats_match_profiles() {
        // Every LF at 0.9/0.9 accuracy with 0.2 abstention, on 10k documents.
        let mut cfg = SynthConfig {
            n_queries: 2500,
            docs_per_query: 4,
            eval_fraction: 0.0,
            seed_queries: 0,
            ..SynthConfig::default()
        };
        for p in &mut cfg.lf_profiles {
            p.accuracy_relevant = 0.9;
            p.accuracy_irrelevant = 0.9;
            p.abstain_rate = 0.2;
        }
        let c = generate(&cfg).unwrap();
        assert_eq!(c.train.len(), 10_000);
        let votes = eval_all(&c.train, &c.lf_specs, &c.taxonomy).unwrap();
        let labels: Vec<bool> = c.train_truth.iter().map(|t| t.label == 1).collect();
        let stats = compute_stats(&votes, Some(&labels)).unwrap();
        for (spec, s) in c.lf_specs.iter().zip(&stats) {
            let acc = s.empirical_accuracy.unwrap();
            assert!((0.87..=0.93).contains(&acc), "{}: accuracy {acc}", spec.name);
            assert!(
                (0.77..=0.83).contains(&s.coverage),
                "{}: coverage {}",
                spec.name,
                s.coverage
            );
        }
        let rate = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        assert!((rate - 0.3).abs() <= three_sigma(0.3, labels.len()));
    }

    #[test]
    fn engagement_follows_relevance() {
        let c = generate(&SynthConfig {
            n_queries: 500,
            eval_fraction: 0.0,
            seed_queries: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        let share = |irrelevant: u8, e: Engagement| {
            let (hit, total) = c
                .train
                .records
                .iter()
                .zip(&c.train_truth)
                .filter(|(_, t)| t.label == irrelevant)
                .fold((0, 0), |(h, n), (r, _)| (h + usize::from(r.engagement == e), n + 1));
            hit as f64 / total as f64
        };
        assert!(share(1, Engagement::Dismiss) > share(0, Engagement::Dismiss));
        assert!(share(0, Engagement::Apply) > share(1, Engagement::Apply));
    }
}
