//! NDCG@k under three label sets (engagement, relabeled, weak-labeler
//! `1 - p`), and per-engagement quantiles of the irrelevance score.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::Engagement;
use crate::error::{Error, Result};
use crate::io;
use crate::ranker::{QueryGroup, RankerModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    /// gain = label
    #[default]
    Linear,
    /// gain = 2^label − 1
    Exponential,
}

impl GainKind {
    pub fn apply(self, label: f64) -> f64 {
        match self {
            GainKind::Linear => label,
            GainKind::Exponential => label.exp2() - 1.0,
        }
    }
}

fn dcg(gains_in_rank_order: impl Iterator<Item = f64>) -> f64 {
    gains_in_rank_order
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `scores` against `gains`. Documents are ranked by descending
/// score with ties broken by ascending record id; returns 0 when the ideal
/// DCG is 0.
pub fn ndcg_at_k(group: &QueryGroup, scores: &[f64], gains: &[f64], k: usize) -> Result<f64> {
    let n = group.docs.len();
    if scores.len() != n || gains.len() != n {
        return Err(Error::LengthMismatch {
            what: "NDCG inputs",
            expected: n,
            found: if scores.len() != n { scores.len() } else { gains.len() },
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if let Some(g) = gains.iter().find(|g| g.is_nan() || **g < 0.0) {
        return Err(Error::invalid(format!("negative or NaN gain {g}")));
    }
    let cutoff = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| group.docs[a].record_id.cmp(&group.docs[b].record_id))
    });
    let actual = dcg(order[..cutoff].iter().map(|&i| gains[i]));

    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let best = dcg(ideal[..cutoff].iter().copied());
    if best == 0.0 {
        return Ok(0.0);
    }
    Ok(actual / best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub quantile: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub gain: GainKind,
    pub n_queries: usize,
    pub ndcg_original: f64,
    pub ndcg_effective: f64,
    pub ndcg_weak: f64,
    pub per_engagement_quantiles: BTreeMap<Engagement, Vec<QuantilePoint>>,
}

/// Mean NDCG@k using gains from `y_original`, `y_effective` and `1 - p`,
/// all computed from the same model scores.
pub fn evaluate(groups: &[QueryGroup], model: &RankerModel, k: usize, gain: GainKind) -> Result<EvalReport> {
    if groups.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let per_group: Vec<[f64; 3]> = groups
        .par_iter()
        .map(|g| {
            let scores = model.scores(g)?;
            let gains = |f: &dyn Fn(&crate::ranker::RankedDoc) -> f64| -> Vec<f64> {
                g.docs.iter().map(|d| gain.apply(f(d))).collect()
            };
            Ok([
                ndcg_at_k(g, &scores, &gains(&|d| d.y_original), k)?,
                ndcg_at_k(g, &scores, &gains(&|d| d.y_effective), k)?,
                ndcg_at_k(g, &scores, &gains(&|d| 1.0 - d.p), k)?,
            ])
        })
        .collect::<Result<_>>()?;
    let mut sums = [0.0; 3];
    for row in &per_group {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let q = groups.len() as f64;
    Ok(EvalReport {
        k,
        gain,
        n_queries: groups.len(),
        ndcg_original: sums[0] / q,
        ndcg_effective: sums[1] / q,
        ndcg_weak: sums[2] / q,
        per_engagement_quantiles: BTreeMap::new(),
    })
}

/// Nearest-rank empirical quantile of sorted data: the value at rank
/// `ceil(q · n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Empirical quantiles of `p` per engagement class; empty classes are omitted.
pub fn score_quantiles(
    docs: impl IntoIterator<Item = (Engagement, f64)>,
    grid: &[f64],
) -> Result<BTreeMap<Engagement, Vec<QuantilePoint>>> {
    if let Some(q) = grid.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut by_class: BTreeMap<Engagement, Vec<f64>> = BTreeMap::new();
    for (e, p) in docs {
        by_class.entry(e).or_default().push(p);
    }
    Ok(by_class
        .into_iter()
        .map(|(e, mut ps)| {
            ps.sort_by(f64::total_cmp);
            let points = grid
                .iter()
                .map(|&q| QuantilePoint {
                    quantile: q,
                    p: nearest_rank(&ps, q),
                })
                .collect();
            (e, points)
        })
        .collect())
}

pub fn group_quantiles(groups: &[QueryGroup], grid: &[f64]) -> Result<BTreeMap<Engagement, Vec<QuantilePoint>>> {
    score_quantiles(
        groups.iter().flat_map(|g| g.docs.iter().map(|d| (d.engagement, d.p))),
        grid,
    )
}

#[derive(Serialize)]
struct MetricLine<'a> {
    metric: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    engagement: Option<Engagement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quantile: Option<f64>,
    value: f64,
}

impl EvalReport {
    pub fn metrics_jsonl(&self) -> Result<Vec<u8>> {
        let mut lines = vec![
            ("ndcg_original", self.ndcg_original),
            ("ndcg_effective", self.ndcg_effective),
            ("ndcg_weak", self.ndcg_weak),
        ]
        .into_iter()
        .map(|(metric, value)| MetricLine {
            metric,
            k: Some(self.k),
            engagement: None,
            quantile: None,
            value,
        })
        .collect::<Vec<_>>();
        for (e, points) in &self.per_engagement_quantiles {
            lines.extend(points.iter().map(|pt| MetricLine {
                metric: "p_quantile",
                k: None,
                engagement: Some(*e),
                quantile: Some(pt.quantile),
                value: pt.p,
            }));
        }
        io::to_jsonl(&lines)
    }

    pub fn write(&self, report: &Path, metrics: &Path) -> Result<()> {
        io::write_json(report, self)?;
        io::write_atomic(metrics, &self.metrics_jsonl()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::{Architecture, RankedDoc};
    use proptest::prelude::*;

    fn group(n: usize) -> QueryGroup {
        QueryGroup {
            query_id: "q".into(),
            docs: (0..n)
                .map(|i| RankedDoc {
                    record_id: format!("d{i}"),
                    features: vec![i as f64],
                    y_original: 0.0,
                    y_effective: 0.0,
                    p: 0.0,
                    engagement: Engagement::View,
                    advertised: false,
                })
                .collect(),
        }
    }

    #[test]
    fn ideal_and_zero_cases() {
        let g = group(3);
        assert_eq!(ndcg_at_k(&g, &[3.0, 2.0, 1.0], &[3.0, 2.0, 0.0], 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&g, &[3.0, 2.0, 1.0], &[0.0; 3], 3).unwrap(), 0.0);
        assert!(ndcg_at_k(&g, &[3.0, 2.0, 1.0], &[1.0, -1.0, 0.0], 3).is_err());
        assert!(ndcg_at_k(&g, &[3.0, 2.0, 1.0], &[1.0, 1.0, 0.0], 0).is_err());
    }

    #[test]
    fn reversed_order_by_hand() {
        // Ranked gains [0, 2, 3]: DCG = 0 + 2/log2(3) + 3/2.
        // Ideal [3, 2, 0]:       IDCG = 3 + 2/log2(3).
        let g = group(3);
        let got = ndcg_at_k(&g, &[1.0, 2.0, 3.0], &[3.0, 2.0, 0.0], 3).unwrap();
        let want = (2.0 / 3f64.log2() + 1.5) / (3.0 + 2.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-15);
        // k = 1 only sees the top document.
        assert_eq!(ndcg_at_k(&g, &[1.0, 2.0, 3.0], &[3.0, 2.0, 0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn ties_break_by_record_id() {
        let g = group(2);
        // Equal scores: d0 ranks first.
        assert_eq!(ndcg_at_k(&g, &[0.0, 0.0], &[1.0, 0.0], 1).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&g, &[0.0, 0.0], &[0.0, 1.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_three_label_sets() {
        let mut a = group(2);
        a.docs[0].y_original = 1.0;
        a.docs[0].y_effective = 0.0;
        a.docs[1].y_effective = 1.0;
        a.docs[0].p = 0.9;
        let mut b = group(1);
        b.query_id = "b".into();
        b.docs[0].y_original = 2.0;
        b.docs[0].y_effective = 2.0;
        // Score = feature: d1 ranks first in group a.
        let model = RankerModel::new(Architecture::Linear, 1, vec![1.0, 0.0]).unwrap();
        let r = evaluate(&[a, b], &model, 10, GainKind::Linear).unwrap();
        let a_orig = (1.0 / 3f64.log2()) / 1.0;
        assert!((r.ndcg_original - (a_orig + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.ndcg_effective, 1.0);
        // weak gains [0.1, 1.0]: ideal order matches → 1; single doc gain 1 → 1.
        assert_eq!(r.ndcg_weak, 1.0);
        assert!(evaluate(&[], &model, 10, GainKind::Linear).is_err());
    }

    #[test]
    fn quantiles() {
        let docs = vec![(Engagement::Apply, 0.3); 4];
        let q = score_quantiles(docs, &[0.0, 0.5, 1.0]).unwrap();
        assert!(q[&Engagement::Apply].iter().all(|pt| pt.p == 0.3));
        assert!(!q.contains_key(&Engagement::Dismiss));

        let docs: Vec<_> = [0.5, 0.1, 0.4, 0.2, 0.3]
            .iter()
            .map(|&p| (Engagement::Dismiss, p))
            .collect();
        let q = score_quantiles(docs, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let got: Vec<f64> = q[&Engagement::Dismiss].iter().map(|pt| pt.p).collect();
        // ranks ceil(q·5) clamped to ≥ 1: 1, 1, 2, 3, 4, 5
        assert_eq!(got, vec![0.1, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(score_quantiles(vec![], &[1.5]).is_err());
    }

    #[test]
    fn metrics_lines_are_stable() {
        let mut r = EvalReport {
            k: 10,
            gain: GainKind::Linear,
            n_queries: 1,
            ndcg_original: 0.5,
            ndcg_effective: 0.75,
            ndcg_weak: 1.0,
            per_engagement_quantiles: BTreeMap::new(),
        };
        r.per_engagement_quantiles
            .insert(Engagement::Skip, vec![QuantilePoint { quantile: 0.5, p: 0.25 }]);
        let text = String::from_utf8(r.metrics_jsonl().unwrap()).unwrap();
        assert_eq!(
            text,
            "{\"metric\":\"ndcg_original\",\"k\":10,\"value\":0.5}\n\
             {\"metric\":\"ndcg_effective\",\"k\":10,\"value\":0.75}\n\
             {\"metric\":\"ndcg_weak\",\"k\":10,\"value\":1.0}\n\
             {\"metric\":\"p_quantile\",\"engagement\":\"skip\",\"quantile\":0.5,\"value\":0.25}\n"
        );
    }

    proptest! {
        #[test]
        fn bounded_and_monotone_invariant(
            raw in prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 1..12),
            k in 1usize..15,
        ) {
            let mut g = group(raw.len());
            for (d, (_, y)) in g.docs.iter_mut().zip(&raw) {
                d.y_original = *y;
            }
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let gains: Vec<f64> = raw.iter().map(|r| r.1).collect();
            let v = ndcg_at_k(&g, &scores, &gains, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() + 2.0).collect();
            prop_assert_eq!(v, ndcg_at_k(&g, &transformed, &gains, k).unwrap());
            prop_assert!((ndcg_at_k(&g, &gains, &gains, k).unwrap() - 1.0).abs() < 1e-12
                || gains.iter().all(|g| *g == 0.0));
        }
    }
}
