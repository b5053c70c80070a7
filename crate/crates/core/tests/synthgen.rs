use weakrank::lf_engine::{compute_stats, eval_all};
use weakrank::synthgen::{generate, Archetype, SynthConfig};

fn sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn default_profiles_are_met_within_three_sigma() {
    let config = SynthConfig {
        eval_fraction: 0.0,
        seed_queries: 0,
        ..SynthConfig::default()
    };
    let corpus = generate(&config).unwrap();
    let votes = eval_all(&corpus.train, &corpus.lf_specs, &corpus.taxonomy).unwrap();
    let labels: Vec<bool> = corpus.train_truth.iter().map(|t| t.label == 1).collect();
    let stats = compute_stats(&votes, Some(&labels)).unwrap();
    let n = labels.len();
    let rate = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
    assert!((rate - config.irrelevance_rate).abs() <= 3.0 * sigma(config.irrelevance_rate, n));

    for (profile, s) in config.lf_profiles.iter().zip(&stats) {
        // Abstention is independent of the planted label, so the expected
        // accuracy over voted rows is the base-rate mixture.
        let r = config.irrelevance_rate;
        let acc = (1.0 - r) * profile.accuracy_relevant + r * profile.accuracy_irrelevant;
        let voted = s.positive + s.negative;
        let measured = s.empirical_accuracy.unwrap();
        // Title-based rules abstain (at least partly) per query, so the query
        // count bounds their effective sample size.
        let n_abstain = match profile.archetype {
            Archetype::TokenContainment | Archetype::TaxonomyMatch => config.n_queries,
            _ => n,
        };
        // The realized label mix among voted rows adds its own spread.
        let mix = (profile.accuracy_relevant - profile.accuracy_irrelevant).abs() * sigma(r, voted);
        let acc_tol = 3.0 * (sigma(acc, voted).powi(2) + mix.powi(2)).sqrt();
        assert!(
            (measured - acc).abs() <= acc_tol,
            "{}: accuracy {measured} vs {acc} (tol {acc_tol})",
            profile.name
        );
        let cov = 1.0 - profile.abstain_rate;
        let cov_tol = 3.0 * sigma(cov, n_abstain);
        assert!(
            (s.coverage - cov).abs() <= cov_tol,
            "{}: coverage {} vs {cov} (tol {cov_tol})",
            profile.name,
            s.coverage
        );
    }
}
