use prevalens::classifier::{OracleClassifier, ScoredPool};
use prevalens::data::{draw_feasible, Document, Label, LabeledCorpus};
use prevalens::quanet::{build_input, train_quanet, QuaNetConfig, QuaNetTrainConfig};
use prevalens::quantifiers::{rate_estimates_from, RateSource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn oracle_pool(n: usize) -> ScoredPool {
    let docs = (0..n)
        .map(|i| Document::new(i, "", if i % 2 == 0 { Label::Positive } else { Label::Negative }))
        .collect();
    let corpus = LabeledCorpus::new(docs, 0).unwrap();
    ScoredPool::new(corpus, &OracleClassifier::new(0.85, 0.15, 9).unwrap()).unwrap()
}

#[test]
fn duplicating_a_sample_barely_moves_the_estimate() {
    let pool = oracle_pool(3000);
    let rates = rate_estimates_from(&pool.outputs, &pool.corpus.labels(), RateSource::HeldOut).unwrap();
    let cfg = QuaNetTrainConfig {
        max_iterations: 1500,
        sample_size: 60,
        seed: 11,
        ..QuaNetTrainConfig::desk()
    };
    let (model, _) = train_quanet(&pool, &rates, QuaNetConfig::desk(pool.embedding_dim()), &cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for target in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let draw = draw_feasible(&pool.corpus, &pool.index, target, 60, &mut rng).unwrap();
        let once = pool.select(&draw.pool_indices);
        let twice: Vec<_> = once.iter().chain(&once).cloned().collect();
        let (a, b) = (
            build_input(&once, &rates).unwrap(),
            build_input(&twice, &rates).unwrap(),
        );
        assert_eq!(a.stats[..2], b.stats[..2]);
        for k in 2..4 {
            assert!((a.stats[k] - b.stats[k]).abs() < 1e-12, "stat {k}");
        }
        let shape: Vec<f64> = a.items.iter().flat_map(|i| [i.0, i.0]).collect();
        assert_eq!(shape, b.items.iter().map(|i| i.0).collect::<Vec<_>>());

        let (ea, eb) = (model.estimate_input(&a).unwrap(), model.estimate_input(&b).unwrap());
        assert!(
            (ea.p_positive - eb.p_positive).abs() < 0.05,
            "target {target}: {} vs {}",
            ea.p_positive,
            eb.p_positive
        );
    }
}
