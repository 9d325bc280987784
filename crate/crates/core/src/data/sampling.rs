//! Stratified splits and prevalence-controlled undersampling.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::corpus::LabeledCorpus;
use crate::error::{Error, Result};

/// The 21 test prevalences: 0.01, 0.05, 0.10, ..., 0.95, 0.99.
pub fn prevalence_grid() -> Vec<f64> {
    let mut g = vec![0.01];
    g.extend((1..20).map(|k| (5 * k) as f64 / 100.0));
    g.push(0.99);
    g
}

/// Number of positives in a sample of `size` at prevalence `target`,
/// rounding halves up.
pub fn positive_count(target: f64, size: usize) -> usize {
    (target * size as f64 + 0.5).floor() as usize
}

/// Stratified random split. Each class contributes `round(fraction * n_c)`
/// documents to the first part (at least one, and never all of them); both
/// parts keep the original document order.
pub fn split_train_val(
    corpus: &LabeledCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let index = ClassIndex::new(corpus);
    for (name, members) in [("positive", &index.positives), ("negative", &index.negatives)] {
        if members.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{name} class has {} document(s); at least 2 are needed to split",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for members in [&index.positives, &index.negatives] {
        let n = members.len();
        let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        train.extend_from_slice(&shuffled[..k]);
        rest.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    rest.sort_unstable();
    Ok((corpus.subset(&train), corpus.subset(&rest)))
}

/// Positions of each class inside a corpus.
#[derive(Clone, Debug)]
pub struct ClassIndex {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl ClassIndex {
    pub fn new(corpus: &LabeledCorpus) -> Self {
        let (mut positives, mut negatives) = (Vec::new(), Vec::new());
        for (i, d) in corpus.documents().iter().enumerate() {
            if d.label.is_positive() {
                positives.push(i);
            } else {
                negatives.push(i);
            }
        }
        ClassIndex { positives, negatives }
    }
}

/// One sample drawn from a pool at a requested prevalence.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    pub document_ids: Vec<usize>,
    /// Positions of the drawn documents in the pool, positives first.
    pub pool_indices: Vec<usize>,
    pub target_prevalence: f64,
    pub realized_prevalence: f64,
    pub sample_size: usize,
    /// Set when the pool could not supply the requested size.
    pub reduced: bool,
}

fn check_target(target: f64, size: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("target prevalence {target} outside [0, 1]")));
    }
    if size == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    Ok(())
}

fn assemble(
    pool: &LabeledCorpus,
    index: &ClassIndex,
    target: f64,
    n_pos: usize,
    n_neg: usize,
    reduced: bool,
    rng: &mut ChaCha8Rng,
) -> SampleDraw {
    let mut pool_indices: Vec<usize> = sample(rng, index.positives.len(), n_pos)
        .into_iter()
        .map(|k| index.positives[k])
        .collect();
    pool_indices.extend(
        sample(rng, index.negatives.len(), n_neg)
            .into_iter()
            .map(|k| index.negatives[k]),
    );
    let size = n_pos + n_neg;
    SampleDraw {
        document_ids: pool_indices.iter().map(|&i| pool.documents()[i].id).collect(),
        pool_indices,
        target_prevalence: target,
        realized_prevalence: n_pos as f64 / size as f64,
        sample_size: size,
        reduced,
    }
}

/// Draws `round(target * size)` positives and the complement in negatives,
/// each uniformly without replacement.
pub fn draw_sample_at_prevalence(
    pool: &LabeledCorpus,
    target_prevalence: f64,
    sample_size: usize,
    seed: u64,
) -> Result<SampleDraw> {
    let index = ClassIndex::new(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_exact(pool, &index, target_prevalence, sample_size, &mut rng)
}

/// Like [`draw_sample_at_prevalence`] with a precomputed index and caller
/// supplied generator.
pub fn draw_exact(
    pool: &LabeledCorpus,
    index: &ClassIndex,
    target: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleDraw> {
    check_target(target, size)?;
    let n_pos = positive_count(target, size);
    let n_neg = size - n_pos;
    if n_pos > index.positives.len() || n_neg > index.negatives.len() {
        let (class, need, have) = if n_pos > index.positives.len() {
            ("positive", n_pos, index.positives.len())
        } else {
            ("negative", n_neg, index.negatives.len())
        };
        return Err(Error::InsufficientData(format!(
            "sample of {size} at prevalence {target} needs {need} {class} documents, pool has {have} (short by {})",
            need - have
        )));
    }
    Ok(assemble(pool, index, target, n_pos, n_neg, false, rng))
}

/// Draws at `target`, shrinking the sample to the largest feasible size
/// if a class is too small. Fails only if a class the target requires is
/// empty.
pub fn draw_feasible(
    pool: &LabeledCorpus,
    index: &ClassIndex,
    target: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleDraw> {
    check_target(target, size)?;
    let fits = |s: usize| {
        let p = positive_count(target, s);
        p <= index.positives.len() && s - p <= index.negatives.len()
    };
    let feasible = (1..=size).rev().find(|&s| fits(s)).ok_or_else(|| {
        Error::InsufficientData(format!(
            "no sample at prevalence {target} can be drawn: pool has {} positive and {} negative documents",
            index.positives.len(),
            index.negatives.len()
        ))
    })?;
    let n_pos = positive_count(target, feasible);
    Ok(assemble(
        pool,
        index,
        target,
        n_pos,
        feasible - n_pos,
        feasible < size,
        rng,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{Document, Label};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n_pos: usize, n_neg: usize) -> LabeledCorpus {
        let docs = (0..n_pos + n_neg)
            .map(|i| {
                let l = if i < n_pos { Label::Positive } else { Label::Negative };
                Document::new(100 + i, "", l)
            })
            .collect();
        LabeledCorpus::new(docs, 0).unwrap()
    }

    #[test]
    fn grid_matches_protocol() {
        let g = prevalence_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[20], 0.99);
        assert_eq!(g[1], 0.05);
        for w in g[1..20].windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert!((a + b - 1.0).abs() < 1e-12);
        }
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn draws_at_half_and_extremes() {
        let pool = corpus(600, 600);
        let d = draw_sample_at_prevalence(&pool, 0.5, 500, 1).unwrap();
        assert_eq!(d.sample_size, 500);
        let pos = d.pool_indices.iter().filter(|&&i| i < 600).count();
        assert_eq!(pos, 250);

        let d = draw_sample_at_prevalence(&pool, 0.01, 500, 1).unwrap();
        assert_eq!(d.pool_indices.iter().filter(|&&i| i < 600).count(), 5);
        assert_eq!(d.realized_prevalence, 0.01);

        let all_pos = corpus(10, 0);
        let d = draw_sample_at_prevalence(&all_pos, 1.0, 10, 3).unwrap();
        assert_eq!(d.realized_prevalence, 1.0);
    }

    #[test]
    fn insufficient_class_names_deficit() {
        let pool = corpus(3, 100);
        let err = draw_sample_at_prevalence(&pool, 0.5, 10, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("positive") && msg.contains("short by 2"), "{msg}");
    }

    #[test]
    fn feasible_draw_shrinks() {
        let pool = corpus(3, 100);
        let index = ClassIndex::new(&pool);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = draw_feasible(&pool, &index, 0.5, 10, &mut rng).unwrap();
        assert!(d.reduced);
        assert_eq!(d.sample_size, 6);
        assert_eq!(d.realized_prevalence, 0.5);
        let empty = corpus(0, 10);
        let index = ClassIndex::new(&empty);
        assert!(draw_feasible(&empty, &index, 0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let c = corpus(50, 50);
        let (tr, va) = split_train_val(&c, 0.6, 9).unwrap();
        assert_eq!(tr.len(), 60);
        assert_eq!(tr.count_positive(), 30);
        assert_eq!(va.len(), 40);
        let (tr2, _) = split_train_val(&c, 0.6, 9).unwrap();
        assert_eq!(tr, tr2);
        assert!(split_train_val(&corpus(1, 10), 0.6, 0).is_err());
        assert!(split_train_val(&c, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn draw_invariants(target in 0.0f64..=1.0, size in 1usize..300, seed in any::<u64>()) {
            let pool = corpus(300, 300);
            let d = draw_sample_at_prevalence(&pool, target, size, seed).unwrap();
            prop_assert!((d.realized_prevalence - target).abs() <= 1.0 / size as f64);
            let unique: HashSet<_> = d.document_ids.iter().collect();
            prop_assert_eq!(unique.len(), size);
        }

        #[test]
        fn split_partitions(n_pos in 2usize..60, n_neg in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let c = corpus(n_pos, n_neg);
            let (a, b) = split_train_val(&c, frac, seed).unwrap();
            let ids_a: HashSet<_> = a.documents().iter().map(|d| d.id).collect();
            let ids_b: HashSet<_> = b.documents().iter().map(|d| d.id).collect();
            prop_assert!(ids_a.is_disjoint(&ids_b));
            prop_assert_eq!(ids_a.len() + ids_b.len(), c.len());
            let want = frac * n_pos as f64;
            prop_assert!((a.count_positive() as f64 - want).abs() <= 1.0);
            let want = frac * n_neg as f64;
            prop_assert!((a.count_negative() as f64 - want).abs() <= 1.0);
        }
    }
}
