//! QuaNet: a bidirectional LSTM over the posterior-sorted classifier
//! outputs of a sample, fused with eight aggregate statistics and
//! regressed onto the sample's class distribution.

mod model;
mod train;

pub use model::{QuaNetConfig, QuaNetModel, NUM_STATS};
pub use train::{
    make_training_batch, quanet_estimate, train_quanet, validation_set, QuaNetTrainConfig, QuaNetTrainReport,
    TrainingExample,
};

use std::cmp::Ordering;

use crate::classifier::ClassifierOutput;
use crate::error::{Error, Result};
use crate::quantifiers::{acc, cc, pacc, pcc, RateEstimates};

/// One sample prepared for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct QuaNetInput {
    /// (posterior, embedding), ascending by posterior.
    pub items: Vec<(f64, Vec<f64>)>,
    /// CC, ACC, PCC, PACC, tpr_hard, fpr_hard, tpr_soft, fpr_soft.
    pub stats: [f64; NUM_STATS],
}

impl QuaNetInput {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.items.first().map_or(0, |(_, e)| e.len())
    }
}

fn item_order(a: &ClassifierOutput, b: &ClassifierOutput) -> Ordering {
    a.posterior_positive.total_cmp(&b.posterior_positive).then_with(|| {
        a.embedding
            .iter()
            .zip(&b.embedding)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Sorts the outputs and computes the eight statistics from the sorted
/// list, so the result depends only on the multiset of outputs.
///
/// Equal posteriors are ordered by their embeddings; items equal in both
/// are interchangeable.
pub fn build_input(outputs: &[ClassifierOutput], rates: &RateEstimates) -> Result<QuaNetInput> {
    if outputs.is_empty() {
        return Err(Error::invalid("cannot build a QuaNet input from an empty sample"));
    }
    let dim = outputs[0].embedding.len();
    if outputs.iter().any(|o| o.embedding.len() != dim) {
        return Err(Error::shape("build_input", "embeddings differ in length"));
    }
    let mut sorted: Vec<&ClassifierOutput> = outputs.iter().collect();
    sorted.sort_by(|a, b| item_order(a, b));
    let sorted: Vec<ClassifierOutput> = sorted.into_iter().cloned().collect();
    let stats = [
        cc(&sorted)?.p_positive,
        acc(&sorted, rates)?.p_positive,
        pcc(&sorted)?.p_positive,
        pacc(&sorted, rates)?.p_positive,
        rates.tpr_hard,
        rates.fpr_hard,
        rates.tpr_soft,
        rates.fpr_soft,
    ];
    Ok(QuaNetInput {
        items: sorted
            .into_iter()
            .map(|o| (o.posterior_positive, o.embedding))
            .collect(),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn out(p: f64, e: f64) -> ClassifierOutput {
        ClassifierOutput::new(p, vec![e, -e])
    }

    #[test]
    fn sorts_ascending() {
        let r = RateEstimates::exact(0.8, 0.2);
        let i = build_input(&[out(0.9, 0.0), out(0.1, 0.0), out(0.5, 0.0)], &r).unwrap();
        let ps: Vec<f64> = i.items.iter().map(|x| x.0).collect();
        assert_eq!(ps, vec![0.1, 0.5, 0.9]);
        assert_eq!(i.stats.len(), 8);
        assert!(i.stats.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(build_input(&[], &r).is_err());
    }

    #[test]
    fn permutation_gives_identical_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = RateEstimates::exact(0.7, 0.25);
        let mut outs: Vec<ClassifierOutput> = (0..60)
            .map(|k| out((k % 7) as f64 / 7.0, (k % 5) as f64 + 0.1 * k as f64))
            .collect();
        let base = build_input(&outs, &r).unwrap();
        for _ in 0..20 {
            outs.shuffle(&mut rng);
            assert_eq!(build_input(&outs, &r).unwrap(), base);
        }
    }
}
