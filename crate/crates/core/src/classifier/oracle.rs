use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Classifier, ClassifierOutput};
use crate::data::{Document, Label};
use crate::error::{Error, Result};

/// A synthetic classifier with prescribed hit rates.
///
/// A positive document lands in the upper half of the posterior range with
/// probability `tpr_target`; a negative one with probability `fpr_target`.
/// Randomness is a pure function of `(noise_seed, document id)`, so a
/// document always receives the same posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleClassifier {
    pub tpr_target: f64,
    pub fpr_target: f64,
    pub noise_seed: u64,
}

pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl OracleClassifier {
    pub fn new(tpr_target: f64, fpr_target: f64, noise_seed: u64) -> Result<Self> {
        for (name, v) in [("tpr", tpr_target), ("fpr", fpr_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} target {v} outside [0, 1]")));
            }
        }
        Ok(OracleClassifier {
            tpr_target,
            fpr_target,
            noise_seed,
        })
    }

    pub fn posterior(&self, doc: &Document) -> Result<f64> {
        let hit_rate = match doc.label {
            Label::Positive => self.tpr_target,
            Label::Negative => self.fpr_target,
            Label::Unknown => {
                return Err(Error::invalid(format!(
                    "oracle classifier needs the true label of document {}",
                    doc.id
                )))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.noise_seed, doc.id as u64));
        let above = rng.random::<f64>() < hit_rate;
        let u: f64 = rng.random_range(0.0..0.5);
        Ok(if above { 0.5 + u } else { u })
    }
}

impl Classifier for OracleClassifier {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>> {
        docs.iter()
            .map(|d| {
                let p = self.posterior(d)?;
                Ok(ClassifierOutput::new(p, vec![p, 1.0 - p]))
            })
            .collect()
    }

    fn embedding_dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize, label: Label) -> Vec<Document> {
        (0..n).map(|i| Document::new(i, "", label)).collect()
    }

    #[test]
    fn perfect_oracle_separates() {
        let o = OracleClassifier::new(1.0, 0.0, 3).unwrap();
        let pos = o.predict(&docs(200, Label::Positive)).unwrap();
        assert!(pos.iter().all(|x| x.posterior_positive >= 0.5));
        let neg = o.predict(&docs(200, Label::Negative)).unwrap();
        assert!(neg.iter().all(|x| x.posterior_positive < 0.5));
    }

    #[test]
    fn hit_rate_concentrates() {
        let o = OracleClassifier::new(0.8, 0.1, 11).unwrap();
        let out = o.predict(&docs(10_000, Label::Positive)).unwrap();
        let frac = out.iter().filter(|x| x.posterior_positive >= 0.5).count() as f64 / 1e4;
        assert!((0.78..=0.82).contains(&frac), "{frac}");
    }

    #[test]
    fn deterministic_and_label_required() {
        let o = OracleClassifier::new(0.7, 0.3, 5).unwrap();
        let d = docs(50, Label::Negative);
        assert_eq!(o.predict(&d).unwrap(), o.predict(&d).unwrap());
        assert!(o.predict(&[Document::new(0, "", Label::Unknown)]).is_err());
        assert!(OracleClassifier::new(1.2, 0.0, 0).is_err());
        for out in o.predict(&d).unwrap() {
            assert_eq!(out.embedding.len(), 2);
            assert!((0.0..=1.0).contains(&out.posterior_positive));
        }
    }
}
