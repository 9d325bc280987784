//! Two-Gaussian synthetic corpora with closed-form Bayes posteriors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::corpus::{load_corpus_tsv, save_corpus_tsv, Document, Label, LabeledCorpus};
use crate::data::featurize::{features_to_pseudo_text, featurize_pseudo_text};
use crate::data::sampling::positive_count;
use crate::error::{Error, Result};

/// Class-conditional densities N(+s/2·u, I) for positives and N(-s/2·u, I)
/// for negatives, with `u` a unit direction.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPair {
    pub direction: Vec<f64>,
    pub separation: f64,
}

impl GaussianPair {
    pub fn new(dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(separation >= 0.0) {
            return Err(Error::invalid("separation must be nonnegative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut direction: Vec<f64>;
        loop {
            direction = (0..dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                direction.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        Ok(GaussianPair { direction, separation })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn mean(&self, label: Label) -> Vec<f64> {
        let s = if label.is_positive() { 0.5 } else { -0.5 } * self.separation;
        self.direction.iter().map(|u| s * u).collect()
    }

    /// Pr(positive | x) for class prior `prior`.
    pub fn bayes_posterior(&self, x: &[f64], prior: f64) -> f64 {
        let proj: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        let log_odds = self.separation * proj + (prior / (1.0 - prior)).ln();
        crate::graph::sigmoid(log_odds)
    }

    /// `n` documents, `round(prevalence * n)` of them positive, in shuffled
    /// order with ids `first_id..first_id + n`.
    pub fn sample_corpus(
        &self,
        n: usize,
        positive_prevalence: f64,
        seed: u64,
        first_id: usize,
    ) -> Result<LabeledCorpus> {
        if !(0.0..=1.0).contains(&positive_prevalence) {
            return Err(Error::invalid("prevalence outside [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_pos = positive_count(positive_prevalence, n);
        let mut labels: Vec<Label> = (0..n)
            .map(|i| if i < n_pos { Label::Positive } else { Label::Negative })
            .collect();
        labels.shuffle(&mut rng);
        let (mu_pos, mu_neg) = (self.mean(Label::Positive), self.mean(Label::Negative));
        let docs = labels
            .into_iter()
            .enumerate()
            .map(|(k, label)| {
                let mu = if label.is_positive() { &mu_pos } else { &mu_neg };
                let features = mu
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (i, m + z)
                    })
                    .collect();
                Document {
                    id: first_id + k,
                    text: String::new(),
                    features,
                    label,
                }
            })
            .collect();
        LabeledCorpus::new(docs, self.dim())
    }
}

/// Synthetic corpus of `n` documents in `dim` dimensions.
pub fn synthetic_corpus(
    n: usize,
    positive_prevalence: f64,
    separation: f64,
    dim: usize,
    seed: u64,
) -> Result<(LabeledCorpus, GaussianPair)> {
    if n < 2 {
        return Err(Error::invalid("synthetic corpus needs at least 2 documents"));
    }
    let gen = GaussianPair::new(dim, separation, seed)?;
    let corpus = gen.sample_corpus(n, positive_prevalence, seed.wrapping_add(1), 0)?;
    Ok((corpus, gen))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the corpus as TSV with `f<i>:<w>` pseudo-text plus a `<path>.meta`
/// key:value sidecar.
pub fn save_synthetic(corpus: &LabeledCorpus, gen: &GaussianPair, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let docs = corpus
        .documents()
        .iter()
        .map(|d| Document {
            text: features_to_pseudo_text(&d.features),
            ..d.clone()
        })
        .collect();
    save_corpus_tsv(&LabeledCorpus::new(docs, corpus.feature_dim())?, path)?;
    let mut meta = fs::File::create(sidecar(path))?;
    writeln!(meta, "generator: gaussian_pair")?;
    writeln!(meta, "n: {}", corpus.len())?;
    writeln!(meta, "positive_prevalence: {}", corpus.positive_prevalence())?;
    writeln!(meta, "separation: {}", gen.separation)?;
    writeln!(meta, "dim: {}", gen.dim())?;
    writeln!(meta, "seed: {seed}")?;
    let dir: Vec<String> = gen.direction.iter().map(f64::to_string).collect();
    writeln!(meta, "direction: {}", dir.join(","))?;
    Ok(())
}

/// Reads a corpus written by [`save_synthetic`].
pub fn load_synthetic(path: impl AsRef<Path>) -> Result<(LabeledCorpus, GaussianPair)> {
    let path = path.as_ref();
    let meta = fs::read_to_string(sidecar(path))?;
    let mut dim = None;
    let mut separation = None;
    let mut direction = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once(':') else { continue };
        let v = v.trim();
        let bad = || Error::invalid(format!("bad sidecar value for `{k}`: {v}"));
        match k.trim() {
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
            "separation" => separation = Some(v.parse::<f64>().map_err(|_| bad())?),
            "direction" => {
                direction = Some(
                    v.split(',')
                        .map(|x| x.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad())?,
                )
            }
            _ => {}
        }
    }
    let (Some(dim), Some(separation), Some(direction)) = (dim, separation, direction) else {
        return Err(Error::invalid("sidecar is missing dim/separation/direction"));
    };
    let mut corpus = load_corpus_tsv(path)?;
    featurize_pseudo_text(&mut corpus, dim)?;
    Ok((corpus, GaussianPair { direction, separation }))
}

pub fn has_synthetic_sidecar(path: impl AsRef<Path>) -> bool {
    sidecar(path.as_ref()).exists()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density(x: &[f64], mu: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI).powf(x.len() as f64 / 2.0)
    }

    #[test]
    fn prevalence_and_size() {
        let (c, _) = synthetic_corpus(1000, 0.8, 2.0, 3, 5).unwrap();
        assert_eq!(c.len(), 1000);
        assert_eq!(c.count_positive(), 800);
        assert_eq!(c.feature_dim(), 3);
        assert!(synthetic_corpus(1, 0.5, 1.0, 2, 0).is_err());
        assert!(synthetic_corpus(10, 0.5, -1.0, 2, 0).is_err());
        assert!(synthetic_corpus(10, 0.5, 1.0, 0, 0).is_err());
    }

    #[test]
    fn bayes_posterior_matches_density_ratio() {
        let gen = GaussianPair::new(2, 4.0, 17).unwrap();
        let (mp, mn) = (gen.mean(Label::Positive), gen.mean(Label::Negative));
        for (x, prior) in [([0.3, -0.2], 0.5), ([1.5, 0.7], 0.3), ([-2.0, 1.0], 0.9)] {
            let (fp, fneg) = (density(&x, &mp), density(&x, &mn));
            let want = prior * fp / (prior * fp + (1.0 - prior) * fneg);
            assert!((gen.bayes_posterior(&x, prior) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.tsv");
        let (c, gen) = synthetic_corpus(20, 0.5, 3.0, 4, 2).unwrap();
        save_synthetic(&c, &gen, 2, &path).unwrap();
        assert!(has_synthetic_sidecar(&path));
        let (back, gen2) = load_synthetic(&path).unwrap();
        assert_eq!(gen, gen2);
        assert_eq!(back.len(), 20);
        for (a, b) in c.documents().iter().zip(back.documents()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.features, b.features);
        }
    }
}
