//! Multinomial naive Bayes with additive smoothing.

use std::path::Path;

use crate::classifier::{Classifier, ClassifierOutput};
use crate::data::{Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::params_io::{load_params, save_params};
use crate::tensor::{ParamSet, Tensor};

/// Index 0 is the positive class, 1 the negative class.
#[derive(Clone, Debug, PartialEq)]
pub struct MnbModel {
    pub log_prior: [f64; 2],
    /// Row-major (2 × vocab) log-likelihoods.
    pub log_likelihood: Vec<f64>,
    pub vocab_size: usize,
    pub alpha: f64,
    pub embedding_dim: usize,
}

pub fn train_mnb(train: &LabeledCorpus, alpha: f64) -> Result<MnbModel> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let v = train.feature_dim();
    if v == 0 {
        return Err(Error::invalid("corpus is not featurized"));
    }
    let n = train.len();
    let n_pos = train.count_positive();
    if n_pos == 0 || n_pos == n {
        return Err(Error::InsufficientData(
            "MNB needs both classes in training data".into(),
        ));
    }
    let mut counts = vec![0.0; 2 * v];
    for d in train.documents() {
        let row = if d.label.is_positive() { 0 } else { 1 };
        for &(i, w) in &d.features {
            if w < 0.0 {
                return Err(Error::invalid(format!(
                    "document {} has negative feature weight {w}",
                    d.id
                )));
            }
            counts[row * v + i] += w;
        }
    }
    let mut log_likelihood = vec![0.0; 2 * v];
    for c in 0..2 {
        let row = &counts[c * v..(c + 1) * v];
        let total: f64 = row.iter().sum();
        let denom = (total + alpha * v as f64).ln();
        for (ll, &cnt) in log_likelihood[c * v..(c + 1) * v].iter_mut().zip(row) {
            *ll = (cnt + alpha).ln() - denom;
        }
    }
    let p = n_pos as f64 / n as f64;
    Ok(MnbModel {
        log_prior: [p.ln(), (1.0 - p).ln()],
        log_likelihood,
        vocab_size: v,
        alpha,
        embedding_dim: 2,
    })
}

impl MnbModel {
    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim.max(2);
        self
    }

    pub fn likelihoods(&self, class: usize) -> &[f64] {
        &self.log_likelihood[class * self.vocab_size..(class + 1) * self.vocab_size]
    }

    fn joint(&self, doc: &Document) -> Result<([f64; 2], f64)> {
        let mut ll = [0.0; 2];
        let mut mass = 0.0;
        for &(i, w) in &doc.features {
            if i >= self.vocab_size {
                return Err(Error::shape(
                    "mnb predict",
                    format!("feature {i} outside vocabulary of {}", self.vocab_size),
                ));
            }
            ll[0] += w * self.likelihoods(0)[i];
            ll[1] += w * self.likelihoods(1)[i];
            mass += w;
        }
        Ok((ll, mass))
    }

    fn output(&self, doc: &Document) -> Result<ClassifierOutput> {
        let (ll, mass) = self.joint(doc)?;
        let a = self.log_prior[0] + ll[0];
        let b = self.log_prior[1] + ll[1];
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let posterior = ea / (ea + eb);
        let mut embedding = vec![0.0; self.embedding_dim];
        if mass > 0.0 {
            embedding[0] = ll[0] / mass;
            embedding[1] = ll[1] / mass;
        }
        Ok(ClassifierOutput::new(posterior, embedding))
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        set.insert("mnb.logprior", Tensor::vector(self.log_prior.to_vec()))?;
        set.insert(
            "mnb.loglik",
            Tensor::matrix(2, self.vocab_size, self.log_likelihood.clone())?,
        )?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_params(&self.to_params()?, path)
    }

    pub fn load(path: impl AsRef<Path>, alpha: f64) -> Result<Self> {
        let set = load_params(path)?;
        let prior = set
            .find("mnb.logprior")
            .ok_or_else(|| Error::Format("missing mnb.logprior".into()))?;
        let lik = set
            .find("mnb.loglik")
            .ok_or_else(|| Error::Format("missing mnb.loglik".into()))?;
        let lp = set.get(prior).data();
        let ll = set.get(lik);
        if lp.len() != 2 || ll.rank() != 2 || ll.shape()[0] != 2 {
            return Err(Error::Format("bad MNB parameter shapes".into()));
        }
        Ok(MnbModel {
            log_prior: [lp[0], lp[1]],
            log_likelihood: ll.data().to_vec(),
            vocab_size: ll.shape()[1],
            alpha,
            embedding_dim: 2,
        })
    }
}

impl Classifier for MnbModel {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>> {
        docs.iter().map(|d| self.output(d)).collect()
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn name(&self) -> &str {
        "mnb"
    }
}
