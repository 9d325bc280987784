//! Probabilistic classifiers exposing a posterior and a document embedding
//! for every document.

pub mod mnb;
pub mod neural;
pub mod oracle;

use crate::data::{ClassIndex, Document, Label, LabeledCorpus};
use crate::error::{Error, Result};

pub use mnb::{train_mnb, MnbModel};
pub use neural::{
    train_lstm_classifier, train_mlp_classifier, Architecture, NeuralClassifierModel, NeuralTrainConfig, TrainReport,
};
pub use oracle::OracleClassifier;

/// What a classifier reports for one document.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub posterior_positive: f64,
    pub embedding: Vec<f64>,
    pub hard_prediction: Label,
}

impl ClassifierOutput {
    /// Thresholds at 0.5; a posterior of exactly 0.5 counts as positive.
    pub fn new(posterior_positive: f64, embedding: Vec<f64>) -> Self {
        let hard_prediction = if posterior_positive >= 0.5 {
            Label::Positive
        } else {
            Label::Negative
        };
        ClassifierOutput {
            posterior_positive,
            embedding,
            hard_prediction,
        }
    }

    pub fn posterior_negative(&self) -> f64 {
        1.0 - self.posterior_positive
    }

    pub fn predicts_positive(&self) -> bool {
        self.hard_prediction == Label::Positive
    }
}

pub trait Classifier: Send + Sync {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>>;

    fn embedding_dim(&self) -> usize;

    fn name(&self) -> &str;
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>> {
        (**self).predict(docs)
    }

    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<C: Classifier + ?Sized> Classifier for std::sync::Arc<C> {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>> {
        (**self).predict(docs)
    }

    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// A corpus together with one classifier's outputs for every document.
///
/// Classifiers are frozen once trained, so samples drawn from the pool can
/// reuse these outputs instead of re-running the classifier.
#[derive(Clone, Debug)]
pub struct ScoredPool {
    pub corpus: LabeledCorpus,
    pub outputs: Vec<ClassifierOutput>,
    pub index: ClassIndex,
}

impl ScoredPool {
    pub fn new(corpus: LabeledCorpus, classifier: &dyn Classifier) -> Result<Self> {
        let outputs = classifier.predict(corpus.documents())?;
        Self::from_outputs(corpus, outputs)
    }

    pub fn from_outputs(corpus: LabeledCorpus, outputs: Vec<ClassifierOutput>) -> Result<Self> {
        if outputs.len() != corpus.len() {
            return Err(Error::invalid(format!(
                "{} outputs for {} documents",
                outputs.len(),
                corpus.len()
            )));
        }
        let index = ClassIndex::new(&corpus);
        Ok(ScoredPool { corpus, outputs, index })
    }

    pub fn select(&self, pool_indices: &[usize]) -> Vec<ClassifierOutput> {
        pool_indices.iter().map(|&i| self.outputs[i].clone()).collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.outputs.first().map_or(0, |o| o.embedding.len())
    }
}

/// Fraction of `outputs` whose hard prediction matches `docs`' labels.
pub fn accuracy(outputs: &[ClassifierOutput], docs: &[Document]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .iter()
        .zip(docs)
        .filter(|(o, d)| o.hard_prediction == d.label)
        .count();
    hits as f64 / outputs.len() as f64
}
