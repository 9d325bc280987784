//! Corpora, featurization, splits, synthetic data, and prevalence-controlled
//! sampling.

pub mod corpus;
pub mod featurize;
pub mod sampling;
pub mod synthetic;

pub use corpus::{load_corpus_tsv, save_corpus_tsv, Document, Label, LabeledCorpus, SparseFeatures};
pub use featurize::{featurize_hashed_bow, featurize_pseudo_text, hash_token, tokenize, WeightScheme};
pub use sampling::{
    draw_exact, draw_feasible, draw_sample_at_prevalence, positive_count, prevalence_grid, split_train_val, ClassIndex,
    SampleDraw,
};
pub use synthetic::{load_synthetic, save_synthetic, synthetic_corpus, GaussianPair};
