use std::collections::BTreeMap;

use crate::data::corpus::{LabeledCorpus, SparseFeatures};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    Binary,
    Tf,
    /// 1 + ln(count)
    LogTf,
}

impl WeightScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightScheme::Binary => "binary",
            WeightScheme::Tf => "tf",
            WeightScheme::LogTf => "logtf",
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(WeightScheme::Binary),
            "tf" => Ok(WeightScheme::Tf),
            "logtf" => Ok(WeightScheme::LogTf),
            _ => Err(Error::invalid(format!("unknown weighting scheme `{s}`"))),
        }
    }
}

/// FNV-1a, 64 bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn hash_token(token: &str, hash_dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % hash_dim as u64) as usize
}

pub fn hashed_bow(text: &str, hash_dim: usize, scheme: WeightScheme) -> SparseFeatures {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for tok in tokenize(text) {
        *counts.entry(hash_token(&tok, hash_dim)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(i, c)| {
            let w = match scheme {
                WeightScheme::Binary => 1.0,
                WeightScheme::Tf => f64::from(c),
                WeightScheme::LogTf => 1.0 + f64::from(c).ln(),
            };
            (i, w)
        })
        .collect()
}

/// Hashes every document's text into `hash_dim` buckets.
pub fn featurize_hashed_bow(corpus: &mut LabeledCorpus, hash_dim: usize, scheme: WeightScheme) -> Result<()> {
    if hash_dim < 2 {
        return Err(Error::invalid("hash_dim must be at least 2"));
    }
    let features = corpus
        .documents()
        .iter()
        .map(|d| hashed_bow(&d.text, hash_dim, scheme))
        .collect();
    corpus.set_features(features, hash_dim);
    Ok(())
}

/// Renders dense features as `f<i>:<w>` pseudo-text.
pub fn features_to_pseudo_text(features: &SparseFeatures) -> String {
    features
        .iter()
        .map(|(i, w)| format!("f{i}:{w}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `f<i>:<w>` pseudo-text back into features of width `dim`.
pub fn featurize_pseudo_text(corpus: &mut LabeledCorpus, dim: usize) -> Result<()> {
    let mut all = Vec::with_capacity(corpus.len());
    for d in corpus.documents() {
        let mut feats = SparseFeatures::new();
        for tok in d.text.split_whitespace() {
            let bad = || Error::invalid(format!("document {}: bad feature token `{tok}`", d.id));
            let rest = tok.strip_prefix('f').ok_or_else(bad)?;
            let (i, w) = rest.split_once(':').ok_or_else(bad)?;
            let i: usize = i.parse().map_err(|_| bad())?;
            let w: f64 = w.parse().map_err(|_| bad())?;
            if i >= dim {
                return Err(bad());
            }
            feats.push((i, w));
        }
        feats.sort_by_key(|&(i, _)| i);
        all.push(feats);
    }
    corpus.set_features(all, dim);
    Ok(())
}
