use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Classifier, ClassifierOutput};
use crate::data::{Label, LabeledCorpus};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContingencyTable {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
    pub kind: TableKind,
}

impl ContingencyTable {
    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_lengths(outputs: &[ClassifierOutput], labels: &[Label]) -> Result<()> {
    if outputs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            outputs.len(),
            labels.len()
        )));
    }
    if labels.contains(&Label::Unknown) {
        return Err(Error::invalid("contingency tables need known labels"));
    }
    Ok(())
}

pub fn hard_contingency(outputs: &[ClassifierOutput], labels: &[Label]) -> Result<ContingencyTable> {
    check_lengths(outputs, labels)?;
    let mut t = ContingencyTable {
        tp: 0.0,
        fp: 0.0,
        fn_: 0.0,
        tn: 0.0,
        kind: TableKind::Hard,
    };
    for (o, l) in outputs.iter().zip(labels) {
        match (o.predicts_positive(), l.is_positive()) {
            (true, true) => t.tp += 1.0,
            (true, false) => t.fp += 1.0,
            (false, true) => t.fn_ += 1.0,
            (false, false) => t.tn += 1.0,
        }
    }
    Ok(t)
}

/// Expected counts: each document contributes its posterior to the
/// predicted-positive cell and the complement to the predicted-negative one.
///
/// The negative-prediction cells are taken as class size minus the
/// positive-prediction cell, so the row sums come out as exact integers.
pub fn soft_contingency(outputs: &[ClassifierOutput], labels: &[Label]) -> Result<ContingencyTable> {
    check_lengths(outputs, labels)?;
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (o, l) in outputs.iter().zip(labels) {
        if l.is_positive() {
            tp += o.posterior_positive;
            n_pos += 1;
        } else {
            fp += o.posterior_positive;
            n_neg += 1;
        }
    }
    Ok(ContingencyTable {
        tp,
        fp,
        fn_: n_pos as f64 - tp,
        tn: n_neg as f64 - fp,
        kind: TableKind::Soft,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePair {
    pub tpr: f64,
    pub fpr: f64,
    /// Set when a class was absent and its rate defaulted to 0.5.
    pub degenerate: bool,
}

pub fn rates(table: &ContingencyTable) -> RatePair {
    let ratio = |num: f64, den: f64| if den > 0.0 { (num / den, false) } else { (0.5, true) };
    let (tpr, d1) = ratio(table.tp, table.tp + table.fn_);
    let (fpr, d2) = ratio(table.fp, table.fp + table.tn);
    RatePair {
        tpr,
        fpr,
        degenerate: d1 || d2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateSource {
    HeldOut,
    KFold(usize),
    /// Supplied directly rather than measured.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimates {
    pub tpr_hard: f64,
    pub fpr_hard: f64,
    pub tpr_soft: f64,
    pub fpr_soft: f64,
    pub source: RateSource,
    pub sample_size: usize,
    pub degenerate: bool,
}

impl RateEstimates {
    /// Known rates, identical for the hard and soft variants.
    pub fn exact(tpr: f64, fpr: f64) -> Self {
        RateEstimates {
            tpr_hard: tpr,
            fpr_hard: fpr,
            tpr_soft: tpr,
            fpr_soft: fpr,
            source: RateSource::Exact,
            sample_size: 0,
            degenerate: false,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tpr_hard, self.fpr_hard, self.tpr_soft, self.fpr_soft]
    }
}

pub fn rate_estimates_from(
    outputs: &[ClassifierOutput],
    labels: &[Label],
    source: RateSource,
) -> Result<RateEstimates> {
    let hard = rates(&hard_contingency(outputs, labels)?);
    let soft = rates(&soft_contingency(outputs, labels)?);
    Ok(RateEstimates {
        tpr_hard: hard.tpr,
        fpr_hard: hard.fpr,
        tpr_soft: soft.tpr,
        fpr_soft: soft.fpr,
        source,
        sample_size: outputs.len(),
        degenerate: hard.degenerate || soft.degenerate,
    })
}

fn both_classes(corpus: &LabeledCorpus, what: &str) -> Result<()> {
    if corpus.count_positive() == 0 || corpus.count_negative() == 0 {
        return Err(Error::InsufficientData(format!("{what} must contain both classes")));
    }
    Ok(())
}

/// Rates measured by applying a trained classifier to held-out data.
pub fn estimate_rates(classifier: &dyn Classifier, validation: &LabeledCorpus) -> Result<RateEstimates> {
    both_classes(validation, "validation set")?;
    let outputs = classifier.predict(validation.documents())?;
    rate_estimates_from(&outputs, &validation.labels(), RateSource::HeldOut)
}

/// k-fold cross-validated rates: `train` is called on each k−1 fold union
/// and its predictions on the held fold are pooled into one table.
pub fn estimate_rates_kfold<F>(corpus: &LabeledCorpus, k: usize, seed: u64, mut train: F) -> Result<RateEstimates>
where
    F: FnMut(&LabeledCorpus) -> Result<Box<dyn Classifier>>,
{
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    both_classes(corpus, "corpus")?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, d) in corpus.documents().iter().enumerate() {
        if d.label.is_positive() {
            pos.push(i)
        } else {
            neg.push(i)
        }
    }
    if pos.len() < k || neg.len() < k {
        return Err(Error::InsufficientData(format!(
            "{k}-fold split needs at least {k} documents per class ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_of = vec![0; corpus.len()];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        fold_of[i] = j % k;
    }
    let mut outputs = Vec::with_capacity(corpus.len());
    let mut labels = Vec::with_capacity(corpus.len());
    for fold in 0..k {
        let (held, rest): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| fold_of[i] == fold);
        let model = train(&corpus.subset(&rest))?;
        let held = corpus.subset(&held);
        outputs.extend(model.predict(held.documents())?);
        labels.extend(held.labels());
    }
    rate_estimates_from(&outputs, &labels, RateSource::KFold(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::OracleClassifier;
    use crate::data::Document;
    use crate::quantifiers::acc;
    use proptest::prelude::*;

    fn outs(ps: &[f64]) -> Vec<ClassifierOutput> {
        ps.iter().map(|&p| ClassifierOutput::new(p, vec![])).collect()
    }

    fn labels(n_pos: usize, n_neg: usize) -> Vec<Label> {
        let mut l = vec![Label::Positive; n_pos];
        l.extend(vec![Label::Negative; n_neg]);
        l
    }

    fn corpus(n_pos: usize, n_neg: usize) -> LabeledCorpus {
        let docs = labels(n_pos, n_neg)
            .into_iter()
            .enumerate()
            .map(|(i, l)| Document::new(i, "", l))
            .collect();
        LabeledCorpus::new(docs, 0).unwrap()
    }

    #[test]
    fn hard_table_examples() {
        let l = labels(3, 2);
        let t = hard_contingency(&outs(&[0.9, 0.8, 0.7, 0.1, 0.2]), &l).unwrap();
        assert_eq!((t.tp, t.fp, t.fn_, t.tn), (3.0, 0.0, 0.0, 2.0));
        let t = hard_contingency(&outs(&[0.9; 5]), &l).unwrap();
        assert_eq!((t.tp, t.fp), (3.0, 2.0));
        let t = hard_contingency(&outs(&[0.9, 0.4]), &labels(2, 0)).unwrap();
        assert_eq!((t.tp, t.fn_), (1.0, 1.0));
        assert!(hard_contingency(&outs(&[0.9]), &l).is_err());
    }

    #[test]
    fn soft_table_examples() {
        let t = soft_contingency(&outs(&[0.7]), &labels(1, 0)).unwrap();
        assert!((t.tp - 0.7).abs() < 1e-15 && (t.fn_ - 0.3).abs() < 1e-15);
        let t = soft_contingency(&outs(&[1.0; 4]), &labels(4, 0)).unwrap();
        assert_eq!((t.tp, t.fp, t.fn_, t.tn), (4.0, 0.0, 0.0, 0.0));
        assert!(soft_contingency(&outs(&[0.5]), &[]).is_err());
    }

    #[test]
    fn rate_examples() {
        let t = ContingencyTable {
            tp: 8.0,
            fp: 1.0,
            fn_: 2.0,
            tn: 9.0,
            kind: TableKind::Hard,
        };
        let r = rates(&t);
        assert!((r.tpr - 0.8).abs() < 1e-15 && (r.fpr - 0.1).abs() < 1e-15);
        assert!(!r.degenerate);
        let empty = ContingencyTable { tp: 0.0, fn_: 0.0, ..t };
        let r = rates(&empty);
        assert_eq!(r.tpr, 0.5);
        assert!(r.degenerate);
        let perfect = ContingencyTable { fp: 0.0, fn_: 0.0, ..t };
        let r = rates(&perfect);
        assert_eq!((r.tpr, r.fpr), (1.0, 0.0));
    }

    #[test]
    fn held_out_oracle_rates_concentrate() {
        let c = corpus(5000, 5000);
        let o = OracleClassifier::new(0.9, 0.1, 7).unwrap();
        let r = estimate_rates(&o, &c).unwrap();
        assert!((0.88..=0.92).contains(&r.tpr_hard), "{}", r.tpr_hard);
        assert!((0.08..=0.12).contains(&r.fpr_hard), "{}", r.fpr_hard);
        assert_eq!(r.sample_size, 10_000);
        assert!(estimate_rates(&o, &corpus(10, 0)).is_err());

        let perfect = OracleClassifier::new(1.0, 0.0, 7).unwrap();
        let r = estimate_rates(&perfect, &c).unwrap();
        assert_eq!((r.tpr_hard, r.fpr_hard), (1.0, 0.0));
        assert!(r.tpr_soft > 0.7 && r.fpr_soft < 0.3);
    }

    #[test]
    fn kfold_matches_held_out() {
        let c = corpus(2000, 2000);
        let o = OracleClassifier::new(0.85, 0.2, 3).unwrap();
        let held = estimate_rates(&o, &c).unwrap();
        let folded = estimate_rates_kfold(&c, 2, 11, |_| Ok(Box::new(o.clone()) as Box<dyn Classifier>)).unwrap();
        assert_eq!(folded.source, RateSource::KFold(2));
        for (a, b) in held.as_array().iter().zip(folded.as_array()) {
            assert!((a - b).abs() < 0.05);
        }
        assert!(estimate_rates_kfold(&c, 1, 0, |_| Ok(Box::new(o.clone()) as Box<dyn Classifier>)).is_err());
    }

    /// Predictions with exactly `k` of `n_pos` positives and `j` of `n_neg`
    /// negatives predicted positive.
    fn constructed(n_pos: usize, k: usize, n_neg: usize, j: usize) -> Vec<ClassifierOutput> {
        let mut v = Vec::new();
        v.extend((0..n_pos).map(|i| if i < k { 0.9 } else { 0.1 }));
        v.extend((0..n_neg).map(|i| if i < j { 0.9 } else { 0.1 }));
        outs(&v)
    }

    #[test]
    fn exact_rates_recover_prevalence_over_grid() {
        let n = 500;
        for p in crate::data::prevalence_grid() {
            let n_pos = crate::data::positive_count(p, n);
            let n_neg = n - n_pos;
            let (k, j) = (
                (0.8 * n_pos as f64).round() as usize,
                (0.2 * n_neg as f64).round() as usize,
            );
            let o = constructed(n_pos, k, n_neg, j);
            let t = rates(&hard_contingency(&o, &labels(n_pos, n_neg)).unwrap());
            let est = acc(&o, &RateEstimates::exact(t.tpr, t.fpr)).unwrap();
            assert!(
                (est.p_positive - p).abs() <= 1.0 / n as f64,
                "p={p}: {}",
                est.p_positive
            );
        }
    }

    proptest! {
        #[test]
        fn soft_identities(rows in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
            let o: Vec<ClassifierOutput> = rows.iter().map(|(p, _)| ClassifierOutput::new(*p, vec![])).collect();
            let l: Vec<Label> = rows.iter().map(|(_, b)| if *b { Label::Positive } else { Label::Negative }).collect();
            let t = soft_contingency(&o, &l).unwrap();
            let n_pos = l.iter().filter(|l| l.is_positive()).count() as f64;
            prop_assert_eq!(t.tp + t.fn_, n_pos);
            prop_assert_eq!(t.fp + t.tn, l.len() as f64 - n_pos);
            prop_assert!((t.total() - l.len() as f64).abs() < 1e-9);
            let h = hard_contingency(&o, &l).unwrap();
            prop_assert_eq!(h.total(), l.len() as f64);
        }
    }
}
