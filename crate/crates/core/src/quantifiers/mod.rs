//! Classify-and-count estimators, contingency tables and EM prior
//! adjustment.

mod emq;
mod rates;

pub use emq::{emq, EmqResult, EMQ_CLAMP, EMQ_MAX_ITER, EMQ_TOL};
pub use rates::{
    estimate_rates, estimate_rates_kfold, hard_contingency, rate_estimates_from, rates, soft_contingency,
    ContingencyTable, RateEstimates, RatePair, RateSource, TableKind,
};

use crate::classifier::ClassifierOutput;
use crate::error::{Error, Result};

/// Below this `|tpr - fpr|` the adjusted estimators fall back to the
/// unadjusted ones.
pub const DEGENERATE_GAP: f64 = 1e-6;

/// The six estimators the toolkit compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cc,
    Acc,
    Pcc,
    Pacc,
    Emq,
    QuaNet,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Cc,
        Method::Acc,
        Method::Pcc,
        Method::Pacc,
        Method::Emq,
        Method::QuaNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cc => "cc",
            Method::Acc => "acc",
            Method::Pcc => "pcc",
            Method::Pacc => "pacc",
            Method::Emq => "emq",
            Method::QuaNet => "quanet",
        }
    }

    /// Parses a comma separated list, ignoring blanks and duplicates.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown quantifier `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceEstimate {
    pub p_positive: f64,
    pub p_negative: f64,
    pub method: String,
    /// The raw value fell outside [0, 1] and was clamped.
    pub clipped: bool,
    /// An adjustment was skipped because its denominator vanished.
    pub degenerate: bool,
}

impl PrevalenceEstimate {
    /// Clamps `raw` into [0, 1], recording whether that changed it.
    pub fn new(raw: f64, method: impl Into<String>) -> Self {
        let p = raw.clamp(0.0, 1.0);
        PrevalenceEstimate {
            p_positive: p,
            p_negative: 1.0 - p,
            method: method.into(),
            clipped: p != raw,
            degenerate: false,
        }
    }

    fn degenerate(mut self) -> Self {
        self.degenerate = true;
        self
    }

    pub fn as_pair(&self) -> [f64; 2] {
        [self.p_positive, self.p_negative]
    }
}

fn non_empty(outputs: &[ClassifierOutput]) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::invalid("cannot estimate prevalence of an empty sample"));
    }
    Ok(())
}

fn cc_value(outputs: &[ClassifierOutput]) -> f64 {
    outputs.iter().filter(|o| o.predicts_positive()).count() as f64 / outputs.len() as f64
}

fn pcc_value(outputs: &[ClassifierOutput]) -> f64 {
    outputs.iter().map(|o| o.posterior_positive).sum::<f64>() / outputs.len() as f64
}

/// `(p - fpr) / (tpr - fpr)`, or `None` when the rates are too close.
pub fn adjust(p: f64, tpr: f64, fpr: f64) -> Option<f64> {
    let gap = tpr - fpr;
    if gap.abs() < DEGENERATE_GAP {
        None
    } else {
        Some((p - fpr) / gap)
    }
}

pub fn cc(outputs: &[ClassifierOutput]) -> Result<PrevalenceEstimate> {
    non_empty(outputs)?;
    Ok(PrevalenceEstimate::new(cc_value(outputs), "cc"))
}

pub fn pcc(outputs: &[ClassifierOutput]) -> Result<PrevalenceEstimate> {
    non_empty(outputs)?;
    Ok(PrevalenceEstimate::new(pcc_value(outputs), "pcc"))
}

pub fn acc(outputs: &[ClassifierOutput], rates: &RateEstimates) -> Result<PrevalenceEstimate> {
    non_empty(outputs)?;
    let p = cc_value(outputs);
    Ok(match adjust(p, rates.tpr_hard, rates.fpr_hard) {
        Some(raw) => PrevalenceEstimate::new(raw, "acc"),
        None => PrevalenceEstimate::new(p, "acc").degenerate(),
    })
}

pub fn pacc(outputs: &[ClassifierOutput], rates: &RateEstimates) -> Result<PrevalenceEstimate> {
    non_empty(outputs)?;
    let p = pcc_value(outputs);
    Ok(match adjust(p, rates.tpr_soft, rates.fpr_soft) {
        Some(raw) => PrevalenceEstimate::new(raw, "pacc"),
        None => PrevalenceEstimate::new(p, "pacc").degenerate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outs(ps: &[f64]) -> Vec<ClassifierOutput> {
        ps.iter().map(|&p| ClassifierOutput::new(p, vec![])).collect()
    }

    #[test]
    fn cc_and_pcc_examples() {
        let o = outs(&[0.9, 0.2, 0.7, 0.4]);
        assert_eq!(cc(&o).unwrap().p_positive, 0.5);
        assert!((pcc(&o).unwrap().p_positive - 0.55).abs() < 1e-12);
        assert_eq!(cc(&outs(&[0.5, 0.8])).unwrap().p_positive, 1.0);
        assert_eq!(pcc(&outs(&[0.5, 0.5])).unwrap().p_positive, 0.5);
        assert_eq!(pcc(&outs(&[1.0])).unwrap().p_positive, 1.0);
        assert!(cc(&[]).is_err());
        assert!(pcc(&[]).is_err());
    }

    #[test]
    fn acc_examples() {
        let o = outs(&[0.9, 0.2, 0.7, 0.4]);
        let r = RateEstimates::exact(0.8, 0.2);
        let e = acc(&o, &r).unwrap();
        assert!((e.p_positive - 0.5).abs() < 1e-12);
        assert!(!e.clipped);

        let ident = RateEstimates::exact(1.0, 0.0);
        assert_eq!(acc(&o, &ident).unwrap().p_positive, cc(&o).unwrap().p_positive);

        let mut low = outs(&[0.1; 9]);
        low.push(ClassifierOutput::new(0.9, vec![]));
        let e = acc(&low, &r).unwrap();
        assert_eq!(e.p_positive, 0.0);
        assert!(e.clipped);
    }

    #[test]
    fn pacc_examples() {
        let o = outs(&[0.9, 0.2, 0.7, 0.4]);
        let r = RateEstimates {
            tpr_soft: 0.9,
            fpr_soft: 0.3,
            ..RateEstimates::exact(0.8, 0.2)
        };
        let e = pacc(&o, &r).unwrap();
        assert!((e.p_positive - 0.25 / 0.6).abs() < 1e-12);

        let ident = RateEstimates::exact(1.0, 0.0);
        assert_eq!(pacc(&o, &ident).unwrap().p_positive, pcc(&o).unwrap().p_positive);

        let flat = RateEstimates::exact(0.4, 0.4);
        let e = pacc(&o, &flat).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.p_positive, pcc(&o).unwrap().p_positive);
        assert!(acc(&o, &flat).unwrap().degenerate);
    }

    #[test]
    fn estimates_are_distributions() {
        for raw in [-0.3, 0.0, 0.42, 1.0, 1.7] {
            let e = PrevalenceEstimate::new(raw, "x");
            assert!((e.p_positive + e.p_negative - 1.0).abs() < 1e-12);
            assert_eq!(e.clipped, !(0.0..=1.0).contains(&raw));
        }
    }
}
