use crate::error::{Error, Result};
use crate::quantifiers::PrevalenceEstimate;

pub const EMQ_MAX_ITER: usize = 1000;
pub const EMQ_TOL: f64 = 1e-6;
/// Posteriors are kept this far away from 0 and 1 while iterating.
pub const EMQ_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct EmqResult {
    pub estimate: PrevalenceEstimate,
    pub corrected_posteriors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Running mean, exact when every element is equal.
fn mean(xs: &[f64]) -> f64 {
    let mut m = xs[0];
    for (k, &x) in xs.iter().enumerate().skip(1) {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// EM re-estimation of the positive prior from posteriors calibrated for
/// `train_prior`.
///
/// Each step rescales every posterior by the ratio of the current prior
/// estimate to the training prior (and likewise for the negative class),
/// renormalizes, and takes the mean as the next estimate.
pub fn emq(posteriors: &[f64], train_prior: f64, max_iter: usize, tol: f64) -> Result<EmqResult> {
    if !(train_prior > 0.0 && train_prior < 1.0) {
        return Err(Error::invalid(format!("training prior {train_prior} outside (0, 1)")));
    }
    if posteriors.is_empty() {
        return Err(Error::invalid("cannot estimate prevalence of an empty sample"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    if let Some(p) = posteriors.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("posterior {p} outside [0, 1]")));
    }
    let base: Vec<f64> = posteriors.iter().map(|p| p.clamp(EMQ_CLAMP, 1.0 - EMQ_CLAMP)).collect();
    let mut corrected = base.clone();
    let mut prior = train_prior;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let a = prior / train_prior;
        let b = (1.0 - prior) / (1.0 - train_prior);
        if a == b {
            corrected.copy_from_slice(&base);
        } else {
            for (c, &p) in corrected.iter_mut().zip(&base) {
                let wp = a * p;
                let wn = b * (1.0 - p);
                *c = wp / (wp + wn);
            }
        }
        let next = mean(&corrected);
        let step = (next - prior).abs();
        prior = next;
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(EmqResult {
        estimate: PrevalenceEstimate::new(prior, "emq"),
        corrected_posteriors: corrected,
        iterations,
        converged,
    })
}
