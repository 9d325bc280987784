use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::oracle::mix_seed;
use crate::classifier::ClassifierOutput;
use crate::data::{draw_feasible, ClassIndex, LabeledCorpus};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{ae, kld, pair, rae};
use crate::quanet::{build_input, QuaNetModel};
use crate::quantifiers::{acc, cc, emq, pacc, pcc, Method, PrevalenceEstimate, RateEstimates, EMQ_MAX_ITER, EMQ_TOL};

/// Environment variable capping the number of protocol worker threads.
pub const THREADS_ENV: &str = "PREVALENS_THREADS";

/// Anything that estimates the positive prevalence of a sample drawn from
/// a pool. The sample is given as positions into `pool`.
pub trait Quantifier: Send + Sync {
    fn name(&self) -> &str;

    fn estimate(&self, pool: &LabeledCorpus, indices: &[usize]) -> Result<PrevalenceEstimate>;
}

/// One of the built-in estimators, fed from classifier outputs computed
/// once for every document of the pool.
#[derive(Clone)]
pub struct ScoredQuantifier {
    pub label: String,
    pub method: Method,
    pub outputs: Arc<Vec<ClassifierOutput>>,
    pub rates: RateEstimates,
    /// Positive prevalence of the classifier's training data (EMQ only).
    pub train_prior: f64,
    pub quanet: Option<Arc<QuaNetModel>>,
}

impl ScoredQuantifier {
    pub fn new(
        method: Method,
        outputs: Arc<Vec<ClassifierOutput>>,
        rates: RateEstimates,
        train_prior: f64,
        quanet: Option<Arc<QuaNetModel>>,
    ) -> Result<Self> {
        if method == Method::QuaNet && quanet.is_none() {
            return Err(Error::invalid("the quanet method needs a trained QuaNet model"));
        }
        Ok(ScoredQuantifier {
            label: method.to_string(),
            method,
            outputs,
            rates,
            train_prior,
            quanet,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn estimate_outputs(&self, outputs: &[ClassifierOutput]) -> Result<PrevalenceEstimate> {
        match self.method {
            Method::Cc => cc(outputs),
            Method::Acc => acc(outputs, &self.rates),
            Method::Pcc => pcc(outputs),
            Method::Pacc => pacc(outputs, &self.rates),
            Method::Emq => {
                let post: Vec<f64> = outputs.iter().map(|o| o.posterior_positive).collect();
                Ok(emq(&post, self.train_prior, EMQ_MAX_ITER, EMQ_TOL)?.estimate)
            }
            Method::QuaNet => {
                let model = self.quanet.as_ref().expect("checked at construction");
                model.estimate_input(&build_input(outputs, &self.rates)?)
            }
        }
    }
}

impl Quantifier for ScoredQuantifier {
    fn name(&self) -> &str {
        &self.label
    }

    fn estimate(&self, pool: &LabeledCorpus, indices: &[usize]) -> Result<PrevalenceEstimate> {
        if pool.len() != self.outputs.len() {
            return Err(Error::invalid(format!(
                "quantifier `{}` was scored on {} documents but the pool has {}",
                self.label,
                self.outputs.len(),
                pool.len()
            )));
        }
        let sel: Vec<ClassifierOutput> = indices.iter().map(|&i| self.outputs[i].clone()).collect();
        self.estimate_outputs(&sel)
    }
}

/// Wraps a closure as a quantifier.
pub struct FnQuantifier<F> {
    pub label: String,
    pub f: F,
}

impl<F> Quantifier for FnQuantifier<F>
where
    F: Fn(&LabeledCorpus, &[usize]) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.label
    }

    fn estimate(&self, pool: &LabeledCorpus, indices: &[usize]) -> Result<PrevalenceEstimate> {
        Ok(PrevalenceEstimate::new((self.f)(pool, indices)?, self.label.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub grid: Vec<f64>,
    pub trials: usize,
    pub sample_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRow {
    pub method: String,
    pub target_prev: f64,
    pub trial: usize,
    pub est_prev: f64,
    pub ae: f64,
    pub rae: f64,
    pub kld: f64,
    pub sample_size: usize,
    pub seed: u64,
}

/// Seed of one (prevalence, trial) cell; shared by every method.
pub fn cell_seed(seed: u64, prevalence_index: usize, trial: usize) -> u64 {
    mix_seed(mix_seed(seed, prevalence_index as u64), trial as u64)
}

/// Worker count: `PREVALENS_THREADS` if set to a positive integer, else
/// the number of available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_cell(
    quantifiers: &[&dyn Quantifier],
    pool: &LabeledCorpus,
    index: &ClassIndex,
    config: &ProtocolConfig,
    pi: usize,
    trial: usize,
) -> Result<Vec<ProtocolRow>> {
    let target = config.grid[pi];
    let seed = cell_seed(config.seed, pi, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = draw_feasible(pool, index, target, config.sample_size, &mut rng)?;
    let truth = pair(draw.realized_prevalence);
    quantifiers
        .iter()
        .map(|q| {
            let est = q.estimate(pool, &draw.pool_indices).map_err(|e| {
                Error::invalid(format!(
                    "{} failed at prevalence {target}, trial {trial}: {e}",
                    q.name()
                ))
            })?;
            let e = est.as_pair();
            Ok(ProtocolRow {
                method: q.name().to_string(),
                target_prev: target,
                trial,
                est_prev: est.p_positive,
                ae: ae(truth, e).value,
                rae: rae(truth, e, draw.sample_size).value,
                kld: kld(truth, e, draw.sample_size).value,
                sample_size: draw.sample_size,
                seed,
            })
        })
        .collect()
}

/// Runs every quantifier on the same grid × trials samples drawn from
/// `pool`. Rows come out grouped by quantifier, then by prevalence, then
/// by trial, regardless of how many threads were used.
pub fn run_protocol(
    quantifiers: &[&dyn Quantifier],
    pool: &LabeledCorpus,
    config: &ProtocolConfig,
) -> Result<Vec<ProtocolRow>> {
    run_protocol_with_threads(quantifiers, pool, config, thread_count())
}

pub fn run_protocol_with_threads(
    quantifiers: &[&dyn Quantifier],
    pool: &LabeledCorpus,
    config: &ProtocolConfig,
    threads: usize,
) -> Result<Vec<ProtocolRow>> {
    if quantifiers.is_empty() {
        return Err(Error::invalid("no quantifiers selected"));
    }
    if config.grid.is_empty() || config.trials == 0 || config.sample_size == 0 {
        return Err(Error::invalid(
            "protocol needs a non-empty grid, trials and sample size",
        ));
    }
    let index = ClassIndex::new(pool);
    let cells: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|p| (0..config.trials).map(move |t| (p, t)))
        .collect();
    let work = || -> Result<Vec<Vec<ProtocolRow>>> {
        cells
            .par_iter()
            .map(|&(p, t)| run_cell(quantifiers, pool, &index, config, p, t))
            .collect()
    };
    let per_cell = if threads <= 1 {
        cells
            .iter()
            .map(|&(p, t)| run_cell(quantifiers, pool, &index, config, p, t))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))?
            .install(work)?
    };
    let mut rows = Vec::with_capacity(per_cell.len() * quantifiers.len());
    for m in 0..quantifiers.len() {
        rows.extend(per_cell.iter().map(|cell| cell[m].clone()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prevalence_grid, Document, Label};

    fn pool(n_pos: usize, n_neg: usize) -> LabeledCorpus {
        let docs = (0..n_pos + n_neg)
            .map(|i| Document::new(i, "", if i < n_pos { Label::Positive } else { Label::Negative }))
            .collect();
        LabeledCorpus::new(docs, 0).unwrap()
    }

    fn realized(pool: &LabeledCorpus, idx: &[usize]) -> Result<f64> {
        Ok(idx.iter().filter(|&&i| pool.documents()[i].label.is_positive()).count() as f64 / idx.len() as f64)
    }

    #[test]
    fn perfect_and_constant_quantifiers() {
        let p = pool(600, 600);
        let perfect = FnQuantifier {
            label: "perfect".into(),
            f: realized,
        };
        let half = FnQuantifier {
            label: "half".into(),
            f: |_: &LabeledCorpus, _: &[usize]| Ok(0.5),
        };
        let cfg = ProtocolConfig {
            grid: prevalence_grid(),
            trials: 100,
            sample_size: 500,
            seed: 1,
        };
        let rows = run_protocol(&[&perfect, &half], &p, &cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2100);
        assert!(rows[..2100].iter().all(|r| r.ae == 0.0 && r.method == "perfect"));
        let mean: f64 = rows[2100..].iter().map(|r| r.ae).sum::<f64>() / 2100.0;
        let want = prevalence_grid().iter().map(|p| (p - 0.5).abs()).sum::<f64>() / 21.0;
        assert!((mean - want).abs() < 1e-9);
        // 2 * (0.49 + 0.05 + 0.10 + ... + 0.45) / 21
        assert!((want - 5.48 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_pure_and_threading_is_invisible() {
        let p = pool(300, 300);
        let perfect = FnQuantifier {
            label: "perfect".into(),
            f: realized,
        };
        let cfg = ProtocolConfig {
            grid: vec![0.1, 0.5, 0.9],
            trials: 7,
            sample_size: 50,
            seed: 42,
        };
        let a = run_protocol_with_threads(&[&perfect], &p, &cfg, 1).unwrap();
        let b = run_protocol_with_threads(&[&perfect], &p, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[4].seed, cell_seed(42, 0, 4));
        assert!(run_protocol(&[], &p, &cfg).is_err());
    }
}
