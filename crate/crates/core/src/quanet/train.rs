use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::oracle::mix_seed;
use crate::classifier::{Classifier, ScoredPool};
use crate::data::{draw_feasible, prevalence_grid, Document};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::AdamState;
use crate::quanet::{build_input, QuaNetConfig, QuaNetInput, QuaNetModel};
use crate::quantifiers::{PrevalenceEstimate, RateEstimates};

const VALIDATION_STREAM: u64 = 0x5641_4c49_4441_5445;
const DROPOUT_STREAM: u64 = 0x4452_4f50_4f55_5400;
const EVAL_CHUNK: usize = 128;
const LENGTH_GROUPS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct QuaNetTrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub sample_size: usize,
    /// Training samples have lengths log-uniform in
    /// [sample_size / spread, sample_size * spread], one length per group
    /// of the batch, so the encoder does not key on sequence length.
    /// 1 trains at `sample_size` only.
    pub length_spread: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Validation samples drawn at each grid prevalence.
    pub validation_per_prevalence: usize,
    pub seed: u64,
    /// Print each validation checkpoint to stderr.
    pub progress: bool,
}

impl Default for QuaNetTrainConfig {
    fn default() -> Self {
        QuaNetTrainConfig {
            batch_size: 100,
            max_iterations: 20_000,
            validate_every: 100,
            patience: 20,
            sample_size: 500,
            length_spread: 3.0,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            validation_per_prevalence: 5,
            seed: 0,
            progress: false,
        }
    }
}

impl QuaNetTrainConfig {
    pub fn desk() -> Self {
        QuaNetTrainConfig {
            sample_size: 100,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("validate_every", self.validate_every),
            ("patience", self.patience),
            ("sample_size", self.sample_size),
            ("validation_per_prevalence", self.validation_per_prevalence),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("QuaNet training `{name}` must be positive")));
        }
        if !(self.length_spread >= 1.0) {
            return Err(Error::invalid("length spread must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "learning rate must be positive and weight decay nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: QuaNetInput,
    /// Realized positive prevalence of the drawn sample.
    pub prevalence: f64,
    /// The pool could not supply the full sample size.
    pub reduced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuaNetTrainReport {
    pub iterations: usize,
    pub best_iteration: usize,
    /// (iteration, validation MSE), starting with iteration 0.
    pub history: Vec<(usize, f64)>,
    pub best_val_mse: f64,
}

impl QuaNetTrainReport {
    pub fn first_checkpoint_mse(&self) -> Option<f64> {
        self.history.get(1).map(|h| h.1)
    }
}

fn require_both_classes(pool: &ScoredPool) -> Result<()> {
    if pool.index.positives.is_empty() || pool.index.negatives.is_empty() {
        return Err(Error::InsufficientData("QuaNet needs a pool with both classes".into()));
    }
    Ok(())
}

fn example(
    pool: &ScoredPool,
    rates: &RateEstimates,
    target: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingExample> {
    let draw = draw_feasible(&pool.corpus, &pool.index, target, size, rng)?;
    Ok(TrainingExample {
        input: build_input(&pool.select(&draw.pool_indices), rates)?,
        prevalence: draw.realized_prevalence,
        reduced: draw.reduced,
    })
}

/// `batch_size` samples at prevalences drawn uniformly from [0.01, 0.99].
///
/// The batch is cut into `LENGTH_GROUPS` groups; each group shares one
/// length drawn log-uniformly from [size / spread, size * spread].
pub fn make_training_batch(
    pool: &ScoredPool,
    rates: &RateEstimates,
    batch_size: usize,
    sample_size: usize,
    length_spread: f64,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    require_both_classes(pool)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = LENGTH_GROUPS.min(batch_size);
    let mut batch = Vec::with_capacity(batch_size);
    for g in 0..groups {
        let len = if length_spread > 1.0 {
            let s = length_spread.ln();
            ((sample_size as f64) * rng.random_range(-s..=s).exp()).round().max(1.0) as usize
        } else {
            sample_size
        };
        let count = batch_size / groups + usize::from(g < batch_size % groups);
        for _ in 0..count {
            let target = rng.random_range(0.01..=0.99);
            batch.push(example(pool, rates, target, len, &mut rng)?);
        }
    }
    Ok(batch)
}

/// A fixed set of `per_prevalence` samples at every grid prevalence.
pub fn validation_set(
    pool: &ScoredPool,
    rates: &RateEstimates,
    sample_size: usize,
    per_prevalence: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    require_both_classes(pool)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, VALIDATION_STREAM));
    let mut out = Vec::new();
    for p in prevalence_grid() {
        for _ in 0..per_prevalence {
            out.push(example(pool, rates, p, sample_size, &mut rng)?);
        }
    }
    Ok(out)
}

fn mean_squared_error(model: &QuaNetModel, set: &[TrainingExample]) -> Result<f64> {
    let inputs: Vec<QuaNetInput> = set.iter().map(|e| e.input.clone()).collect();
    let est = model.estimate_many(&inputs, EVAL_CHUNK)?;
    let total: f64 = est
        .iter()
        .zip(set)
        .map(|(e, x)| (e.p_positive - x.prevalence).powi(2))
        .sum();
    Ok(total / set.len() as f64)
}

/// Trains QuaNet on samples from `pool`, whose outputs come from an already
/// trained classifier. Returns the snapshot with the lowest validation MSE.
pub fn train_quanet(
    pool: &ScoredPool,
    rates: &RateEstimates,
    model_config: QuaNetConfig,
    config: &QuaNetTrainConfig,
) -> Result<(QuaNetModel, QuaNetTrainReport)> {
    config.validate()?;
    require_both_classes(pool)?;
    if pool.embedding_dim() != model_config.embedding_dim {
        return Err(Error::shape(
            "train_quanet",
            format!(
                "classifier embeddings have width {} but QuaNet expects {}",
                pool.embedding_dim(),
                model_config.embedding_dim
            ),
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = QuaNetModel::init(model_config, &mut init_rng)?;
    let validation = validation_set(
        pool,
        rates,
        config.sample_size,
        config.validation_per_prevalence,
        config.seed,
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, DROPOUT_STREAM));
    let mut adam = AdamState::new(&model.params, config.learning_rate, config.weight_decay);

    let initial = mean_squared_error(&model, &validation)?;
    let mut history = vec![(0, initial)];
    let mut best = model.params.clone();
    let mut best_val_mse = initial;
    let mut best_iteration = 0;
    let mut stale = 0;
    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        let batch = make_training_batch(
            pool,
            rates,
            config.batch_size,
            config.sample_size,
            config.length_spread,
            mix_seed(config.seed, it as u64),
        )?;
        let pairs: Vec<(&QuaNetInput, f64)> = batch.iter().map(|e| (&e.input, e.prevalence)).collect();
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &model.params, &pairs, Some(&mut dropout_rng))?;
        model.params.zero_grad();
        g.backward(loss, &mut model.params)?;
        adam.step(&mut model.params)?;

        if it % config.validate_every == 0 {
            let v = mean_squared_error(&model, &validation)?;
            history.push((it, v));
            if config.progress {
                eprintln!("quanet iteration {it}: validation mse {v:.6}");
            }
            if v < best_val_mse {
                best_val_mse = v;
                best_iteration = it;
                best.copy_values_from(&model.params)?;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    model.params.copy_values_from(&best)?;
    model.params.zero_grad();
    Ok((
        model,
        QuaNetTrainReport {
            iterations,
            best_iteration,
            history,
            best_val_mse,
        },
    ))
}

/// Classifies `docs` and runs QuaNet on the result.
pub fn quanet_estimate(
    model: &QuaNetModel,
    classifier: &dyn Classifier,
    rates: &RateEstimates,
    docs: &[Document],
) -> Result<PrevalenceEstimate> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot estimate prevalence of an empty sample"));
    }
    let outputs = classifier.predict(docs)?;
    model.estimate_input(&build_input(&outputs, rates)?)
}
