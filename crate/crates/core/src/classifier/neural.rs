//! Neural document classifiers: an MLP over sparse feature vectors and an
//! LSTM over hashed word ids. Both end in a two-way softmax and export the
//! activation of the last hidden layer as the document embedding.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Classifier, ClassifierOutput};
use crate::data::{hash_token, split_train_val, tokenize, Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{init_weight, lstm_final_state, Activation, DenseLayer, LstmParams};
use crate::optim::AdamState;
use crate::params_io::{load_params, save_params};
use crate::tensor::{ParamId, ParamSet};

const PREDICT_CHUNK: usize = 256;
const PAD: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    /// Sparse features → hidden ReLU layers → softmax(2).
    Mlp { input_dim: usize, hidden: Vec<usize> },
    /// Hashed word ids → embedding → LSTM → hidden ReLU layers → softmax(2).
    /// Id 0 is padding; words hash into `1..vocab_size`.
    LstmText {
        vocab_size: usize,
        embed_dim: usize,
        lstm_hidden: usize,
        max_len: usize,
        hidden: Vec<usize>,
    },
}

impl Architecture {
    pub fn hidden(&self) -> &[usize] {
        match self {
            Architecture::Mlp { hidden, .. } | Architecture::LstmText { hidden, .. } => hidden,
        }
    }

    fn first_width(&self) -> usize {
        match self {
            Architecture::Mlp { input_dim, .. } => *input_dim,
            Architecture::LstmText { lstm_hidden, .. } => *lstm_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTrainConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub max_len: usize,
}

impl Default for NeuralTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NeuralTrainConfig {
    pub fn desk() -> Self {
        NeuralTrainConfig {
            hidden: vec![64, 16],
            dropout: 0.0,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 100,
            max_iterations: 20_000,
            validate_every: 100,
            patience: 20,
            validation_fraction: 0.2,
            vocab_size: 1 << 12,
            embed_dim: 32,
            lstm_hidden: 32,
            max_len: 64,
        }
    }

    pub fn paper() -> Self {
        NeuralTrainConfig {
            hidden: vec![1024, 100],
            vocab_size: 1 << 15,
            embed_dim: 100,
            lstm_hidden: 128,
            max_len: 250,
            ..Self::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("classifier needs at least one non-empty hidden layer"));
        }
        if self.batch_size == 0 || self.validate_every == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "batch size, validation interval and patience must be positive",
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// How training went. Losses are mean squared errors against one-hot targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub best_iteration: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub initial_train_loss: f64,
    pub best_train_loss: f64,
}

#[derive(Clone, Debug)]
struct LstmPart {
    table: ParamId,
    lstm: LstmParams,
}

#[derive(Clone, Debug)]
pub struct NeuralClassifierModel {
    pub architecture: Architecture,
    pub params: ParamSet,
    /// Index into `layers` of the layer whose activation is the embedding.
    pub embedding_layer_index: usize,
    layers: Vec<DenseLayer>,
    text: Option<LstmPart>,
}

fn dense_prefix(k: usize) -> String {
    format!("clf.dense{k}")
}

impl NeuralClassifierModel {
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, dropout: f64, rng: &mut R) -> Result<Self> {
        let hidden = architecture.hidden().to_vec();
        if hidden.is_empty() {
            return Err(Error::invalid("classifier needs at least one hidden layer"));
        }
        let mut params = ParamSet::new();
        let text = match &architecture {
            Architecture::Mlp { input_dim, .. } => {
                if *input_dim == 0 {
                    return Err(Error::invalid("input dimension must be positive"));
                }
                None
            }
            Architecture::LstmText {
                vocab_size,
                embed_dim,
                lstm_hidden,
                max_len,
                ..
            } => {
                if *vocab_size < 2 || *embed_dim == 0 || *lstm_hidden == 0 || *max_len == 0 {
                    return Err(Error::invalid("LSTM classifier dimensions must be positive"));
                }
                let mut table = init_weight(*vocab_size, *embed_dim, rng);
                // scale like a unit-variance-ish input rather than 1/sqrt(embed)
                table.data_mut().iter_mut().for_each(|v| *v *= 3f64.sqrt());
                let table = params.insert("clf.embed", table)?;
                let lstm = LstmParams::init(&mut params, "clf.lstm", *embed_dim, *lstm_hidden, rng)?;
                Some(LstmPart { table, lstm })
            }
        };
        let mut layers = Vec::new();
        let mut width = architecture.first_width();
        for (k, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::init(
                &mut params,
                &dense_prefix(k),
                width,
                h,
                Activation::Relu,
                dropout,
                rng,
            )?);
            width = h;
        }
        layers.push(DenseLayer::init(
            &mut params,
            "clf.out",
            width,
            2,
            Activation::Identity,
            0.0,
            rng,
        )?);
        Ok(NeuralClassifierModel {
            architecture,
            params,
            embedding_layer_index: hidden.len() - 1,
            layers,
            text,
        })
    }

    fn from_params(architecture: Architecture, dropout: f64, params: ParamSet) -> Result<Self> {
        let hidden = architecture.hidden().to_vec();
        let text = match &architecture {
            Architecture::Mlp { .. } => None,
            Architecture::LstmText { .. } => Some(LstmPart {
                table: params
                    .find("clf.embed")
                    .ok_or_else(|| Error::Format("missing parameter `clf.embed`".into()))?,
                lstm: LstmParams::find(&params, "clf.lstm")?,
            }),
        };
        let mut layers = Vec::new();
        let mut width = architecture.first_width();
        for (k, &h) in hidden.iter().enumerate() {
            let layer = DenseLayer::find(&params, &dense_prefix(k), Activation::Relu, dropout)?;
            if layer.in_dim(&params) != width || layer.out_dim(&params) != h {
                return Err(Error::Format(format!("layer {k} shape does not match configuration")));
            }
            layers.push(layer);
            width = h;
        }
        let out = DenseLayer::find(&params, "clf.out", Activation::Identity, 0.0)?;
        if out.in_dim(&params) != width || out.out_dim(&params) != 2 {
            return Err(Error::Format("output layer must map to 2 classes".into()));
        }
        layers.push(out);
        Ok(NeuralClassifierModel {
            architecture,
            params,
            embedding_layer_index: hidden.len() - 1,
            layers,
            text,
        })
    }

    fn token_ids(&self, doc: &Document) -> Vec<usize> {
        let Architecture::LstmText {
            vocab_size, max_len, ..
        } = self.architecture
        else {
            return Vec::new();
        };
        tokenize(&doc.text)
            .take(max_len)
            .map(|t| 1 + hash_token(&t, vocab_size - 1))
            .collect()
    }

    /// Returns (softmax probabilities [B, 2], embedding [B, E]).
    fn forward(&self, g: &mut Graph, docs: &[&Document], mut rng: Option<&mut ChaCha8Rng>) -> Result<(Var, Var)> {
        let first = &self.layers[0];
        let mut h = match (&self.architecture, &self.text) {
            (Architecture::Mlp { .. }, _) => {
                let rows: Vec<Vec<(usize, f64)>> = docs.iter().map(|d| d.features.clone()).collect();
                let w = g.param(&self.params, first.weight)?;
                let b = g.param(&self.params, first.bias)?;
                let z = g.sparse_linear(&rows, w, Some(b))?;
                let a = g.relu(z);
                g.dropout(a, first.dropout, rng.as_deref_mut())?
            }
            (Architecture::LstmText { .. }, Some(part)) => {
                let ids: Vec<Vec<usize>> = docs.iter().map(|d| self.token_ids(d)).collect();
                let len = ids.iter().map(Vec::len).max().unwrap_or(0).max(1);
                // left padding keeps each document's real tokens adjacent to
                // the final state
                let table = g.param(&self.params, part.table)?;
                let mut steps = Vec::with_capacity(len);
                for t in 0..len {
                    let col: Vec<usize> = ids
                        .iter()
                        .map(|seq| {
                            let pad = len - seq.len();
                            if t < pad {
                                PAD
                            } else {
                                seq[t - pad]
                            }
                        })
                        .collect();
                    steps.push(g.gather(table, &col)?);
                }
                let hs = lstm_final_state(g, &self.params, &part.lstm, steps)?;
                first.forward(g, &self.params, hs, rng.as_deref_mut())?
            }
            (Architecture::LstmText { .. }, None) => unreachable!("text model without LSTM"),
        };
        let mut embedding = h;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(g, &self.params, h, rng.as_deref_mut())?;
            if k == self.embedding_layer_index {
                embedding = h;
            }
            if k == last {
                break;
            }
        }
        let probs = g.softmax(h)?;
        Ok((probs, embedding))
    }

    fn check_docs(&self, docs: &[&Document]) -> Result<()> {
        if let Architecture::Mlp { input_dim, .. } = self.architecture {
            for d in docs {
                if let Some(&(i, _)) = d.features.iter().find(|(i, _)| *i >= input_dim) {
                    return Err(Error::shape(
                        "classifier predict",
                        format!("document {} has feature {i} but the model expects {input_dim}", d.id),
                    ));
                }
            }
        }
        Ok(())
    }

    fn loss_on(&self, docs: &[&Document]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in docs.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let (probs, _) = self.forward(&mut g, chunk, None)?;
            let target = one_hot(&mut g, chunk)?;
            let l = g.mse(probs, target)?;
            total += g.value(l)[0] * chunk.len() as f64;
        }
        Ok(total / docs.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        save_params(&self.params, path)?;
        let mut f = fs::File::create(config_path(path))?;
        let hidden: Vec<String> = self.architecture.hidden().iter().map(usize::to_string).collect();
        match &self.architecture {
            Architecture::Mlp { input_dim, .. } => {
                writeln!(f, "kind: mlp")?;
                writeln!(f, "input_dim: {input_dim}")?;
            }
            Architecture::LstmText {
                vocab_size,
                embed_dim,
                lstm_hidden,
                max_len,
                ..
            } => {
                writeln!(f, "kind: lstm_text")?;
                writeln!(f, "vocab_size: {vocab_size}")?;
                writeln!(f, "embed_dim: {embed_dim}")?;
                writeln!(f, "lstm_hidden: {lstm_hidden}")?;
                writeln!(f, "max_len: {max_len}")?;
            }
        }
        writeln!(f, "hidden: {}", hidden.join(","))?;
        writeln!(f, "dropout: {}", self.layers[0].dropout)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg = fs::read_to_string(config_path(path))?;
        let kv = parse_kv(&cfg);
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("classifier config lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for `{k}`")))
        };
        let hidden = get("hidden")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format("bad value for `hidden`".into()))?;
        let dropout: f64 = get("dropout")?
            .parse()
            .map_err(|_| Error::Format("bad value for `dropout`".into()))?;
        let architecture = match get("kind")? {
            "mlp" => Architecture::Mlp {
                input_dim: num("input_dim")?,
                hidden,
            },
            "lstm_text" => Architecture::LstmText {
                vocab_size: num("vocab_size")?,
                embed_dim: num("embed_dim")?,
                lstm_hidden: num("lstm_hidden")?,
                max_len: num("max_len")?,
                hidden,
            },
            other => return Err(Error::Format(format!("unknown classifier kind `{other}`"))),
        };
        Self::from_params(architecture, dropout, load_params(path)?)
    }
}

pub(crate) fn config_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub(crate) fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn one_hot(g: &mut Graph, docs: &[&Document]) -> Result<Var> {
    let t: Vec<f64> = docs
        .iter()
        .flat_map(|d| if d.label.is_positive() { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    g.constant(vec![docs.len(), 2], t)
}

impl Classifier for NeuralClassifierModel {
    fn predict(&self, docs: &[Document]) -> Result<Vec<ClassifierOutput>> {
        let refs: Vec<&Document> = docs.iter().collect();
        self.check_docs(&refs)?;
        let mut out = Vec::with_capacity(docs.len());
        for chunk in refs.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let (probs, emb) = self.forward(&mut g, chunk, None)?;
            let e = self.embedding_dim();
            for (p, e) in g.value(probs).chunks_exact(2).zip(g.value(emb).chunks_exact(e)) {
                out.push(ClassifierOutput::new(p[0], e.to_vec()));
            }
        }
        Ok(out)
    }

    fn embedding_dim(&self) -> usize {
        self.architecture.hidden()[self.embedding_layer_index]
    }

    fn name(&self) -> &str {
        match self.architecture {
            Architecture::Mlp { .. } => "mlp",
            Architecture::LstmText { .. } => "lstm_text",
        }
    }
}

fn train_neural(
    train: &LabeledCorpus,
    architecture: Architecture,
    config: &NeuralTrainConfig,
    seed: u64,
) -> Result<(NeuralClassifierModel, TrainReport)> {
    config.validate()?;
    if train.count_positive() == 0 || train.count_negative() == 0 {
        return Err(Error::InsufficientData(
            "classifier training data must contain both classes".into(),
        ));
    }
    let (fit, val) = split_train_val(train, 1.0 - config.validation_fraction, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = NeuralClassifierModel::init(architecture, config.dropout, &mut rng)?;
    let fit_docs: Vec<&Document> = fit.documents().iter().collect();
    let val_docs: Vec<&Document> = val.documents().iter().collect();
    model.check_docs(&fit_docs)?;
    model.check_docs(&val_docs)?;

    let mut adam = AdamState::new(&model.params, config.learning_rate, config.weight_decay);
    let initial_val_loss = model.loss_on(&val_docs)?;
    let initial_train_loss = model.loss_on(&fit_docs)?;
    let mut best_val_loss = initial_val_loss;
    let mut best_iteration = 0;
    let mut best = model.params.clone();
    let mut stale = 0;

    let mut order: Vec<usize> = (0..fit_docs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(fit_docs.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(fit_docs[order[cursor]]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let (probs, _) = model.forward(&mut g, &batch, Some(&mut rng))?;
        let target = one_hot(&mut g, &batch)?;
        let loss = g.mse(probs, target)?;
        model.params.zero_grad();
        g.backward(loss, &mut model.params)?;
        adam.step(&mut model.params)?;

        if it % config.validate_every == 0 {
            let v = model.loss_on(&val_docs)?;
            if v < best_val_loss {
                best_val_loss = v;
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
    let best_train_loss = model.loss_on(&fit_docs)?;
    Ok((
        model,
        TrainReport {
            iterations,
            best_iteration,
            initial_val_loss,
            best_val_loss,
            initial_train_loss,
            best_train_loss,
        },
    ))
}

/// Trains an MLP over the corpus' sparse features.
pub fn train_mlp_classifier(
    train: &LabeledCorpus,
    config: &NeuralTrainConfig,
    seed: u64,
) -> Result<(NeuralClassifierModel, TrainReport)> {
    let architecture = Architecture::Mlp {
        input_dim: train.feature_dim(),
        hidden: config.hidden.clone(),
    };
    train_neural(train, architecture, config, seed)
}

/// Trains an LSTM over the documents' tokenized text.
pub fn train_lstm_classifier(
    train: &LabeledCorpus,
    config: &NeuralTrainConfig,
    seed: u64,
) -> Result<(NeuralClassifierModel, TrainReport)> {
    let architecture = Architecture::LstmText {
        vocab_size: config.vocab_size,
        embed_dim: config.embed_dim,
        lstm_hidden: config.lstm_hidden,
        max_len: config.max_len,
        hidden: config.hidden.clone(),
    };
    train_neural(train, architecture, config, seed)
}
