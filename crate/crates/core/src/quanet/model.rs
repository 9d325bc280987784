use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::neural::{config_path, parse_kv};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{bilstm_encode_stacked, Activation, DenseLayer, LstmParams};
use crate::params_io::{load_params, save_params};
use crate::quanet::QuaNetInput;
use crate::quantifiers::PrevalenceEstimate;
use crate::tensor::ParamSet;

pub const NUM_STATS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct QuaNetConfig {
    pub embedding_dim: usize,
    pub lstm_hidden: usize,
    pub dense: Vec<usize>,
    pub dropout: f64,
}

impl QuaNetConfig {
    pub fn desk(embedding_dim: usize) -> Self {
        QuaNetConfig {
            embedding_dim,
            lstm_hidden: 16,
            dense: vec![128, 64],
            dropout: 0.5,
        }
    }

    pub fn paper(embedding_dim: usize) -> Self {
        QuaNetConfig {
            embedding_dim,
            lstm_hidden: 64,
            dense: vec![1024, 512],
            dropout: 0.5,
        }
    }

    /// Width of one sequence item: the posterior followed by the embedding.
    pub fn item_width(&self) -> usize {
        1 + self.embedding_dim
    }

    pub fn dense_input_width(&self) -> usize {
        2 * self.lstm_hidden + NUM_STATS
    }
}

#[derive(Clone, Debug)]
pub struct QuaNetModel {
    pub config: QuaNetConfig,
    pub params: ParamSet,
    fwd: LstmParams,
    bwd: LstmParams,
    layers: Vec<DenseLayer>,
}

fn dense_prefix(k: usize) -> String {
    format!("quanet.dense{k}")
}

impl QuaNetModel {
    pub fn init<R: Rng + ?Sized>(config: QuaNetConfig, rng: &mut R) -> Result<Self> {
        if config.lstm_hidden == 0 || config.dense.contains(&0) {
            return Err(Error::invalid("QuaNet dimensions must be positive"));
        }
        let mut params = ParamSet::new();
        let w = config.item_width();
        let fwd = LstmParams::init(&mut params, "quanet.fwd", w, config.lstm_hidden, rng)?;
        let bwd = LstmParams::init(&mut params, "quanet.bwd", w, config.lstm_hidden, rng)?;
        let mut layers = Vec::new();
        let mut width = config.dense_input_width();
        for (k, &d) in config.dense.iter().enumerate() {
            layers.push(DenseLayer::init(
                &mut params,
                &dense_prefix(k),
                width,
                d,
                Activation::Relu,
                config.dropout,
                rng,
            )?);
            width = d;
        }
        layers.push(DenseLayer::init(
            &mut params,
            "quanet.out",
            width,
            2,
            Activation::Identity,
            0.0,
            rng,
        )?);
        let model = QuaNetModel {
            config,
            params,
            fwd,
            bwd,
            layers,
        };
        model.check_widths()?;
        Ok(model)
    }

    fn from_params(config: QuaNetConfig, params: ParamSet) -> Result<Self> {
        let fwd = LstmParams::find(&params, "quanet.fwd")?;
        let bwd = LstmParams::find(&params, "quanet.bwd")?;
        let mut layers = Vec::new();
        for k in 0..config.dense.len() {
            layers.push(DenseLayer::find(
                &params,
                &dense_prefix(k),
                Activation::Relu,
                config.dropout,
            )?);
        }
        layers.push(DenseLayer::find(&params, "quanet.out", Activation::Identity, 0.0)?);
        let model = QuaNetModel {
            config,
            params,
            fwd,
            bwd,
            layers,
        };
        model.check_widths()?;
        Ok(model)
    }

    fn check_widths(&self) -> Result<()> {
        let c = &self.config;
        for p in [&self.fwd, &self.bwd] {
            if p.input_dim != c.item_width() || p.hidden_dim != c.lstm_hidden {
                return Err(Error::Format("LSTM parameters do not match configuration".into()));
            }
        }
        let mut width = c.dense_input_width();
        let expected = c.dense.iter().copied().chain([2]);
        for (layer, out) in self.layers.iter().zip(expected) {
            if layer.in_dim(&self.params) != width || layer.out_dim(&self.params) != out {
                return Err(Error::Format(format!(
                    "dense layer {}x{} where {out}x{width} was expected",
                    layer.out_dim(&self.params),
                    layer.in_dim(&self.params)
                )));
            }
            width = out;
        }
        Ok(())
    }

    /// Softmax outputs ([B, 2], positive first) for a batch of inputs that
    /// all have the same length. Parameters are read from `set`, which must
    /// be laid out like `self.params`.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        inputs: &[&QuaNetInput],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let Some(first) = inputs.first() else {
            return Err(Error::invalid("empty QuaNet batch"));
        };
        let len = first.len();
        if len == 0 || inputs.iter().any(|i| i.len() != len) {
            return Err(Error::shape(
                "quanet_forward",
                "batched inputs must share a non-zero length",
            ));
        }
        let width = self.config.item_width();
        for i in inputs {
            if i.embedding_dim() != self.config.embedding_dim {
                return Err(Error::shape(
                    "quanet_forward",
                    format!(
                        "embedding width {} but the model expects {}",
                        i.embedding_dim(),
                        self.config.embedding_dim
                    ),
                ));
            }
        }
        let b = inputs.len();
        let mut rows = Vec::with_capacity(len * b * width);
        for t in 0..len {
            for i in inputs {
                let (p, e) = &i.items[t];
                rows.push(*p);
                rows.extend_from_slice(e);
            }
        }
        let steps = g.constant(vec![len * b, width], rows)?;
        let encoded = bilstm_encode_stacked(g, set, &self.fwd, &self.bwd, steps, b)?;
        let stats: Vec<f64> = inputs.iter().flat_map(|i| i.stats).collect();
        let stats = g.constant(vec![b, NUM_STATS], stats)?;
        let x = g.concat(&[encoded, stats])?;
        let mut rng = rng;
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(g, set, h, rng.as_deref_mut())?;
        }
        g.softmax(h)
    }

    /// Mean squared error against `[p, 1 - p]` over a batch of any lengths.
    /// Inputs of equal length are run together.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        batch: &[(&QuaNetInput, f64)],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut lengths: Vec<usize> = batch.iter().map(|(i, _)| i.len()).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let total = batch.len() as f64;
        let mut loss: Option<Var> = None;
        for len in lengths {
            let group: Vec<&(&QuaNetInput, f64)> = batch.iter().filter(|(i, _)| i.len() == len).collect();
            let inputs: Vec<&QuaNetInput> = group.iter().map(|(i, _)| *i).collect();
            let probs = self.forward_batch(g, set, &inputs, rng.as_deref_mut())?;
            let target: Vec<f64> = group.iter().flat_map(|(_, p)| [*p, 1.0 - *p]).collect();
            let target = g.constant(vec![group.len(), 2], target)?;
            let l = g.mse(probs, target)?;
            let l = g.scale(l, group.len() as f64 / total);
            loss = Some(match loss {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        loss.ok_or_else(|| Error::invalid("empty QuaNet batch"))
    }

    /// Evaluation-mode prediction for one input.
    pub fn estimate_input(&self, input: &QuaNetInput) -> Result<PrevalenceEstimate> {
        let mut g = Graph::new();
        let probs = self.forward_batch(&mut g, &self.params, &[input], None)?;
        Ok(PrevalenceEstimate::new(g.value(probs)[0], "quanet"))
    }

    /// Evaluation-mode predictions for many inputs, batched by length.
    pub fn estimate_many(&self, inputs: &[QuaNetInput], chunk: usize) -> Result<Vec<PrevalenceEstimate>> {
        let mut out = vec![None; inputs.len()];
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by_key(|&i| inputs[i].len());
        for group in order.chunk_by(|&a, &b| inputs[a].len() == inputs[b].len()) {
            for part in group.chunks(chunk.max(1)) {
                let refs: Vec<&QuaNetInput> = part.iter().map(|&i| &inputs[i]).collect();
                let mut g = Graph::new();
                let probs = self.forward_batch(&mut g, &self.params, &refs, None)?;
                for (&i, p) in part.iter().zip(g.value(probs).chunks_exact(2)) {
                    out[i] = Some(PrevalenceEstimate::new(p[0], "quanet"));
                }
            }
        }
        Ok(out.into_iter().map(|e| e.expect("every input is estimated")).collect())
    }

    /// Writes the parameters to `path` and the dimensions, plus any
    /// `extra` key/value pairs, to `<path>.cfg`.
    pub fn save(&self, path: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        save_params(&self.params, path)?;
        let mut f = fs::File::create(config_path(path))?;
        let c = &self.config;
        writeln!(f, "kind: quanet")?;
        writeln!(f, "embedding_dim: {}", c.embedding_dim)?;
        writeln!(f, "lstm_hidden: {}", c.lstm_hidden)?;
        let dense: Vec<String> = c.dense.iter().map(usize::to_string).collect();
        writeln!(f, "dense: {}", dense.join(","))?;
        writeln!(f, "dropout: {}", c.dropout)?;
        for (k, v) in extra {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let kv = parse_kv(&fs::read_to_string(config_path(path))?);
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("QuaNet config lacks `{k}`")))
        };
        let bad = |k: &str| Error::Format(format!("bad value for `{k}`"));
        let config = QuaNetConfig {
            embedding_dim: get("embedding_dim")?.parse().map_err(|_| bad("embedding_dim"))?,
            lstm_hidden: get("lstm_hidden")?.parse().map_err(|_| bad("lstm_hidden"))?,
            dense: get("dense")?
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("dense"))?,
            dropout: get("dropout")?.parse().map_err(|_| bad("dropout"))?,
        };
        Self::from_params(config, load_params(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;
    use rand::SeedableRng;

    fn random_input(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> QuaNetInput {
        let mut items: Vec<(f64, Vec<f64>)> = (0..len)
            .map(|_| {
                (
                    rng.random::<f64>(),
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut stats = [0.0; NUM_STATS];
        stats.iter_mut().for_each(|s| *s = rng.random());
        QuaNetInput { items, stats }
    }

    #[test]
    fn dense_width_matches_paper() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = QuaNetConfig::paper(100);
        assert_eq!(c.dense_input_width(), 136);
        let m = QuaNetModel::init(QuaNetConfig::desk(4), &mut rng).unwrap();
        assert_eq!(m.layers[0].in_dim(&m.params), 40);
        assert_eq!(m.layers.last().unwrap().out_dim(&m.params), 2);
    }

    #[test]
    fn output_is_a_distribution_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = QuaNetModel::init(QuaNetConfig::desk(3), &mut rng).unwrap();
        let input = random_input(&mut rng, 12, 3);
        let a = m.estimate_input(&input).unwrap();
        assert!(a.p_positive > 0.0 && a.p_positive < 1.0);
        assert!((a.p_positive + a.p_negative - 1.0).abs() < 1e-9);
        assert_eq!(a, m.estimate_input(&input).unwrap());
        let bad = random_input(&mut rng, 5, 4);
        assert!(m.estimate_input(&bad).is_err());
    }

    #[test]
    fn batched_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = QuaNetModel::init(QuaNetConfig::desk(2), &mut rng).unwrap();
        let inputs: Vec<QuaNetInput> = [7, 7, 3, 7, 3].iter().map(|&l| random_input(&mut rng, l, 2)).collect();
        let many = m.estimate_many(&inputs, 2).unwrap();
        for (i, e) in inputs.iter().zip(&many) {
            let single = m.estimate_input(i).unwrap();
            assert!((single.p_positive - e.p_positive).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_at_desk_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = QuaNetModel::init(QuaNetConfig::desk(16), &mut rng).unwrap();
        let inputs: Vec<QuaNetInput> = (0..3).map(|_| random_input(&mut rng, 6, 16)).collect();
        let batch: Vec<(&QuaNetInput, f64)> = inputs.iter().zip([0.1, 0.5, 0.9]).collect();
        let mut params = m.params.clone();
        let report = gradient_check(
            &mut params,
            |g, set| m.batch_loss(g, set, &batch, None),
            20,
            1e-5,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = QuaNetModel::init(QuaNetConfig::desk(3), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.qnt");
        m.save(&path, &[("sample_size".into(), "100".into())]).unwrap();
        let back = QuaNetModel::load(&path).unwrap();
        assert_eq!(back.config, m.config);
        let input = random_input(&mut rng, 9, 3);
        assert_eq!(back.estimate_input(&input).unwrap(), m.estimate_input(&input).unwrap());
    }
}
