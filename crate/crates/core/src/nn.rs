//! Recurrent and dense layers built on top of [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("rows * cols values")
}

/// Gate order used for the four LSTM weight matrices.
pub const GATES: [&str; 4] = ["input", "forget", "candidate", "output"];

/// Parameter handles for one LSTM cell.
///
/// Each gate has a weight of shape (hidden, input + hidden) applied to the
/// concatenation `[x_t, h_{t-1}]` and a bias of length hidden.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
}

impl LstmParams {
    /// Registers freshly initialized gate parameters under `prefix`.
    /// The forget-gate bias starts at 1.0.
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("LSTM dimensions must be positive"));
        }
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            let w = init_weight(hidden_dim, input_dim + hidden_dim, rng);
            weights.push(set.insert(format!("{prefix}.w_{gate}"), w)?);
            let fill = if gate == "forget" { 1.0 } else { 0.0 };
            let b = Tensor::vector(vec![fill; hidden_dim]);
            biases.push(set.insert(format!("{prefix}.b_{gate}"), b)?);
        }
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            weights: weights.try_into().expect("four gates"),
            biases: biases.try_into().expect("four gates"),
        })
    }

    /// Looks up previously registered gate parameters by prefix.
    pub fn find(set: &ParamSet, prefix: &str) -> Result<Self> {
        let lookup = |name: String| {
            set.find(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
        };
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            weights.push(lookup(format!("{prefix}.w_{gate}"))?);
            biases.push(lookup(format!("{prefix}.b_{gate}"))?);
        }
        let w0 = set.get(weights[0]).shape();
        if w0.len() != 2 || w0[1] <= w0[0] {
            return Err(Error::Format(format!("bad LSTM weight shape {w0:?}")));
        }
        let (hidden_dim, input_dim) = (w0[0], w0[1] - w0[0]);
        for (&w, &b) in weights.iter().zip(&biases) {
            if set.get(w).shape() != [hidden_dim, input_dim + hidden_dim] || set.get(b).shape() != [hidden_dim] {
                return Err(Error::Format(format!("inconsistent LSTM gate shapes under `{prefix}`")));
            }
        }
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            weights: weights.try_into().expect("four gates"),
            biases: biases.try_into().expect("four gates"),
        })
    }
}

fn width(g: &Graph, v: Var) -> usize {
    *g.shape(v).last().unwrap_or(&1)
}

/// One LSTM recurrence step. Inputs are vectors or row batches.
pub fn lstm_cell_step(
    g: &mut Graph,
    set: &ParamSet,
    p: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    if width(g, x) != p.input_dim {
        return Err(Error::shape(
            "lstm_cell_step",
            format!("input width {} != input_dim {}", width(g, x), p.input_dim),
        ));
    }
    if width(g, h_prev) != p.hidden_dim || g.shape(h_prev) != g.shape(c_prev) {
        return Err(Error::shape(
            "lstm_cell_step",
            format!(
                "state shapes {:?}/{:?} do not match hidden_dim {}",
                g.shape(h_prev),
                g.shape(c_prev),
                p.hidden_dim
            ),
        ));
    }
    let xh = g.concat(&[x, h_prev])?;
    let mut ws = [xh; 4];
    let mut bs = [xh; 4];
    for k in 0..4 {
        ws[k] = g.param(set, p.weights[k])?;
        bs[k] = g.param(set, p.biases[k])?;
    }
    let all = g.linear_stack(xh, &ws, &bs)?;
    let hd = p.hidden_dim;
    let hc = g.lstm_gates(all, c_prev)?;
    let h = g.slice_cols(hc, 0, hd)?;
    let c = g.slice_cols(hc, hd, hd)?;
    Ok((h, c))
}

/// Stacks equally shaped sequence items into one time-major tensor. Steps
/// that are all constants are copied into a new constant.
fn stack_steps(g: &mut Graph, seq: &[Var]) -> Result<(Var, usize)> {
    let Some(&first) = seq.first() else {
        return Err(Error::invalid("cannot encode an empty sequence"));
    };
    let shape0 = g.shape(first).to_vec();
    if seq.iter().any(|&v| g.shape(v) != shape0.as_slice()) {
        return Err(Error::shape("lstm", "sequence items differ in shape"));
    }
    let (batch, width) = match shape0.as_slice() {
        [w] => (1, *w),
        [b, w] => (*b, *w),
        s => return Err(Error::shape("lstm", format!("unsupported input shape {s:?}"))),
    };
    let x = if seq.iter().all(|&v| g.is_constant(v)) {
        let mut rows = Vec::with_capacity(seq.len() * batch * width);
        for &v in seq {
            rows.extend_from_slice(g.value(v));
        }
        g.constant(vec![seq.len() * batch, width], rows)?
    } else {
        g.stack_rows(seq)?
    };
    Ok((x, batch))
}

fn sequence_params(g: &mut Graph, set: &ParamSet, p: &LstmParams) -> Result<([Var; 4], [Var; 4])> {
    let mut ws = Vec::with_capacity(4);
    let mut bs = Vec::with_capacity(4);
    for k in 0..4 {
        ws.push(g.param(set, p.weights[k])?);
        bs.push(g.param(set, p.biases[k])?);
    }
    Ok((ws.try_into().expect("four gates"), bs.try_into().expect("four gates")))
}

/// Runs `p` over a time-major input (`batch` rows per step) from a zero
/// state and returns the last hidden state, [batch, hidden].
pub fn lstm_encode_stacked(
    g: &mut Graph,
    set: &ParamSet,
    p: &LstmParams,
    x: Var,
    batch: usize,
    reverse: bool,
) -> Result<Var> {
    if width(g, x) != p.input_dim {
        return Err(Error::shape(
            "lstm",
            format!("input width {} != input_dim {}", width(g, x), p.input_dim),
        ));
    }
    let (ws, bs) = sequence_params(g, set, p)?;
    g.lstm_sequence(x, batch, ws, bs, reverse)
}

/// Runs `p` over `seq` in the given order and returns the last hidden state.
pub fn lstm_final_state(
    g: &mut Graph,
    set: &ParamSet,
    p: &LstmParams,
    seq: impl IntoIterator<Item = Var>,
) -> Result<Var> {
    let seq: Vec<Var> = seq.into_iter().collect();
    let vector = seq.first().is_some_and(|&v| g.shape(v).len() == 1);
    let (x, batch) = stack_steps(g, &seq)?;
    let h = lstm_encode_stacked(g, set, p, x, batch, false)?;
    if vector {
        g.reshape(h, vec![p.hidden_dim])
    } else {
        Ok(h)
    }
}

/// Bidirectional encoding of a time-major input: the forward LSTM reads
/// the steps in order, the backward one in reverse, and their final
/// hidden states are concatenated (forward first) into [batch, 2 * hidden].
pub fn bilstm_encode_stacked(
    g: &mut Graph,
    set: &ParamSet,
    fwd: &LstmParams,
    bwd: &LstmParams,
    x: Var,
    batch: usize,
) -> Result<Var> {
    let hf = lstm_encode_stacked(g, set, fwd, x, batch, false)?;
    let hb = lstm_encode_stacked(g, set, bwd, x, batch, true)?;
    g.concat(&[hf, hb])
}

/// Bidirectional encoding of a sequence of equally shaped items, giving
/// width `2 * hidden_dim`.
pub fn bilstm_encode(g: &mut Graph, set: &ParamSet, fwd: &LstmParams, bwd: &LstmParams, seq: &[Var]) -> Result<Var> {
    let vector = seq.first().is_some_and(|&v| g.shape(v).len() == 1);
    let (x, batch) = stack_steps(g, seq)?;
    let out = bilstm_encode_stacked(g, set, fwd, bwd, x, batch)?;
    if vector {
        g.reshape(out, vec![fwd.hidden_dim + bwd.hidden_dim])
    } else {
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

/// One affine layer followed by an activation and dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub dropout: f64,
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let weight = set.insert(format!("{prefix}.weight"), init_weight(out_dim, in_dim, rng))?;
        let bias = set.insert(format!("{prefix}.bias"), Tensor::vector(vec![0.0; out_dim]))?;
        Ok(DenseLayer {
            weight,
            bias,
            activation,
            dropout,
        })
    }

    pub fn find(set: &ParamSet, prefix: &str, activation: Activation, dropout: f64) -> Result<Self> {
        let weight = set
            .find(&format!("{prefix}.weight"))
            .ok_or_else(|| Error::Format(format!("missing parameter `{prefix}.weight`")))?;
        let bias = set
            .find(&format!("{prefix}.bias"))
            .ok_or_else(|| Error::Format(format!("missing parameter `{prefix}.bias`")))?;
        Ok(DenseLayer {
            weight,
            bias,
            activation,
            dropout,
        })
    }

    pub fn in_dim(&self, set: &ParamSet) -> usize {
        set.get(self.weight).shape()[1]
    }

    pub fn out_dim(&self, set: &ParamSet) -> usize {
        set.get(self.weight).shape()[0]
    }

    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, set: &ParamSet, x: Var, rng: Option<&mut R>) -> Result<Var> {
        let w = g.param(set, self.weight)?;
        let b = g.param(set, self.bias)?;
        let z = g.linear(x, w, Some(b))?;
        let a = match self.activation {
            Activation::Identity => z,
            Activation::Relu => g.relu(z),
            Activation::Tanh => g.tanh(z),
            Activation::Sigmoid => g.sigmoid(z),
        };
        g.dropout(a, self.dropout, rng)
    }
}

/// Applies `layers` in order. Passing `rng` enables training-mode dropout;
/// `None` is evaluation mode, where dropout is the identity.
pub fn dense_dropout_stack<R: Rng + ?Sized>(
    g: &mut Graph,
    set: &ParamSet,
    x: Var,
    layers: &[DenseLayer],
    mut rng: Option<&mut R>,
) -> Result<Var> {
    let mut h = x;
    for layer in layers {
        if !(0.0..1.0).contains(&layer.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", layer.dropout)));
        }
        h = layer.forward(g, set, h, rng.as_deref_mut())?;
    }
    Ok(h)
}

/// Mean squared error; a thin alias kept next to the layers that use it.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.mse(pred, target)
}
