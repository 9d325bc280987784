//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value and
//! the handles of its inputs. Nodes can only reference earlier nodes, so the
//! tape is acyclic and already in topological order; `backward` walks it in
//! reverse. Parameters enter the tape through [`Graph::param`] and their
//! gradients are accumulated back into the owning [`ParamSet`].

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LinearStack {
        x: Var,
        ws: Vec<Var>,
        bs: Vec<Var>,
    },
    SliceCols {
        src: Var,
        start: usize,
        width: usize,
    },
    /// Gate activations `[i | f | g | o | tanh c]` are kept for the reverse pass.
    LstmGates {
        pre: Var,
        c_prev: Var,
        acts: Vec<f64>,
    },
    LstmSequence(Box<LstmTape>),
    Reshape(Var),
    SparseLinear {
        rows: Vec<Vec<(usize, f64)>>,
        w: Var,
        b: Option<Var>,
    },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Mse(Var, Var),
}

/// What the reverse pass of a fused LSTM run needs. Per-step arrays are
/// stored in the block order of `x`, not in processing order.
#[derive(Debug)]
struct LstmTape {
    x: Var,
    ws: [Var; 4],
    bs: [Var; 4],
    batch: usize,
    reverse: bool,
    /// Input and recurrent weights, transposed and gate-stacked:
    /// (in × 4H) and (H × 4H).
    wxt: Vec<f64>,
    wht: Vec<f64>,
    /// Gate activations `[i | f | g | o | tanh c]` per row.
    acts: Vec<f64>,
    /// State before each block was consumed.
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// The computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
}

/// Splits a rank ≤ 2 shape into (rows, cols); vectors are a single row.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("rank > 2 is rejected at construction"),
    }
}

const EXP_MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
#[allow(clippy::excessive_precision)]
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;

/// `e^x`, branch-free so that loops over it vectorize. Inputs are clamped
/// to [-708, 709]; the relative error is a few ulp.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    let t = x * std::f64::consts::LOG2_E + EXP_MAGIC;
    let k = t - EXP_MAGIC;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 + r * (1.0 / 13.0);
    p = 1.0 + r * (1.0 / 12.0) * p;
    p = 1.0 + r * (1.0 / 11.0) * p;
    p = 1.0 + r * (1.0 / 10.0) * p;
    p = 1.0 + r * (1.0 / 9.0) * p;
    p = 1.0 + r * (1.0 / 8.0) * p;
    p = 1.0 + r * (1.0 / 7.0) * p;
    p = 1.0 + r * (1.0 / 6.0) * p;
    p = 1.0 + r * (1.0 / 5.0) * p;
    p = 1.0 + r * (1.0 / 4.0) * p;
    p = 1.0 + r * (1.0 / 3.0) * p;
    p = 1.0 + r * 0.5 * p;
    p = 1.0 + r * p;
    let k = t.to_bits().wrapping_sub(EXP_MAGIC.to_bits()) as i64;
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

/// `e^y - 1` without cancellation near zero.
#[inline(always)]
fn expm1(y: f64) -> f64 {
    let mut p = 1.0 + y * (1.0 / 17.0);
    let mut k = 16.0;
    while k > 1.5 {
        p = 1.0 + y / k * p;
        k -= 1.0;
    }
    let series = y * p;
    let direct = exp(y) - 1.0;
    if y.abs() < 1.0 {
        series
    } else {
        direct
    }
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    let e = expm1(2.0 * x.clamp(-20.0, 20.0));
    e / (e + 2.0)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` call's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are computed for it but go nowhere.
    pub fn input(&mut self, tensor: &Tensor) -> Result<Var> {
        if tensor.rank() > 2 {
            return Err(Error::shape("input", format!("rank {} > 2", tensor.rank())));
        }
        Ok(self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf))
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        self.input(&t)
    }

    /// Binds a parameter into the tape. Binding the same id twice returns the
    /// same node.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let t = set.get(id);
        if t.rank() > 2 {
            return Err(Error::shape("param", format!("rank {} > 2", t.rank())));
        }
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id));
        self.bound.insert(id, v);
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(shape, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(shape, value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(shape, value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, Op::Scale(a, s))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Affine map `x · wᵀ + b` with `w` of shape (out, in).
    ///
    /// `x` is either a vector of length `in` or a batch of shape (rows, in).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (out_dim, in_dim) = match self.shape(w) {
            [o, i] => (*o, *i),
            s => return Err(Error::shape("linear", format!("weight must be rank 2, got {s:?}"))),
        };
        let xs = self.shape(x).to_vec();
        let (rows, cols) = match xs.as_slice() {
            [_] | [_, _] => rows_cols(&xs),
            _ => return Err(Error::shape("linear", format!("input must be rank 1 or 2, got {xs:?}"))),
        };
        if cols != in_dim {
            return Err(Error::shape(
                "linear",
                format!("input width {cols} does not match weight in-dim {in_dim}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape(
                    "linear",
                    format!("bias shape {:?}, expected [{out_dim}]", self.shape(b)),
                ));
            }
        }
        let mut out = vec![0.0; rows * out_dim];
        gemm_nt(self.value(x), self.value(w), rows, in_dim, out_dim, &mut out);
        if let Some(b) = b {
            let bias = self.value(b);
            for row in out.chunks_exact_mut(out_dim) {
                row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
            }
        }
        let shape = if xs.len() == 1 {
            vec![out_dim]
        } else {
            vec![rows, out_dim]
        };
        Ok(self.push(shape, out, Op::Linear { x, w, b }))
    }

    /// Affine map over a batch of sparse rows given as `(column, value)`
    /// pairs; the result has shape (rows, out). Only `w` and `b` receive
    /// gradients.
    pub fn sparse_linear(&mut self, rows: &[Vec<(usize, f64)>], w: Var, b: Option<Var>) -> Result<Var> {
        let (out_dim, in_dim) = match self.shape(w) {
            [o, i] => (*o, *i),
            s => {
                return Err(Error::shape(
                    "sparse_linear",
                    format!("weight must be rank 2, got {s:?}"),
                ))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape(
                    "sparse_linear",
                    format!("bias shape {:?}, expected [{out_dim}]", self.shape(b)),
                ));
            }
        }
        let vw = self.value(w);
        let mut out = vec![0.0; rows.len() * out_dim];
        for (row, dst) in rows.iter().zip(out.chunks_exact_mut(out_dim)) {
            for &(i, v) in row {
                if i >= in_dim {
                    return Err(Error::shape(
                        "sparse_linear",
                        format!("column {i} outside input width {in_dim}"),
                    ));
                }
                for (o, d) in dst.iter_mut().enumerate() {
                    *d += v * vw[o * in_dim + i];
                }
            }
        }
        if let Some(b) = b {
            let bias = self.value(b);
            for row in out.chunks_exact_mut(out_dim) {
                row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
            }
        }
        let op = Op::SparseLinear {
            rows: rows.to_vec(),
            w,
            b,
        };
        Ok(self.push(vec![rows.len(), out_dim], out, op))
    }

    /// Several affine maps of the same input evaluated as one product; the
    /// outputs are laid side by side, `ws[0]`'s first. Equivalent to
    /// concatenating `linear(x, ws[k], Some(bs[k]))` over `k`.
    pub fn linear_stack(&mut self, x: Var, ws: &[Var], bs: &[Var]) -> Result<Var> {
        if ws.is_empty() || ws.len() != bs.len() {
            return Err(Error::shape(
                "linear_stack",
                "need one bias per weight and at least one weight",
            ));
        }
        let xs = self.shape(x).to_vec();
        let (rows, in_dim) = match xs.as_slice() {
            [_] | [_, _] => rows_cols(&xs),
            _ => {
                return Err(Error::shape(
                    "linear_stack",
                    format!("input must be rank 1 or 2, got {xs:?}"),
                ))
            }
        };
        let mut total = 0;
        for (&w, &b) in ws.iter().zip(bs) {
            match self.shape(w) {
                [o, i] if *i == in_dim && self.shape(b) == [*o] => total += o,
                s => {
                    return Err(Error::shape(
                        "linear_stack",
                        format!(
                            "weight {s:?} / bias {:?} incompatible with input width {in_dim}",
                            self.shape(b)
                        ),
                    ))
                }
            }
        }
        // stacked weightᵀ, (in × total)
        let mut wt = vec![0.0; in_dim * total];
        let mut bias = Vec::with_capacity(total);
        let mut offset = 0;
        for (&w, &b) in ws.iter().zip(bs) {
            let out = self.shape(w)[0];
            let vw = self.value(w);
            for o in 0..out {
                for i in 0..in_dim {
                    wt[i * total + offset + o] = vw[o * in_dim + i];
                }
            }
            bias.extend_from_slice(self.value(b));
            offset += out;
        }
        let mut out = vec![0.0; rows * total];
        for row in out.chunks_exact_mut(total) {
            row.copy_from_slice(&bias);
        }
        gemm_nn(self.value(x), &wt, rows, in_dim, total, &mut out);
        let shape = if xs.len() == 1 { vec![total] } else { vec![rows, total] };
        let op = Op::LinearStack {
            x,
            ws: ws.to_vec(),
            bs: bs.to_vec(),
        };
        Ok(self.push(shape, out, op))
    }

    /// Same values under a new shape with the same number of elements.
    pub fn reshape(&mut self, src: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.len() > 2 || shape.iter().product::<usize>() != self.value(src).len() {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", self.shape(src))));
        }
        let value = self.value(src).to_vec();
        Ok(self.push(shape, value, Op::Reshape(src)))
    }

    /// Whether `v` is a constant input, so its gradient is never needed.
    pub fn is_constant(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Final hidden state ([batch, H]) of an LSTM run from a zero state.
    ///
    /// `x` is time-major: block `t` (rows `t * batch..(t + 1) * batch`) is
    /// the input at step `t`. With `reverse` the blocks are read last to
    /// first. `ws` are the gate weights (H × (in + H), applied to
    /// `[x_t, h_{t-1}]`) and `bs` the biases, in input, forget, candidate,
    /// output order.
    pub fn lstm_sequence(&mut self, x: Var, batch: usize, ws: [Var; 4], bs: [Var; 4], reverse: bool) -> Result<Var> {
        let (total_rows, in_dim) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::shape(
                    "lstm_sequence",
                    format!("input must be rank 2, got {s:?}"),
                ))
            }
        };
        if batch == 0 || total_rows == 0 || total_rows % batch != 0 {
            return Err(Error::shape(
                "lstm_sequence",
                format!("{total_rows} rows do not split into steps of {batch}"),
            ));
        }
        let hd = self.shape(bs[0]).first().copied().unwrap_or(0);
        for k in 0..4 {
            if self.shape(ws[k]) != [hd, in_dim + hd] || self.shape(bs[k]) != [hd] || hd == 0 {
                return Err(Error::shape(
                    "lstm_sequence",
                    format!(
                        "gate weight {:?} / bias {:?} incompatible with input width {in_dim}",
                        self.shape(ws[k]),
                        self.shape(bs[k])
                    ),
                ));
            }
        }
        let steps = total_rows / batch;
        let four_h = 4 * hd;
        let mut wxt = vec![0.0; in_dim * four_h];
        let mut wht = vec![0.0; hd * four_h];
        let mut bias = Vec::with_capacity(four_h);
        for k in 0..4 {
            let w = self.value(ws[k]);
            for o in 0..hd {
                let row = &w[o * (in_dim + hd)..(o + 1) * (in_dim + hd)];
                for i in 0..in_dim {
                    wxt[i * four_h + k * hd + o] = row[i];
                }
                for i in 0..hd {
                    wht[i * four_h + k * hd + o] = row[in_dim + i];
                }
            }
            bias.extend_from_slice(self.value(bs[k]));
        }
        let mut pre = vec![0.0; total_rows * four_h];
        for row in pre.chunks_exact_mut(four_h) {
            row.copy_from_slice(&bias);
        }
        gemm_nn(self.value(x), &wxt, total_rows, in_dim, four_h, &mut pre);

        let block = batch * hd;
        let mut acts = vec![0.0; total_rows * 5 * hd];
        let mut h_prev = vec![0.0; total_rows * hd];
        let mut c_prev = vec![0.0; total_rows * hd];
        let mut h = vec![0.0; block];
        let mut c = vec![0.0; block];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            h_prev[t * block..(t + 1) * block].copy_from_slice(&h);
            c_prev[t * block..(t + 1) * block].copy_from_slice(&c);
            let p = &mut pre[t * batch * four_h..(t + 1) * batch * four_h];
            gemm_nn(&h, &wht, batch, hd, four_h, p);
            lstm_gates_kernel(
                p,
                &c_prev[t * block..(t + 1) * block],
                hd,
                &mut acts[t * batch * 5 * hd..(t + 1) * batch * 5 * hd],
                &mut h,
                &mut c,
            );
        }
        let tape = LstmTape {
            x,
            ws,
            bs,
            batch,
            reverse,
            wxt,
            wht,
            acts,
            h_prev,
            c_prev,
        };
        Ok(self.push(vec![batch, hd], h, Op::LstmSequence(Box::new(tape))))
    }

    fn lstm_sequence_backward(&self, tape: &LstmTape, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (total_rows, in_dim) = rows_cols(self.shape(tape.x));
        let batch = tape.batch;
        let hd = dy.len() / batch;
        let four_h = 4 * hd;
        let steps = total_rows / batch;
        let block = batch * hd;
        let mut dpre = vec![0.0; total_rows * four_h];
        let mut dh = dy.to_vec();
        let mut dc = vec![0.0; block];
        for s in (0..steps).rev() {
            let t = if tape.reverse { steps - 1 - s } else { s };
            let dp = &mut dpre[t * batch * four_h..(t + 1) * batch * four_h];
            lstm_gates_backward(
                &tape.acts[t * batch * 5 * hd..(t + 1) * batch * 5 * hd],
                &tape.c_prev[t * block..(t + 1) * block],
                &dh,
                &mut dc,
                hd,
                dp,
            );
            dh.iter_mut().for_each(|d| *d = 0.0);
            gemm_nt(dp, &tape.wht, batch, four_h, hd, &mut dh);
        }

        let mut dwxt = vec![0.0; in_dim * four_h];
        gemm_tn(self.value(tape.x), &dpre, total_rows, in_dim, four_h, &mut dwxt);
        let mut dwht = vec![0.0; hd * four_h];
        gemm_tn(&tape.h_prev, &dpre, total_rows, hd, four_h, &mut dwht);
        let mut db = vec![0.0; four_h];
        for row in dpre.chunks_exact(four_h) {
            add_into(&mut db, row);
        }
        for k in 0..4 {
            accumulate(grads, tape.ws[k], hd * (in_dim + hd), |g| {
                for o in 0..hd {
                    let row = &mut g[o * (in_dim + hd)..(o + 1) * (in_dim + hd)];
                    for i in 0..in_dim {
                        row[i] += dwxt[i * four_h + k * hd + o];
                    }
                    for i in 0..hd {
                        row[in_dim + i] += dwht[i * four_h + k * hd + o];
                    }
                }
            });
            accumulate(grads, tape.bs[k], hd, |g| add_into(g, &db[k * hd..(k + 1) * hd]));
        }
        if !self.is_constant(tape.x) {
            accumulate(grads, tape.x, total_rows * in_dim, |g| {
                gemm_nt(&dpre, &tape.wxt, total_rows, four_h, in_dim, g)
            });
        }
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_cols(&mut self, src: Var, start: usize, width: usize) -> Result<Var> {
        let shape = self.shape(src).to_vec();
        let (rows, cols) = match shape.as_slice() {
            [_] | [_, _] => rows_cols(&shape),
            _ => return Err(Error::shape("slice_cols", format!("rank {} unsupported", shape.len()))),
        };
        if width == 0 || start + width > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} outside width {cols}", start + width),
            ));
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + width]);
        }
        let new_shape = if shape.len() == 1 {
            vec![width]
        } else {
            vec![rows, width]
        };
        Ok(self.push(new_shape, out, Op::SliceCols { src, start, width }))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no operands"))?;
        let rank = self.shape(first).len();
        if rank == 0 || rank > 2 {
            return Err(Error::shape("concat", format!("unsupported rank {rank}")));
        }
        let rows = rows_cols(self.shape(first)).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != rank || rows_cols(s).0 != rows {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?}", s, self.shape(first)),
                ));
            }
            total += rows_cols(s).1;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = rows_cols(self.shape(p)).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        Ok(self.push(shape, out, Op::Concat(parts.to_vec())))
    }

    /// Stacks vectors or row batches of equal width along the first axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("stack_rows", "no operands"))?;
        let cols = match self.shape(first) {
            [c] | [_, c] => *c,
            s => return Err(Error::shape("stack_rows", format!("unsupported shape {s:?}"))),
        };
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            match self.shape(p) {
                [c] | [_, c] if *c == cols => {}
                s => return Err(Error::shape("stack_rows", format!("{s:?} does not have width {cols}"))),
            }
            rows += rows_cols(self.shape(p)).0;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, cols], out, Op::StackRows(parts.to_vec())))
    }

    /// One LSTM state update from gate pre-activations `pre` ([B, 4H] in
    /// input, forget, candidate, output order) and the previous cell state
    /// ([B, H]). Returns `[h | c]` as [B, 2H].
    pub fn lstm_gates(&mut self, pre: Var, c_prev: Var) -> Result<Var> {
        let (rows, four_h) = rows_cols(self.shape(pre));
        let (c_rows, hd) = rows_cols(self.shape(c_prev));
        if self.shape(pre).len() != self.shape(c_prev).len() || rows != c_rows || four_h != 4 * hd {
            return Err(Error::shape(
                "lstm_gates",
                format!(
                    "pre-activations {:?} vs cell state {:?}",
                    self.shape(pre),
                    self.shape(c_prev)
                ),
            ));
        }
        let mut acts = vec![0.0; rows * 5 * hd];
        let (mut h, mut c) = (vec![0.0; rows * hd], vec![0.0; rows * hd]);
        lstm_gates_kernel(self.value(pre), self.value(c_prev), hd, &mut acts, &mut h, &mut c);
        let mut out = Vec::with_capacity(rows * 2 * hd);
        for (hr, cr) in h.chunks_exact(hd).zip(c.chunks_exact(hd)) {
            out.extend_from_slice(hr);
            out.extend_from_slice(cr);
        }
        let shape = if self.shape(pre).len() == 1 {
            vec![2 * hd]
        } else {
            vec![rows, 2 * hd]
        };
        Ok(self.push(shape, out, Op::LstmGates { pre, c_prev, acts }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape("softmax", format!("unsupported shape {shape:?}")));
        }
        let cols = rows_cols(&shape).1;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(shape, out, Op::Softmax(a)))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    ///
    /// With `rng == None` (evaluation) the input handle is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, value, Op::Dropout { x: a, mask }))
    }

    /// Row lookup into a rank-2 table; the result has shape (rows.len(), cols).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = match self.shape(table) {
            [n, c] => (*n, *c),
            s => return Err(Error::shape("gather", format!("table must be rank 2, got {s:?}"))),
        };
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::shape("gather", format!("row {r} out of range {n}")));
            }
            out.extend_from_slice(&self.value(table)[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(
            vec![rows.len(), cols],
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![], vec![s], Op::Sum(a))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(vec![], vec![s / n], Op::Mse(pred, target)))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Node gradients are recomputed from scratch on every call; parameter
    /// gradients are added into `params` and keep accumulating until the
    /// caller zeroes them.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                params.get_mut(*id).accumulate_grad(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, self.value(*a).len(), |g| add_into(g, dy));
                accumulate(grads, *b, self.value(*b).len(), |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self.value(*a).len(), |g| add_into(g, dy));
                accumulate(grads, *b, self.value(*b).len(), |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, va.len(), |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(vb) {
                        *g += d * x;
                    }
                });
                accumulate(grads, *b, vb.len(), |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(va) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, dy.len(), |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += s * d)
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(self.shape(*a));
                let n = rows_cols(self.shape(*b)).1;
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = dC · Bᵀ
                accumulate(grads, *a, m * k, |g| gemm_nt(dy, vb, m, n, k, g));
                // dB = Aᵀ · dC
                accumulate(grads, *b, k * n, |g| gemm_tn(va, dy, m, k, n, g));
            }
            Op::Linear { x, w, b } => {
                let (rows, in_dim) = rows_cols(self.shape(*x));
                let out_dim = self.shape(*w)[0];
                let (vx, vw) = (self.value(*x), self.value(*w));
                // dx = dy · W
                accumulate(grads, *x, rows * in_dim, |g| gemm_nn(dy, vw, rows, out_dim, in_dim, g));
                // dW = dyᵀ · x
                accumulate(grads, *w, out_dim * in_dim, |g| {
                    gemm_tn(dy, vx, rows, out_dim, in_dim, g)
                });
                if let Some(b) = b {
                    accumulate(grads, *b, out_dim, |g| {
                        for row in dy.chunks_exact(out_dim) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::LinearStack { x, ws, bs } => {
                let (rows, in_dim) = rows_cols(self.shape(*x));
                let total = rows_cols(&node.shape).1;
                let vx = self.value(*x);
                let mut offset = 0;
                let mut dx = vec![0.0; rows * in_dim];
                for (&w, &b) in ws.iter().zip(bs) {
                    let out = self.shape(w)[0];
                    let mut dblock = Vec::with_capacity(rows * out);
                    for r in 0..rows {
                        dblock.extend_from_slice(&dy[r * total + offset..r * total + offset + out]);
                    }
                    gemm_nn(&dblock, self.value(w), rows, out, in_dim, &mut dx);
                    accumulate(grads, w, out * in_dim, |g| gemm_tn(&dblock, vx, rows, out, in_dim, g));
                    accumulate(grads, b, out, |g| {
                        for row in dblock.chunks_exact(out) {
                            add_into(g, row);
                        }
                    });
                    offset += out;
                }
                accumulate(grads, *x, rows * in_dim, |g| add_into(g, &dx));
            }
            Op::SliceCols { src, start, width } => {
                let (rows, cols) = rows_cols(self.shape(*src));
                accumulate(grads, *src, rows * cols, |g| {
                    for r in 0..rows {
                        add_into(
                            &mut g[r * cols + start..r * cols + start + width],
                            &dy[r * width..(r + 1) * width],
                        );
                    }
                });
            }
            Op::LstmGates { pre, c_prev, acts } => {
                let (rows, hd) = rows_cols(self.shape(*c_prev));
                let mut dh = Vec::with_capacity(rows * hd);
                let mut dc = Vec::with_capacity(rows * hd);
                for d in dy.chunks_exact(2 * hd) {
                    dh.extend_from_slice(&d[..hd]);
                    dc.extend_from_slice(&d[hd..]);
                }
                let mut dpre = vec![0.0; rows * 4 * hd];
                lstm_gates_backward(acts, self.value(*c_prev), &dh, &mut dc, hd, &mut dpre);
                accumulate(grads, *pre, dpre.len(), |g| add_into(g, &dpre));
                accumulate(grads, *c_prev, dc.len(), |g| add_into(g, &dc));
            }
            Op::LstmSequence(seq) => self.lstm_sequence_backward(seq, dy, grads),
            Op::Reshape(src) => accumulate(grads, *src, dy.len(), |g| add_into(g, dy)),
            Op::SparseLinear { rows, w, b } => {
                let (out_dim, in_dim) = rows_cols(self.shape(*w));
                accumulate(grads, *w, out_dim * in_dim, |g| {
                    for (row, d) in rows.iter().zip(dy.chunks_exact(out_dim)) {
                        for &(i, v) in row {
                            for (o, d) in d.iter().enumerate() {
                                g[o * in_dim + i] += d * v;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    accumulate(grads, *b, out_dim, |g| {
                        for row in dy.chunks_exact(out_dim) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::Concat(parts) => {
                let rows = rows_cols(&node.shape).0;
                let total = rows_cols(&node.shape).1;
                let mut offset = 0;
                for &p in parts {
                    let c = rows_cols(self.shape(p)).1;
                    accumulate(grads, p, rows * c, |g| {
                        for r in 0..rows {
                            let src = &dy[r * total + offset..r * total + offset + c];
                            add_into(&mut g[r * c..(r + 1) * c], src);
                        }
                    });
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    accumulate(grads, p, n, |g| add_into(g, &dy[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Sigmoid(a) => accumulate(grads, *a, dy.len(), |g| {
                for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                    *g += d * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => accumulate(grads, *a, dy.len(), |g| {
                for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                    *g += d * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, dy.len(), |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(x) {
                        if *x > 0.0 {
                            *g += d;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let cols = rows_cols(&node.shape).1;
                accumulate(grads, *a, dy.len(), |g| {
                    for ((g, d), y) in g
                        .chunks_exact_mut(cols)
                        .zip(dy.chunks_exact(cols))
                        .zip(y.chunks_exact(cols))
                    {
                        let dot: f64 = d.iter().zip(y).map(|(d, y)| d * y).sum();
                        for ((g, d), y) in g.iter_mut().zip(d).zip(y) {
                            *g += y * (d - dot);
                        }
                    }
                })
            }
            Op::Dropout { x, mask } => accumulate(grads, *x, dy.len(), |g| {
                for ((g, d), m) in g.iter_mut().zip(dy).zip(mask) {
                    *g += d * m;
                }
            }),
            Op::Gather { table, rows } => {
                let cols = rows_cols(self.shape(*table)).1;
                let len = self.value(*table).len();
                accumulate(grads, *table, len, |g| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut g[r * cols..(r + 1) * cols], &dy[k * cols..(k + 1) * cols]);
                    }
                })
            }
            Op::Sum(a) => {
                let d = dy[0];
                accumulate(grads, *a, self.value(*a).len(), |g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::Mse(p, t) => {
                let (vp, vt) = (self.value(*p), self.value(*t));
                let scale = 2.0 * dy[0] / vp.len().max(1) as f64;
                accumulate(grads, *p, vp.len(), |g| {
                    for ((g, p), t) in g.iter_mut().zip(vp).zip(vt) {
                        *g += scale * (p - t);
                    }
                });
                accumulate(grads, *t, vt.len(), |g| {
                    for ((g, p), t) in g.iter_mut().zip(vp).zip(vt) {
                        *g -= scale * (p - t);
                    }
                });
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

// The kernels are compiled twice: once for the baseline target and once
// with AVX2 enabled, picked at run time. No fused multiply-add is used, so
// both builds produce identical results.
macro_rules! dispatch {
    ($name:ident, $body:ident, $avx:ident) => {
        fn $name(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    unsafe { $avx(a, b, m, k, n, out) };
                    return;
                }
            }
            $body(a, b, m, k, n, out)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
            $body(a, b, m, k, n, out)
        }
    };
}

dispatch!(gemm_nn, gemm_nn_body, gemm_nn_avx2);
dispatch!(gemm_nt, gemm_nt_body, gemm_nt_avx2);
dispatch!(gemm_tn, gemm_tn_body, gemm_tn_avx2);

fn lstm_gates_kernel(vp: &[f64], vc: &[f64], hd: usize, acts: &mut [f64], h: &mut [f64], c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { lstm_gates_avx2(vp, vc, hd, acts, h, c) };
            return;
        }
    }
    lstm_gates_body(vp, vc, hd, acts, h, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn lstm_gates_avx2(vp: &[f64], vc: &[f64], hd: usize, acts: &mut [f64], h: &mut [f64], c: &mut [f64]) {
    lstm_gates_body(vp, vc, hd, acts, h, c)
}

/// Reverse pass of one LSTM step, shared by `LstmGates` and `LstmSequence`.
/// Writes the gate pre-activation gradients to `dpre` and replaces `dc`
/// (gradient w.r.t. the new cell state) with the one for the previous state.
fn lstm_gates_backward(acts: &[f64], c_prev: &[f64], dh: &[f64], dc: &mut [f64], hd: usize, dpre: &mut [f64]) {
    let rows = c_prev.len() / hd;
    for r in 0..rows {
        let a = &acts[r * 5 * hd..(r + 1) * 5 * hd];
        let dp = &mut dpre[r * 4 * hd..(r + 1) * 4 * hd];
        for j in 0..hd {
            let (i, f, g, o, tc) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j], a[4 * hd + j]);
            let k = r * hd + j;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dp[j] = dct * g * i * (1.0 - i);
            dp[hd + j] = dct * c_prev[k] * f * (1.0 - f);
            dp[2 * hd + j] = dct * i * (1.0 - g * g);
            dp[3 * hd + j] = dh[k] * tc * o * (1.0 - o);
            dc[k] = dct * f;
        }
    }
}

/// Gate activations for one LSTM step over `vc.len() / hd` rows: `acts`
/// gets [i f g o tanh(c)] per row, `h` and `c` the new state.
#[inline(always)]
fn lstm_gates_body(vp: &[f64], vc: &[f64], hd: usize, acts: &mut [f64], h: &mut [f64], c: &mut [f64]) {
    let four_h = 4 * hd;
    let rows = vc.len() / hd;
    for r in 0..rows {
        let p = &vp[r * four_h..(r + 1) * four_h];
        let a = &mut acts[r * 5 * hd..(r + 1) * 5 * hd];
        let (ifgo, tc) = a.split_at_mut(4 * hd);
        for (y, &x) in ifgo[..2 * hd].iter_mut().zip(&p[..2 * hd]) {
            *y = sigmoid(x);
        }
        for (y, &x) in ifgo[2 * hd..3 * hd].iter_mut().zip(&p[2 * hd..3 * hd]) {
            *y = tanh(x);
        }
        for (y, &x) in ifgo[3 * hd..].iter_mut().zip(&p[3 * hd..]) {
            *y = sigmoid(x);
        }
        let (h_out, c_out) = (&mut h[r * hd..(r + 1) * hd], &mut c[r * hd..(r + 1) * hd]);
        for j in 0..hd {
            let cj = ifgo[hd + j] * vc[r * hd + j] + ifgo[j] * ifgo[2 * hd + j];
            c_out[j] = cj;
            tc[j] = tanh(cj);
            h_out[j] = ifgo[3 * hd + j] * tc[j];
        }
    }
}

/// out(m×n) += a(m×k) · b(k×n)
#[inline(always)]
fn gemm_nn_body(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
        }
    }
}

/// out(m×n) += a(m×k) · b(n×k)ᵀ
#[inline(always)]
fn gemm_nt_body(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    if m > 1 {
        // row-times-column dot products do not vectorize; transposing b once
        // turns the product into row updates that do
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        gemm_nn_body(a, &bt, m, k, n, out);
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out(k×n) += a(m×k)ᵀ · b(m×n)
#[inline(always)]
fn gemm_tn_body(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_transcendentals_match_libm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut xs: Vec<f64> = (0..20_000).map(|_| rng.random_range(-40.0..40.0)).collect();
        xs.extend((0..2_000).map(|_| rng.random_range(-1e-3..1e-3)));
        xs.extend([0.0, -0.0, 1e-300, 0.5, -0.5, 700.0, -700.0]);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let mut worst = [0.0f64; 3];
        for x in xs {
            worst[0] = worst[0].max(rel(exp(x), x.exp()));
            worst[1] = worst[1].max(rel(tanh(x), x.tanh()));
            worst[2] = worst[2].max(rel(sigmoid(x), 1.0 / (1.0 + (-x).exp())));
        }
        // a handful of ulp
        assert!(worst.iter().all(|w| *w < 2e-15), "{worst:?}");
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(vec![1], vec![0.0]).unwrap();
        let y = g.sigmoid(x);
        assert_eq!(g.value(y), &[0.5]);
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(vec![2, 1], vec![0.0; 2]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(vec![2], vec![0.0; 2]).unwrap();
        let b = g.constant(vec![3], vec![0.0; 3]).unwrap();
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
        assert!(g.mse(a, b).is_err());
    }

    #[test]
    fn concat_rows() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = g.constant(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn mse_examples() {
        let cases = [
            (vec![1.0, 0.0], vec![0.0, 1.0], 1.0),
            (vec![0.6, 0.4], vec![0.5, 0.5], 0.01),
            (vec![0.3, 0.7], vec![0.3, 0.7], 0.0),
        ];
        for (p, t, want) in cases {
            let mut g = Graph::new();
            let p = g.constant(vec![2], p).unwrap();
            let t = g.constant(vec![2], t).unwrap();
            let l = g.mse(p, t).unwrap();
            assert_abs_diff_eq!(g.value(l)[0], want, epsilon = 1e-15);
        }
    }

    #[test]
    fn grad_of_linear_sum() {
        let mut set = ParamSet::new();
        let w = set.insert("w", Tensor::vector(vec![0.3, -0.7])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&set, w).unwrap();
        let x = g.constant(vec![2], vec![2.0, 3.0]).unwrap();
        let p = g.mul(wv, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss, &mut set).unwrap();
        assert_eq!(set.get(w).grad(), Some(&[2.0, 3.0][..]));
    }

    #[test]
    fn grad_of_sigmoid_at_zero() {
        let mut set = ParamSet::new();
        let w = set.insert("w", Tensor::scalar(0.0)).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&set, w).unwrap();
        let s = g.sigmoid(wv);
        g.backward(s, &mut set).unwrap();
        assert_eq!(set.get(w).grad(), Some(&[0.25][..]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut set = ParamSet::new();
        let mut g = Graph::new();
        let x = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(g.backward(x, &mut set).is_err());
    }

    #[test]
    fn param_grads_accumulate_across_backward_calls() {
        let mut set = ParamSet::new();
        let w = set.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&set, w).unwrap();
        let loss = g.sum(wv);
        g.backward(loss, &mut set).unwrap();
        g.backward(loss, &mut set).unwrap();
        assert_eq!(set.get(w).grad(), Some(&[2.0][..]));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let y = g.dropout::<ChaCha8Rng>(x, 0.5, None).unwrap();
        assert_eq!(x, y);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(g.dropout(x, 1.0, Some(&mut rng)).is_err());
        assert!(g.dropout(x, -0.1, Some(&mut rng)).is_err());
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut set = ParamSet::new();
        let t = set
            .insert("emb", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let tv = g.param(&set, t).unwrap();
        let rows = g.gather(tv, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(rows);
        g.backward(loss, &mut set).unwrap();
        assert_eq!(set.get(t).grad(), Some(&[1.0, 1.0, 0.0, 0.0, 2.0, 2.0][..]));
    }
}
