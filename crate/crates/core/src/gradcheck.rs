//! Finite-difference verification of autodiff gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::ParamSet;

/// Denominator floor for relative errors, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coordinates_checked: usize,
    pub max_relative_error: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backprop gradients with central differences (step `h`).
///
/// `forward` must build a deterministic scalar loss from the current values
/// in `params`. Up to `coords_per_param` coordinates of each parameter are
/// checked (all of them if the parameter is smaller).
pub fn gradient_check<F, R>(
    params: &mut ParamSet,
    mut forward: F,
    coords_per_param: usize,
    h: f64,
    tolerance: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
    R: Rng + ?Sized,
{
    params.zero_grad();
    let mut g = Graph::new();
    let loss = forward(&mut g, params)?;
    g.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| {
            let t = params.get(id);
            t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    params.zero_grad();

    let mut eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = forward(&mut g, params)?;
        Ok(g.value(l)[0])
    };

    let mut report = GradCheckReport {
        coordinates_checked: 0,
        max_relative_error: 0.0,
        worst: None,
        tolerance,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let len = params.get(id).len();
        let picks = sample(rng, len, coords_per_param.min(len)).into_vec();
        for k in picks {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()][k];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err >= report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), k, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bilstm_encode, init_weight, LstmParams};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let u = Uniform::new(-2.0, 2.0).unwrap();
        Tensor::new(shape, (0..n).map(|_| u.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn linear_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut set = ParamSet::new();
        let w = set.insert("w", init_weight(3, 4, &mut rng)).unwrap();
        let b = set.insert("b", random_tensor(&mut rng, vec![3])).unwrap();
        let x = random_tensor(&mut rng, vec![5, 4]);
        let report = gradient_check(
            &mut set,
            |g, set| {
                let xv = g.input(&x)?;
                let wv = g.param(set, w)?;
                let bv = g.param(set, b)?;
                let y = g.linear(xv, wv, Some(bv))?;
                Ok(g.sum(y))
            },
            50,
            1e-5,
            1e-8,
            &mut rng,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.coordinates_checked, 15);
    }

    /// Every primitive, on random inputs in [-2, 2].
    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let mut set = ParamSet::new();
            let a = set.insert("a", random_tensor(&mut rng, vec![3, 4])).unwrap();
            let b = set.insert("b", random_tensor(&mut rng, vec![3, 4])).unwrap();
            let m = set.insert("m", random_tensor(&mut rng, vec![4, 2])).unwrap();
            let w = set.insert("w", random_tensor(&mut rng, vec![5, 6])).unwrap();
            let bias = set.insert("bias", random_tensor(&mut rng, vec![5])).unwrap();
            let emb = set.insert("emb", random_tensor(&mut rng, vec![4, 2])).unwrap();
            let target = random_tensor(&mut rng, vec![3, 5]);
            let report = gradient_check(
                &mut set,
                |g, set| {
                    let (a, b, m, w, bias, emb) = (
                        g.param(set, a)?,
                        g.param(set, b)?,
                        g.param(set, m)?,
                        g.param(set, w)?,
                        g.param(set, bias)?,
                        g.param(set, emb)?,
                    );
                    let s = g.add(a, b)?;
                    let d = g.sub(s, b)?;
                    let p = g.mul(d, b)?;
                    let sg = g.sigmoid(p);
                    let th = g.tanh(a);
                    let q = g.scale(th, 0.7);
                    let mm = g.matmul(sg, m)?;
                    let rows = g.gather(emb, &[1, 3, 1])?;
                    let cat = g.concat(&[q, rows])?;
                    let top = g.gather(emb, &[0])?;
                    let v0 = g.gather(emb, &[2])?;
                    let v = g.sigmoid(v0);
                    let st = g.stack_rows(&[top, v, top])?;
                    let tg = g.constant(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6])?;
                    let stl = g.mse(st, tg)?;
                    let lin = g.linear(cat, w, Some(bias))?;
                    let r = g.relu(lin);
                    let sm = g.softmax(mm)?;
                    let tgt = g.input(&target)?;
                    let l1 = g.mse(r, tgt)?;
                    let l2 = g.sum(sm);
                    let sm2 = g.softmax(lin)?;
                    let l3 = g.mse(sm2, tgt)?;
                    let mmv = g.sum(mm);
                    let l = g.add(l1, l2)?;
                    let l = g.add(l, l3)?;
                    let l = g.add(l, stl)?;
                    let sp = g.sparse_linear(&[vec![(0, 0.5), (3, -1.2)], vec![(5, 2.0), (0, 0.3)]], w, Some(bias))?;
                    let spt = g.tanh(sp);
                    let spl = g.sum(spt);
                    let l = g.add(l, spl)?;
                    let l4 = g.scale(mmv, 0.1);
                    g.add(l, l4)
                },
                50,
                1e-5,
                1e-3,
                &mut rng,
            )
            .unwrap();
            assert!(report.passed(), "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn fused_lstm_gates_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = ParamSet::new();
        let pre = set.insert("pre", random_tensor(&mut rng, vec![3, 8])).unwrap();
        let c = set.insert("c", random_tensor(&mut rng, vec![3, 2])).unwrap();
        let mix = random_tensor(&mut rng, vec![3, 4]);
        let report = gradient_check(
            &mut set,
            |g, set| {
                let (p, c) = (g.param(set, pre)?, g.param(set, c)?);
                let hc = g.lstm_gates(p, c)?;
                let m = g.input(&mix)?;
                let y = g.mul(hc, m)?;
                Ok(g.sum(y))
            },
            50,
            1e-5,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.coordinates_checked, 30);
    }

    #[test]
    fn small_bilstm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut set = ParamSet::new();
        let f = LstmParams::init(&mut set, "fwd", 3, 4, &mut rng).unwrap();
        let b = LstmParams::init(&mut set, "bwd", 3, 4, &mut rng).unwrap();
        let seq: Vec<Tensor> = (0..5).map(|_| random_tensor(&mut rng, vec![3])).collect();
        let report = gradient_check(
            &mut set,
            |g, set| {
                let items = seq.iter().map(|t| g.input(t)).collect::<Result<Vec<_>>>()?;
                let enc = bilstm_encode(g, set, &f, &b, &items)?;
                let sq = g.mul(enc, enc)?;
                Ok(g.sum(sq))
            },
            50,
            1e-5,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
