use crate::error::{Error, Result};
use crate::tensor::ParamSet;

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        AdamState {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update to every parameter in `params`.
    ///
    /// Each parameter moves by `-lr * m_hat / (sqrt(v_hat) + eps)` and is
    /// additionally shrunk by `lr * wd * value`. Gradients are left in place.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::invalid("optimizer state does not match parameter set"));
        }
        for id in params.ids() {
            let t = params.get(id);
            if t.grad().is_none() {
                return Err(Error::MissingGradient(params.name(id).to_string()));
            }
            if t.len() != self.first_moment[id.index()].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("moment size mismatch for `{}`", params.name(id)),
                ));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (
            self.learning_rate,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.epsilon,
        );

        for id in params.ids() {
            let k = id.index();
            let tensor = params.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first_moment[k], &mut self.second_moment[k]);
            for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let decay = lr * wd * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + eps) + decay;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut set = ParamSet::new();
        let id = set.insert("p", Tensor::vector(vec![value])).unwrap();
        set.get_mut(id).accumulate_grad(&[grad]);
        set
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut set = single(0.7, 0.0);
        let mut adam = AdamState::new(&set, 1e-4, 0.0);
        for _ in 0..5 {
            adam.step(&mut set).unwrap();
        }
        assert_eq!(set.get(set.find("p").unwrap()).data(), &[0.7]);
        assert_eq!(adam.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut set = single(0.0, 1.0);
        let mut adam = AdamState::new(&set, 1e-4, 0.0);
        adam.step(&mut set).unwrap();
        let p = set.get(set.find("p").unwrap()).data()[0];
        assert!((p + 1e-4).abs() < 1e-9, "{p}");
    }

    #[test]
    fn decoupled_decay_shrinks_parameter() {
        let mut set = single(2.0, 0.0);
        let mut adam = AdamState::new(&set, 1e-4, 1e-4);
        adam.step(&mut set).unwrap();
        let p = set.get(set.find("p").unwrap()).data()[0];
        assert!((p - 2.0 * (1.0 - 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut adam = AdamState::new(&set, 1e-3, 0.0);
        assert!(matches!(adam.step(&mut set), Err(Error::MissingGradient(n)) if n == "w"));
        assert_eq!(adam.step_count, 0);
    }
}
