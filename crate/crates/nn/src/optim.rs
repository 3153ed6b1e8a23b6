use std::collections::HashMap;

use crate::{ParamId, ParamStore, Tensor};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u32,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8, 0.01)
    }
}

impl AdamW {
    pub fn new(beta1: f32, beta2: f32, eps: f32, weight_decay: f32) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f32) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (id, grad) in grads {
            let param = store.get_mut(*id);
            assert_eq!(param.shape(), grad.shape(), "gradient shape for {id:?}");
            let (m, v) = self.moments.entry(*id).or_insert_with(|| {
                (
                    Tensor::zeros(param.raw_dim()),
                    Tensor::zeros(param.raw_dim()),
                )
            });
            ndarray::Zip::from(&mut *param)
                .and(&mut *m)
                .and(&mut *v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *p -= lr * wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// `lr(t) = base · (1 − min(t, T)/T)^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialDecay {
    pub base_lr: f32,
    pub horizon: usize,
    pub power: f32,
}

impl PolynomialDecay {
    pub fn new(base_lr: f32, horizon: usize, power: f32) -> Self {
        assert!(horizon >= 1, "schedule horizon must be at least 1");
        Self {
            base_lr,
            horizon,
            power,
        }
    }

    pub fn lr_at(&self, t: usize) -> f32 {
        let frac = 1.0 - t.min(self.horizon) as f32 / self.horizon as f32;
        self.base_lr * frac.powf(self.power)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn linear_decay_reaches_zero_at_horizon() {
        let s = PolynomialDecay::new(0.01, 55, 1.0);
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(55), 0.0);
        assert_eq!(s.lr_at(80), 0.0);
        assert!((s.lr_at(11) - 0.008).abs() < 1e-9);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamStore::new();
        let id = ps.add("p", arr1(&[1.0f32, -1.0]).into_dyn());
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        let g = Tensor::from_shape_vec(IxDyn(&[2]), vec![0.5, -3.0]).unwrap();
        opt.step(&mut ps, &[(id, g)], 0.1);
        let p = ps.get(id);
        assert!((p[0] - 0.9).abs() < 1e-5);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut ps = ParamStore::new();
        let id = ps.add("p", arr1(&[2.0f32]).into_dyn());
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.5);
        opt.step(&mut ps, &[(id, Tensor::zeros(IxDyn(&[1])))], 0.1);
        assert!((ps.get(id)[0] - 1.9).abs() < 1e-6);
    }
}
