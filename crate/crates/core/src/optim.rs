//! Plain SGD with polynomial learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::layers::Param;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub base_lr: f64,
    pub power: f64,
    pub iter: u64,
    pub max_iter: u64,
}

impl SgdState {
    pub fn new(base_lr: f64, power: f64, max_iter: u64) -> Self {
        SgdState {
            base_lr,
            power,
            iter: 0,
            max_iter: max_iter.max(1),
        }
    }

    /// `base_lr * (1 - iter / max_iter)^power`, clamped at zero once the
    /// schedule is exhausted.
    pub fn lr(&self) -> f64 {
        let frac = (self.iter as f64 / self.max_iter as f64).min(1.0);
        self.base_lr * (1.0 - frac).powf(self.power)
    }

    /// `p <- p - lr * g` for every parameter, then advances the schedule.
    pub fn step(&mut self, params: Vec<Param<'_>>) {
        let lr = self.lr();
        if lr != 0.0 {
            for p in params {
                p.value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .for_each(|(v, g)| *v -= lr * g);
            }
        }
        self.iter += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param_step(state: &mut SgdState, value: f64, grad: f64) -> f64 {
        let mut v = Tensor::filled(&[1], value);
        let mut g = Tensor::filled(&[1], grad);
        state.step(vec![Param {
            name: "p".into(),
            value: &mut v,
            grad: &mut g,
        }]);
        v.data()[0]
    }

    #[test]
    fn single_step() {
        let mut s = SgdState::new(0.1, 0.9, 100);
        assert!((one_param_step(&mut s, 1.0, 1.0) - 0.9).abs() < 1e-15);
        assert_eq!(s.iter, 1);
    }

    #[test]
    fn exhausted_schedule_is_identity() {
        let mut s = SgdState::new(0.1, 0.9, 10);
        s.iter = 10;
        assert_eq!(s.lr(), 0.0);
        assert_eq!(one_param_step(&mut s, 1.0, 123.0), 1.0);
    }

    #[test]
    fn decay_is_strictly_decreasing() {
        let mut s = SgdState::new(2.5e-4, 0.9, 50);
        let lrs: Vec<f64> = (0..=50)
            .map(|i| {
                s.iter = i;
                s.lr()
            })
            .collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
        assert!(lrs.iter().all(|&l| l >= 0.0));
        // (1 - 25/50)^0.9 * 2.5e-4
        assert!((lrs[25] - 2.5e-4 * 0.5f64.powf(0.9)).abs() < 1e-18);
    }
}
