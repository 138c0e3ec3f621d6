use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

const RMS_DECAY: f64 = 0.99;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First-order optimizer state for one parameter vector. `step` always
/// descends; callers maximizing an objective pass the negated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Result<Optimizer> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::RmsProp => (Vec::new(), vec![0.0; n_params]),
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Ok(Optimizer {
            kind,
            learning_rate,
            first,
            second,
            step_count: 0,
        })
    }

    pub fn rmsprop(learning_rate: f64, n_params: usize) -> Result<Optimizer> {
        Optimizer::new(OptimizerKind::RmsProp, learning_rate, n_params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::RmsProp => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.second) {
                    *v = RMS_DECAY * *v + (1.0 - RMS_DECAY) * g * g;
                    *p -= lr * g / (v.sqrt() + EPS);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_rate() {
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0, 3).is_err());
        assert!(Optimizer::new(OptimizerKind::Adam, -1.0, 3).is_err());
    }

    #[test]
    fn all_kinds_minimize_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::RmsProp, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.01, 2).unwrap();
            let mut p = vec![3.0, -2.0];
            for _ in 0..3000 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
                opt.step(&mut p, &g);
            }
            assert!(p.iter().all(|x| x.abs() < 0.05), "{kind:?} ended at {p:?}");
            assert_eq!(opt.step_count(), 3000);
        }
    }
}
