//! Parameter update rules: SGD with momentum and Adam.
//!
//! Optimizers own their per-parameter state and consume gradients aligned
//! with the parameter list. Bias correction in Adam uses the global step
//! count, incremented once per `step` call.

use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

struct Slot {
    /// Momentum buffer (SGD) or first-moment estimate (Adam).
    m: Tensor,
    /// Second-moment estimate; Adam only.
    v: Option<Tensor>,
}

pub struct Optimizer {
    pub kind: OptimizerKind,
    slots: Vec<Slot>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Param]) -> Optimizer {
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        let slots = params
            .iter()
            .map(|p| Slot {
                m: Tensor::zeros(&p.value.shape),
                v: adam.then(|| Tensor::zeros(&p.value.shape)),
            })
            .collect();
        Optimizer { kind, slots, t: 0 }
    }

    /// Apply one update. `grads` must align with `params`, one gradient per
    /// parameter with a matching shape.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.slots.len() {
            return Err(Error::contract(format!(
                "optimizer expects {} gradients, got {}",
                self.slots.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.value.shape != g.shape {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter '{}' {:?}",
                    g.shape, p.name, p.value.shape
                )));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum {
                learning_rate,
                momentum,
            } => {
                for ((p, g), slot) in params.iter_mut().zip(grads).zip(self.slots.iter_mut()) {
                    for i in 0..g.data.len() {
                        slot.m.data[i] = momentum * slot.m.data[i] + g.data[i];
                        p.value.data[i] -= learning_rate * slot.m.data[i];
                    }
                }
            }
            OptimizerKind::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, g), slot) in params.iter_mut().zip(grads).zip(self.slots.iter_mut()) {
                    let v = slot.v.as_mut().unwrap();
                    for i in 0..g.data.len() {
                        let gi = g.data[i];
                        slot.m.data[i] = beta1 * slot.m.data[i] + (1.0 - beta1) * gi;
                        v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = slot.m.data[i] / bc1;
                        let v_hat = v.data[i] / bc2;
                        p.value.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> Vec<Param> {
        vec![Param {
            name: "w".to_string(),
            value: Tensor::from_vec(&[1], vec![v]).unwrap(),
        }]
    }

    #[test]
    fn sgd_momentum_matches_closed_form_on_quadratic() {
        // f(w) = 0.5 * a * w^2, gradient a * w. Recurrence computed by hand.
        let a = 0.5;
        let (lr, mu) = (0.1, 0.9);
        let mut params = single_param(2.0);
        let mut opt = Optimizer::new(
            OptimizerKind::SgdMomentum {
                learning_rate: lr,
                momentum: mu,
            },
            &params,
        );
        let mut w_ref = 2.0;
        let mut vel = 0.0;
        for _ in 0..10 {
            let g = a * params[0].value.data[0];
            opt.step(
                &mut params,
                &[Tensor::from_vec(&[1], vec![g]).unwrap()],
            )
            .unwrap();
            vel = mu * vel + a * w_ref;
            w_ref -= lr * vel;
            assert!((params[0].value.data[0] - w_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With bias correction, the first Adam step is lr * g / (|g| + eps).
        let mut params = single_param(1.0);
        let mut opt = Optimizer::new(
            OptimizerKind::Adam {
                learning_rate: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            &params,
        );
        opt.step(&mut params, &[Tensor::from_vec(&[1], vec![3.0]).unwrap()])
            .unwrap();
        assert!((params[0].value.data[0] - (1.0 - 0.01)).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [
            OptimizerKind::SgdMomentum {
                learning_rate: 0.1,
                momentum: 0.9,
            },
            OptimizerKind::Adam {
                learning_rate: 0.1,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
        ] {
            let mut params = single_param(1.5);
            let mut opt = Optimizer::new(kind, &params);
            for _ in 0..5 {
                opt.step(&mut params, &[Tensor::zeros(&[1])]).unwrap();
            }
            assert_eq!(params[0].value.data[0], 1.5);
        }
    }

    #[test]
    fn step_rejects_mismatched_grads() {
        let mut params = single_param(1.0);
        let mut opt = Optimizer::new(
            OptimizerKind::SgdMomentum {
                learning_rate: 0.1,
                momentum: 0.9,
            },
            &params,
        );
        assert!(opt.step(&mut params, &[]).is_err());
        assert!(opt
            .step(&mut params, &[Tensor::zeros(&[2])])
            .is_err());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || -> Vec<f64> {
            let mut params = single_param(0.7);
            let mut opt = Optimizer::new(
                OptimizerKind::Adam {
                    learning_rate: 0.05,
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
                &params,
            );
            for k in 0..5 {
                let g = (k as f64 + 1.0) * 0.3 * params[0].value.data[0];
                opt.step(&mut params, &[Tensor::from_vec(&[1], vec![g]).unwrap()])
                    .unwrap();
            }
            params[0].value.data.clone()
        };
        assert_eq!(run(), run());
    }
}
