//! SGD with momentum and Adam.

use crate::error::{Error, Result};
use crate::nn::params::ParameterSet;

/// Per-parameter optimizer state. Accumulators share names and shapes with
/// the parameter set they update.
#[derive(Clone, Debug)]
pub enum OptimizerState {
    /// v <- momentum * v + g; p <- p - lr * v
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
        velocity: ParameterSet,
    },
    /// Bias-corrected Adam.
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: u64,
        first_moment: ParameterSet,
        second_moment: ParameterSet,
    },
}

impl OptimizerState {
    pub fn sgd_momentum(learning_rate: f64, momentum: f64, like: &ParameterSet) -> Result<Self> {
        if !(learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        Ok(OptimizerState::SgdMomentum {
            learning_rate,
            momentum,
            velocity: like.zeros_like(),
        })
    }

    pub fn adam(learning_rate: f64, like: &ParameterSet) -> Result<Self> {
        if !(learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        Ok(OptimizerState::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerState::SgdMomentum { learning_rate, .. }
            | OptimizerState::Adam { learning_rate, .. } => *learning_rate,
        }
    }

    /// Apply one update in place. `grads` must conform to `params`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        grads.conforms_to(params)?;
        match self {
            OptimizerState::SgdMomentum { learning_rate, momentum, velocity } => {
                velocity.conforms_to(params)?;
                let names: Vec<String> = params.names().map(str::to_string).collect();
                for name in &names {
                    let g = grads.require(name)?.clone();
                    let v = velocity.values_mut(name)?;
                    for (vi, gi) in v.iter_mut().zip(g.as_slice()) {
                        *vi = *momentum * *vi + gi;
                    }
                    let v = velocity.require(name)?.clone();
                    let p = params.values_mut(name)?;
                    for (pi, vi) in p.iter_mut().zip(v.as_slice()) {
                        *pi -= *learning_rate * vi;
                    }
                }
            }
            OptimizerState::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                step,
                first_moment,
                second_moment,
            } => {
                first_moment.conforms_to(params)?;
                *step += 1;
                let t = *step as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                let names: Vec<String> = params.names().map(str::to_string).collect();
                for name in &names {
                    let g = grads.require(name)?.clone();
                    {
                        let m = first_moment.values_mut(name)?;
                        for (mi, gi) in m.iter_mut().zip(g.as_slice()) {
                            *mi = *beta1 * *mi + (1.0 - *beta1) * gi;
                        }
                    }
                    {
                        let v = second_moment.values_mut(name)?;
                        for (vi, gi) in v.iter_mut().zip(g.as_slice()) {
                            *vi = *beta2 * *vi + (1.0 - *beta2) * gi * gi;
                        }
                    }
                    let m = first_moment.require(name)?.clone();
                    let v = second_moment.require(name)?.clone();
                    let p = params.values_mut(name)?;
                    for ((pi, mi), vi) in p.iter_mut().zip(m.as_slice()).zip(v.as_slice()) {
                        let m_hat = mi / bc1;
                        let v_hat = vi / bc2;
                        *pi -= *learning_rate * m_hat / (v_hat.sqrt() + *epsilon);
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
    use crate::nn::tensor::Tensor;

    fn single(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("p", Tensor::scalar(value)).unwrap();
        p
    }

    fn grad(value: f64) -> ParameterSet {
        single(value)
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut params = single(1.0);
        let mut opt = OptimizerState::sgd_momentum(0.1, 0.0, &params).unwrap();
        opt.step(&mut params, &grad(2.0)).unwrap();
        assert!((params.require("p").unwrap().get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_momentum_steps_match_hand_iteration() {
        // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
        let mut params = single(0.0);
        let mut opt = OptimizerState::sgd_momentum(0.1, 0.9, &params).unwrap();
        opt.step(&mut params, &grad(1.0)).unwrap();
        opt.step(&mut params, &grad(1.0)).unwrap();
        assert!((params.require("p").unwrap().get(0, 0) - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut params = single(1.25);
        let mut opt = OptimizerState::sgd_momentum(0.0, 0.9, &params).unwrap();
        opt.step(&mut params, &grad(3.0)).unwrap();
        opt.step(&mut params, &grad(-1.0)).unwrap();
        assert_eq!(params.require("p").unwrap().get(0, 0), 1.25);
    }

    #[test]
    fn negative_learning_rate_rejected() {
        let params = single(0.0);
        assert!(OptimizerState::sgd_momentum(-0.1, 0.9, &params).is_err());
        assert!(OptimizerState::adam(f64::NAN, &params).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction, the first step is lr * g / (|g| + eps-ish).
        let mut params = single(0.0);
        let mut opt = OptimizerState::adam(1e-3, &params).unwrap();
        opt.step(&mut params, &grad(5.0)).unwrap();
        let p = params.require("p").unwrap().get(0, 0);
        assert!((p + 1e-3).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn identical_seeds_identical_parameters() {
        use rand::Rng;
        let run = || {
            let mut rng = crate::rng::SeedTree::new(77).rng();
            let mut params = ParameterSet::new();
            params
                .insert("w", Tensor::new(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
                .unwrap();
            let mut opt = OptimizerState::adam(1e-2, &params).unwrap();
            for _ in 0..50 {
                let mut g = ParameterSet::new();
                g.insert("w", Tensor::new(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
                    .unwrap();
                opt.step(&mut params, &g).unwrap();
            }
            params
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut params = single(0.0);
        let mut opt = OptimizerState::sgd_momentum(0.1, 0.9, &params).unwrap();
        let mut bad = ParameterSet::new();
        bad.insert("q", Tensor::scalar(1.0)).unwrap();
        assert!(opt.step(&mut params, &bad).is_err());
    }
}
