use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// `Constant` keeps `η_0`; `InverseTime` uses `η_0 / s` at step `s >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    InverseTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 0.01,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("{prefix}.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("{prefix}.weight_decay must be >= 0")));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let moments = if config.kind == OptimizerKind::Adam { num_params } else { 0 };
        Self {
            config,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        }
    }

    pub fn current_lr(&self) -> f64 {
        match self.config.schedule {
            LrSchedule::Constant => self.config.lr,
            LrSchedule::InverseTime => self.config.lr / self.step.max(1) as f64,
        }
    }

    /// One update. A non-finite gradient entry aborts before touching
    /// `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Shape(format!("{} params, {} gradient entries", params.len(), grad.len())));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step += 1;
        let lr = self.current_lr();
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + wd * *p);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                    let g = g + wd * *p;
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(lr: f64, schedule: LrSchedule) -> Optimizer {
        Optimizer::new(
            OptimizerConfig {
                kind: OptimizerKind::Sgd,
                lr,
                schedule,
                weight_decay: 0.0,
            },
            2,
        )
    }

    #[test]
    fn zero_grad_is_noop() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut o = Optimizer::new(
                OptimizerConfig {
                    kind,
                    ..Default::default()
                },
                2,
            );
            let mut p = vec![1.5, -2.0];
            o.step(&mut p, &[0.0, 0.0]).unwrap();
            assert_eq!(p, vec![1.5, -2.0]);
        }
    }

    #[test]
    fn sgd_unit_step_to_zero() {
        let mut p = vec![3.0, -7.0];
        let g = p.clone();
        sgd(1.0, LrSchedule::Constant).step(&mut p, &g).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn inverse_time_schedule() {
        let mut o = sgd(1.0, LrSchedule::InverseTime);
        let mut p = vec![0.0, 0.0];
        for s in 1..=4 {
            o.step(&mut p, &[1.0, 0.0]).unwrap();
            assert_eq!(o.current_lr(), 1.0 / s as f64);
        }
        // 1 + 1/2 + 1/3 + 1/4
        assert!((p[0] + 25.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(x) = (x - 3)^2
        let mut o = Optimizer::new(
            OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 0.1,
                ..Default::default()
            },
            1,
        );
        let mut x = vec![0.0];
        let mut prev = 9.0;
        for _ in 0..10 {
            let g = [2.0 * (x[0] - 3.0)];
            o.step(&mut x, &g).unwrap();
            let f = (x[0] - 3.0) * (x[0] - 3.0);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0, 1.0];
        let err = sgd(0.1, LrSchedule::Constant).step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
