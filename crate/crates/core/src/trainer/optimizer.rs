use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global-norm clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return Err(Error::InvalidArgument("momentum/beta values must lie in [0, 1)".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Optimizer state: one first-moment (velocity) and, for Adam, one
/// second-moment buffer per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, shapes: &[usize]) -> Self {
        let second = match config.kind {
            OptimizerKind::Adam => shapes.iter().map(|&n| vec![0.0; n]).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second,
            config,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.first.len(), "parameter layout changed");
        let scale = match self.config.grad_clip {
            Some(clip) => {
                let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.steps += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                let mu = self.config.momentum;
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = mu * *v + g * scale;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.adam_beta1, self.config.adam_beta2, self.config.adam_eps);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g * scale;
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }

    pub fn write_arrays(&self, archive: &mut Archive) {
        for (i, m) in self.first.iter().enumerate() {
            archive.push(format!("optimizer.first.{i}"), vec![m.len()], m);
        }
        for (i, v) in self.second.iter().enumerate() {
            archive.push(format!("optimizer.second.{i}"), vec![v.len()], v);
        }
    }

    pub fn read_arrays(config: OptimizerConfig, steps: u64, shapes: &[usize], archive: &mut Archive) -> Result<Self> {
        let mut opt = Optimizer::new(config, shapes);
        opt.steps = steps;
        for (i, m) in opt.first.iter_mut().enumerate() {
            *m = archive.take(&format!("optimizer.first.{i}"), &[m.len()])?;
        }
        for (i, v) in opt.second.iter_mut().enumerate() {
            *v = archive.take(&format!("optimizer.second.{i}"), &[v.len()])?;
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_momentum_on_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1), &[2]);
        for _ in 0..400 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(vec![&mut x], vec![&g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-6), "{x:?}");
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut x = vec![1.0, 1.0];
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.01), &[2]);
        opt.step(vec![&mut x], vec![&[5.0, -0.001]]);
        assert!((x[0] - 0.99).abs() < 1e-6 && (x[1] - 1.01).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn clipping_scales_gradient() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::Sgd, 1.0);
        cfg.momentum = 0.0;
        cfg.grad_clip = Some(1.0);
        let mut x = vec![0.0, 0.0];
        Optimizer::new(cfg, &[2]).step(vec![&mut x], vec![&[3.0, 4.0]]);
        assert!((x[0] + 0.6).abs() < 1e-12 && (x[1] + 0.8).abs() < 1e-12);
    }
}
