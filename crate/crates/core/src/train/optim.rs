use serde::{Deserialize, Serialize};

use crate::embedding::SparseGrad;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("optimizer lr must be positive, got {}", self.lr)));
        }
        if self.kind == OptimizerKind::Adam {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
                return Err(Error::Config(format!(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0, got {self:?}"
                )));
            }
        }
        Ok(())
    }
}

/// SGD or lazy Adam over a row-major parameter matrix. Adam keeps dense
/// moment buffers but only touches rows present in each sparse gradient;
/// bias correction uses the global step count.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, num_params: usize) -> Result<Self> {
        cfg.validate()?;
        let buf = if cfg.kind == OptimizerKind::Adam { num_params } else { 0 };
        Ok(Self {
            cfg,
            step: 0,
            m: vec![0.0; buf],
            v: vec![0.0; buf],
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to the rows of `params` (width `width`) named in
    /// `grad`. Every gradient row is checked for finiteness before any
    /// parameter changes.
    pub fn step(&mut self, params: &mut [f64], width: usize, grad: &SparseGrad) -> Result<()> {
        for (row, g) in grad.iter() {
            if g.len() != width || (row + 1) * width > params.len() {
                return Err(Error::invalid(format!(
                    "gradient row {row} of width {} does not fit parameters of width {width}",
                    g.len()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter row {row}, column {j} is {}",
                    g[j]
                )));
            }
        }
        self.step += 1;
        let lr = self.cfg.lr;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (row, g) in grad.iter() {
                    let p = &mut params[row * width..(row + 1) * width];
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::invalid(format!(
                        "adam state sized for {} parameters, got {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (row, g) in grad.iter() {
                    for (j, &g) in g.iter().enumerate() {
                        let k = row * width + j;
                        self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                        self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                        let m_hat = self.m[k] / c1;
                        let v_hat = self.v[k] / c2;
                        params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
