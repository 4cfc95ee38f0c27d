// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

/// Stochastic gradient descent with optional heavy-ball momentum.
///
/// Momentum mode updates `v ← μ·v + g; p ← p − lr·v`. Plain SGD is the
/// `μ = 0` case. Velocity buffers are created on the first step and their
/// shapes are checked on every later step.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return config_err(format!(
                "learning rate must be positive, got {learning_rate}"
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return config_err(format!("momentum must lie in [0, 1), got {momentum}"));
        }
        if kind == OptimizerKind::Sgd && momentum != 0.0 {
            return config_err("plain sgd takes momentum 0");
        }
        Ok(Self {
            kind,
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, 0.0)
    }

    pub fn momentum(learning_rate: f64, momentum: f64) -> Result<Self> {
        Self::new(OptimizerKind::SgdMomentum, learning_rate, momentum)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Matrix] {
        &mut self.velocity
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return shape_err(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
        } else if self.velocity.len() != grads.len()
            || self
                .velocity
                .iter()
                .zip(grads)
                .any(|(v, g)| v.shape() != g.shape())
        {
            return shape_err("velocity buffers do not match parameter shapes");
        }
        let (mu, lr) = (self.momentum, self.learning_rate);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
