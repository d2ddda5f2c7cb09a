//! First-order update rules compared in the optimizer ablation.

use std::fmt;
use std::str::FromStr;

use crate::error::{NnError, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adagrad,
    Adadelta,
    Adam,
    Adamax,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::Rmsprop,
        OptimizerKind::Adagrad,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
        OptimizerKind::Adamax,
        OptimizerKind::Nadam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamax => "adamax",
            OptimizerKind::Nadam => "nadam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::Unknown {
                what: "optimizer",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Inverse-time learning-rate decay: `lr / (1 + decay * t)`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Averaging constant for RMSprop and Adadelta.
    pub rho: f64,
}

impl OptimizerConfig {
    /// Conventional defaults per rule; Adam uses `α = 0.0005`.
    pub fn defaults(kind: OptimizerKind) -> Self {
        let learning_rate = match kind {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::Rmsprop => 0.001,
            OptimizerKind::Adagrad => 0.01,
            OptimizerKind::Adadelta => 1.0,
            OptimizerKind::Adam => 0.0005,
            OptimizerKind::Adamax | OptimizerKind::Nadam => 0.002,
        };
        let rho = match kind {
            OptimizerKind::Adadelta => 0.95,
            _ => 0.9,
        };
        let epsilon = match kind {
            OptimizerKind::Adadelta => 1e-6,
            _ => 1e-8,
        };
        Self {
            kind,
            learning_rate,
            decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
            rho,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("learning_rate", self.learning_rate),
            ("decay", self.decay),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
            ("rho", self.rho),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(NnError::Config(format!("optimizer {name} must be a non-negative number, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            if v >= 1.0 {
                return Err(NnError::Config(format!("optimizer {name} must be < 1, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer state: per-parameter accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: 0,
            slots: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate / (1.0 + self.config.decay * self.steps as f64)
    }

    /// Applies one update to each `(params[i], grads[i])` pair.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NnError::Config(format!(
                "optimizer got {} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_learning_rate();
        self.steps += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(NnError::Config(format!("parameter {i}: {} values but {} gradients", p.len(), g.len())));
            }
            self.update(i, p, g, lr);
        }
        Ok(())
    }

    /// Updates every parameter of `net` from the gradients it holds.
    pub fn step_network(&mut self, net: &mut Network) {
        let lr = self.current_learning_rate();
        self.steps += 1;
        let mut slot = 0;
        net.visit_params(&mut |p, g| {
            self.update(slot, p, g, lr);
            slot += 1;
        });
    }

    fn update(&mut self, slot: usize, p: &mut [f64], g: &[f64], lr: f64) {
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, Slot::default);
        }
        let c = self.config;
        let t = self.steps as i32;
        let s = &mut self.slots[slot];
        if s.first.len() != p.len() {
            s.first = vec![0.0; p.len()];
            s.second = vec![0.0; p.len()];
        }
        let (m, v) = (&mut s.first, &mut s.second);
        match c.kind {
            OptimizerKind::Sgd => {
                for (w, &gi) in p.iter_mut().zip(g) {
                    *w -= lr * gi;
                }
            }
            OptimizerKind::Rmsprop => {
                for i in 0..p.len() {
                    v[i] = c.rho * v[i] + (1.0 - c.rho) * g[i] * g[i];
                    p[i] -= lr * g[i] / (v[i].sqrt() + c.epsilon);
                }
            }
            OptimizerKind::Adagrad => {
                for i in 0..p.len() {
                    v[i] += g[i] * g[i];
                    p[i] -= lr * g[i] / (v[i].sqrt() + c.epsilon);
                }
            }
            OptimizerKind::Adadelta => {
                for i in 0..p.len() {
                    v[i] = c.rho * v[i] + (1.0 - c.rho) * g[i] * g[i];
                    let delta = (m[i] + c.epsilon).sqrt() / (v[i] + c.epsilon).sqrt() * g[i];
                    m[i] = c.rho * m[i] + (1.0 - c.rho) * delta * delta;
                    p[i] -= lr * delta;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for i in 0..p.len() {
                    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.epsilon);
                }
            }
            OptimizerKind::Adamax => {
                let bc1 = 1.0 - c.beta1.powi(t);
                for i in 0..p.len() {
                    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                    v[i] = (c.beta2 * v[i]).max(g[i].abs());
                    p[i] -= lr / bc1 * m[i] / (v[i] + c.epsilon);
                }
            }
            OptimizerKind::Nadam => {
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc1_next = 1.0 - c.beta1.powi(t + 1);
                let bc2 = 1.0 - c.beta2.powi(t);
                for i in 0..p.len() {
                    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                    let m_hat = c.beta1 * m[i] / bc1_next + (1.0 - c.beta1) * g[i] / bc1;
                    p[i] -= lr * m_hat / ((v[i] / bc2).sqrt() + c.epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(kind: OptimizerKind, lr: f64, theta: f64, g: f64) -> f64 {
        let mut opt = Optimizer::new(OptimizerConfig::defaults(kind).with_learning_rate(lr).with_decay(0.0)).unwrap();
        let mut p = [theta];
        opt.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
        p[0]
    }

    #[test]
    fn sgd_hand_step() {
        assert!((one_step(OptimizerKind::Sgd, 0.1, 0.0, 1.0) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let theta = one_step(OptimizerKind::Adam, 0.0005, 0.0, 1.0);
        // m̂ = g, v̂ = g², so the step is α·g/(|g| + ε).
        assert!((theta + 0.0005 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for kind in OptimizerKind::ALL {
            let mut opt = Optimizer::new(OptimizerConfig::defaults(kind)).unwrap();
            let mut p = [1.5, -2.0];
            for _ in 0..5 {
                opt.step(&mut [&mut p[..]], &[&[0.0, 0.0][..]]).unwrap();
            }
            assert_eq!(p, [1.5, -2.0], "{kind}");
            assert_eq!(opt.steps(), 5);
        }
    }

    #[test]
    fn negative_hyperparameters_are_rejected() {
        let cfg = OptimizerConfig::defaults(OptimizerKind::Adam).with_learning_rate(-1.0);
        assert!(Optimizer::new(cfg).is_err());
        assert!("lion".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn decay_shrinks_learning_rate() {
        let mut opt = Optimizer::new(OptimizerConfig::defaults(OptimizerKind::Sgd).with_decay(0.5)).unwrap();
        let mut p = [0.0];
        opt.step(&mut [&mut p[..]], &[&[1.0][..]]).unwrap();
        assert!((opt.current_learning_rate() - 0.01 / 1.5).abs() < 1e-15);
    }
}
