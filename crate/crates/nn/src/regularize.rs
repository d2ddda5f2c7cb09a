use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Dropout { rate: f64 },
    GaussianNoise { std: f64 },
}

impl Regularizer {
    pub fn validate(self) -> Result<Self> {
        match self {
            Regularizer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")))
            }
            Regularizer::GaussianNoise { std } if !(std >= 0.0) => {
                Err(NnError::Config(format!("noise std must be >= 0, got {std}")))
            }
            r => Ok(r),
        }
    }
}

/// Applies dropout or additive Gaussian noise. Identity outside training.
pub fn regularize(kind: Regularizer, x: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
    let mut layer = RegularizerLayer::new(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layer.forward(x, training, &mut rng)
}

#[derive(Debug, Clone)]
pub struct RegularizerLayer {
    pub kind: Regularizer,
    /// Dropout: per-element multiplier (0 or 1/(1-rate)). Noise: unused.
    mask: Option<Vec<f64>>,
}

impl RegularizerLayer {
    pub fn new(kind: Regularizer) -> Result<Self> {
        Ok(Self {
            kind: kind.validate()?,
            mask: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor, training: bool, rng: &mut impl Rng) -> Result<Tensor> {
        self.mask = None;
        if !training {
            return Ok(x.clone());
        }
        match self.kind {
            Regularizer::Dropout { rate } => {
                if rate == 0.0 {
                    return Ok(x.clone());
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let mut y = x.clone();
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                self.mask = Some(mask);
                Ok(y)
            }
            Regularizer::GaussianNoise { std } => {
                let mut y = x.clone();
                if std > 0.0 {
                    for v in y.data_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v += std * z;
                    }
                }
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut dx = dy.clone();
        if let Some(mask) = &self.mask {
            for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        Ok(dx)
    }
}
