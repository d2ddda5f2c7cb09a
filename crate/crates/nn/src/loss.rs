use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Elementwise binary cross-entropy on probabilities.
    CrossEntropy,
    MeanSquared,
}

impl Loss {
    /// Loss summed over output units and averaged over the batch, plus its
    /// gradient with respect to `prediction`.
    pub fn eval(self, prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        if prediction.shape() != target.shape() {
            return Err(shape_err("loss", prediction.shape(), target.shape()));
        }
        let n = prediction.batch().max(1) as f64;
        let mut grad = Tensor::zeros(prediction.shape());
        let mut total = 0.0;
        match self {
            Loss::CrossEntropy => {
                for ((g, &p), &t) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
                    let clipped = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    total -= t * clipped.ln() + (1.0 - t) * (1.0 - clipped).ln();
                    *g = if p == clipped {
                        (-t / clipped + (1.0 - t) / (1.0 - clipped)) / n
                    } else {
                        0.0
                    };
                }
            }
            Loss::MeanSquared => {
                for ((g, &p), &t) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
                    let d = p - t;
                    total += d * d;
                    *g = 2.0 * d / n;
                }
            }
        }
        Ok((total / n, grad))
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "cross_entropy",
            Loss::MeanSquared => "mse",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(Loss::CrossEntropy),
            "mse" => Ok(Loss::MeanSquared),
            _ => Err(NnError::Unknown {
                what: "loss",
                name: s.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let p = Tensor::from_vec(&[2, 2], vec![0.1, 0.7, -3.0, 2.0]).unwrap();
        let (l, g) = Loss::MeanSquared.eval(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_at_one_half() {
        let p = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        let t = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let (l, _) = Loss::CrossEntropy.eval(&p, &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        assert!(Loss::MeanSquared.eval(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[2, 1])).is_err());
    }
}
