use std::fmt;
use std::str::FromStr;

use crate::error::NnError;
use crate::tensor::Tensor;

/// Elementwise nonlinearities compared in the activation ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Softsign,
    Relu,
    Elu,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Linear,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softsign,
        Activation::Relu,
        Activation::Elu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softsign => "softsign",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        }
    }

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softsign => x / (1.0 + x.abs()),
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation input `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        x.map(|v| self.eval(v))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::Unknown {
                what: "activation",
                name: s.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_limits_and_fixed_points() {
        assert_eq!(Activation::Elu.eval(0.0), 0.0);
        assert_eq!(Activation::Elu.eval(1.0), 1.0);
        assert!((Activation::Elu.eval(-50.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn softsign_unit_inputs() {
        assert_eq!(Activation::Softsign.eval(1.0), 0.5);
        assert_eq!(Activation::Softsign.eval(-1.0), -0.5);
    }

    #[test]
    fn relu_matches_max_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            assert_eq!(Activation::Relu.eval(x), if x > 0.0 { x } else { 0.0 });
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("swish".parse::<Activation>().is_err());
        assert_eq!("ELU".parse::<Activation>().unwrap(), Activation::Elu);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in Activation::ALL {
            for &x in &[-2.3, -0.7, 0.4, 1.9] {
                let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-7, "{act} at {x}");
            }
        }
    }
}
