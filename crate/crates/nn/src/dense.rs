use rand::Rng;

use crate::error::{shape_err, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// `y = x·W + b` for a batch `x` of shape `(batch, in)`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (inp, out) = match weight.shape() {
        [i, o] => (*i, *o),
        s => return Err(shape_err("dense weight", &[0, 0], s)),
    };
    if x.rank() != 2 || x.shape()[1] != inp {
        return Err(shape_err("dense input", &[x.batch(), inp], x.shape()));
    }
    if bias.shape() != [out] {
        return Err(shape_err("dense bias", &[out], bias.shape()));
    }
    let n = x.batch();
    let mut y = vec![0.0; n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, inp, out, x.data(), false, weight.data(), false, 1.0, &mut y);
    Tensor::from_vec(&[n, out], y)
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub(crate) grad_weight: Tensor,
    pub(crate) grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * units)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self::from_params(
            Tensor::from_vec(&[inputs, units], w).expect("shape"),
            Tensor::zeros(&[units]),
        )
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Self {
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = dense_forward(x, &self.weight, &self.bias)?;
        self.input = train.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| shape_err("dense backward before forward", &[1], &[0]))?;
        let (n, inp, out) = (x.batch(), self.inputs(), self.units());
        if dy.shape() != [n, out] {
            return Err(shape_err("dense grad", &[n, out], dy.shape()));
        }
        gemm(inp, n, out, x.data(), true, dy.data(), false, 1.0, self.grad_weight.data_mut());
        let gb = self.grad_bias.data_mut();
        for row in dy.data().chunks(out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * inp];
        gemm(n, out, inp, dy.data(), false, self.weight.data(), true, 0.0, &mut dx);
        Tensor::from_vec(&[n, inp], dx)
    }
}
