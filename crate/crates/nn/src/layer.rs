use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::activation::Activation;
use crate::conv::{Conv1d, Conv2d};
use crate::dense::Dense;
use crate::error::{shape_err, NnError, Result};
use crate::pool::{MaxPool, PoolDims};
use crate::recurrent::{BiLstm, Lstm};
use crate::regularize::{Regularizer, RegularizerLayer};
use crate::tensor::Tensor;

/// Declarative description of one layer. Shapes exclude the batch axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, units: usize },
    Conv2d { kernel: usize, inputs: usize, filters: usize },
    MaxPool2d { size: usize },
    Conv1d { kernel: usize, inputs: usize, filters: usize },
    MaxPool1d { size: usize },
    Lstm { inputs: usize, hidden: usize, return_sequences: bool },
    BiLstm { inputs: usize, hidden: usize, return_sequences: bool },
    Activation(Activation),
    Dropout { rate: f64 },
    GaussianNoise { std: f64 },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GaussianNoise { .. } => "gaussian_noise",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape for a single example of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |want: &[usize]| Err(shape_err(self.kind(), want, input));
        match *self {
            LayerSpec::Dense { inputs, units } => match input {
                [i] if *i == inputs => Ok(vec![units]),
                _ => bad(&[inputs]),
            },
            LayerSpec::Conv2d { inputs, filters, .. } => match input {
                [h, w, c] if *c == inputs => Ok(vec![*h, *w, filters]),
                _ => bad(&[0, 0, inputs]),
            },
            LayerSpec::MaxPool2d { size } => match input {
                [h, w, c] if *h >= size && *w >= size && size > 0 => Ok(vec![h / size, w / size, *c]),
                _ => bad(&[size, size, 0]),
            },
            LayerSpec::Conv1d { inputs, filters, .. } => match input {
                [t, c] if *c == inputs => Ok(vec![*t, filters]),
                _ => bad(&[0, inputs]),
            },
            LayerSpec::MaxPool1d { size } => match input {
                [t, c] if *t >= size && size > 0 => Ok(vec![t / size, *c]),
                _ => bad(&[size, 0]),
            },
            LayerSpec::Lstm { inputs, hidden, return_sequences } => match input {
                [t, d] if *d == inputs => Ok(if return_sequences { vec![*t, hidden] } else { vec![hidden] }),
                _ => bad(&[0, inputs]),
            },
            LayerSpec::BiLstm { inputs, hidden, return_sequences } => match input {
                [t, d] if *d == inputs => Ok(if return_sequences {
                    vec![*t, 2 * hidden]
                } else {
                    vec![2 * hidden]
                }),
                _ => bad(&[0, inputs]),
            },
            LayerSpec::Activation(_) | LayerSpec::Dropout { .. } | LayerSpec::GaussianNoise { .. } => {
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { inputs, units } => write!(f, "dense inputs={inputs} units={units}"),
            LayerSpec::Conv2d { kernel, inputs, filters } => {
                write!(f, "conv2d kernel={kernel} inputs={inputs} filters={filters}")
            }
            LayerSpec::MaxPool2d { size } => write!(f, "maxpool2d size={size}"),
            LayerSpec::Conv1d { kernel, inputs, filters } => {
                write!(f, "conv1d kernel={kernel} inputs={inputs} filters={filters}")
            }
            LayerSpec::MaxPool1d { size } => write!(f, "maxpool1d size={size}"),
            LayerSpec::Lstm { inputs, hidden, return_sequences } => {
                write!(f, "lstm inputs={inputs} hidden={hidden} sequences={return_sequences}")
            }
            LayerSpec::BiLstm { inputs, hidden, return_sequences } => {
                write!(f, "bilstm inputs={inputs} hidden={hidden} sequences={return_sequences}")
            }
            LayerSpec::Activation(a) => write!(f, "activation fn={a}"),
            // {:?} keeps enough digits to round-trip exactly
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate:?}"),
            LayerSpec::GaussianNoise { std } => write!(f, "gaussian_noise std={std:?}"),
            LayerSpec::Flatten => write!(f, "flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(|| NnError::Format("empty layer description".into()))?;
        let kv: Vec<(&str, &str)> = parts
            .map(|p| p.split_once('=').ok_or_else(|| NnError::Format(format!("bad field `{p}`"))))
            .collect::<Result<_>>()?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| NnError::Format(format!("{kind}: missing `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| NnError::Format(format!("{kind}: bad `{key}`")))
        };
        let float = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| NnError::Format(format!("{kind}: bad `{key}`")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?.parse().map_err(|_| NnError::Format(format!("{kind}: bad `{key}`")))
        };
        Ok(match kind {
            "dense" => LayerSpec::Dense { inputs: num("inputs")?, units: num("units")? },
            "conv2d" => LayerSpec::Conv2d { kernel: num("kernel")?, inputs: num("inputs")?, filters: num("filters")? },
            "maxpool2d" => LayerSpec::MaxPool2d { size: num("size")? },
            "conv1d" => LayerSpec::Conv1d { kernel: num("kernel")?, inputs: num("inputs")?, filters: num("filters")? },
            "maxpool1d" => LayerSpec::MaxPool1d { size: num("size")? },
            "lstm" => LayerSpec::Lstm { inputs: num("inputs")?, hidden: num("hidden")?, return_sequences: flag("sequences")? },
            "bilstm" => LayerSpec::BiLstm { inputs: num("inputs")?, hidden: num("hidden")?, return_sequences: flag("sequences")? },
            "activation" => LayerSpec::Activation(get("fn")?.parse()?),
            "dropout" => LayerSpec::Dropout { rate: float("rate")? },
            "gaussian_noise" => LayerSpec::GaussianNoise { std: float("std")? },
            "flatten" => LayerSpec::Flatten,
            other => return Err(NnError::Unknown { what: "layer kind", name: other.to_string() }),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Conv1d(Conv1d),
    Pool(MaxPool),
    Lstm(Lstm),
    BiLstm(BiLstm),
    Activation { kind: Activation, input: Option<Tensor> },
    Regularizer(RegularizerLayer),
    Flatten { input_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn build(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(match spec {
            LayerSpec::Dense { inputs, units } => Layer::Dense(Dense::new(inputs, units, rng)),
            LayerSpec::Conv2d { kernel, inputs, filters } => Layer::Conv2d(Conv2d::new(kernel, inputs, filters, rng)),
            LayerSpec::Conv1d { kernel, inputs, filters } => Layer::Conv1d(Conv1d::new(kernel, inputs, filters, rng)),
            LayerSpec::MaxPool2d { size } => Layer::Pool(MaxPool::new(size, PoolDims::Two)),
            LayerSpec::MaxPool1d { size } => Layer::Pool(MaxPool::new(size, PoolDims::One)),
            LayerSpec::Lstm { inputs, hidden, return_sequences } => {
                Layer::Lstm(Lstm::new(inputs, hidden, return_sequences, rng))
            }
            LayerSpec::BiLstm { inputs, hidden, return_sequences } => {
                Layer::BiLstm(BiLstm::new(inputs, hidden, return_sequences, rng))
            }
            LayerSpec::Activation(kind) => Layer::Activation { kind, input: None },
            LayerSpec::Dropout { rate } => Layer::Regularizer(RegularizerLayer::new(Regularizer::Dropout { rate })?),
            LayerSpec::GaussianNoise { std } => {
                Layer::Regularizer(RegularizerLayer::new(Regularizer::GaussianNoise { std })?)
            }
            LayerSpec::Flatten => Layer::Flatten { input_shape: None },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs(), units: d.units() },
            Layer::Conv2d(c) => LayerSpec::Conv2d { kernel: c.kernel_size(), inputs: c.inputs(), filters: c.filters() },
            Layer::Conv1d(c) => LayerSpec::Conv1d { kernel: c.kernel_size(), inputs: c.inputs(), filters: c.filters() },
            Layer::Pool(p) => match p.dims {
                PoolDims::One => LayerSpec::MaxPool1d { size: p.size },
                PoolDims::Two => LayerSpec::MaxPool2d { size: p.size },
            },
            Layer::Lstm(l) => LayerSpec::Lstm { inputs: l.inputs(), hidden: l.hidden(), return_sequences: l.return_sequences },
            Layer::BiLstm(l) => LayerSpec::BiLstm {
                inputs: l.inputs(),
                hidden: l.hidden(),
                return_sequences: l.return_sequences(),
            },
            Layer::Activation { kind, .. } => LayerSpec::Activation(*kind),
            Layer::Regularizer(r) => match r.kind {
                Regularizer::Dropout { rate } => LayerSpec::Dropout { rate },
                Regularizer::GaussianNoise { std } => LayerSpec::GaussianNoise { std },
            },
            Layer::Flatten { .. } => LayerSpec::Flatten,
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self, Layer::Lstm(_) | Layer::BiLstm(_))
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut impl Rng) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x, train),
            Layer::Conv2d(l) => l.forward(x, train),
            Layer::Conv1d(l) => l.forward(x, train),
            Layer::Pool(l) => l.forward(x, train),
            Layer::Lstm(l) => l.forward(x, train),
            Layer::BiLstm(l) => l.forward(x, train),
            Layer::Activation { kind, input } => {
                *input = train.then(|| x.clone());
                Ok(kind.apply(x))
            }
            Layer::Regularizer(l) => l.forward(x, train, rng),
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                let n = x.batch();
                let r = x.row_len();
                x.clone().reshape(&[n, r])
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(dy),
            Layer::Conv2d(l) => l.backward(dy),
            Layer::Conv1d(l) => l.backward(dy),
            Layer::Pool(l) => l.backward(dy),
            Layer::Lstm(l) => l.backward(dy),
            Layer::BiLstm(l) => l.backward(dy),
            Layer::Activation { kind, input } => {
                let x = input
                    .as_ref()
                    .ok_or_else(|| shape_err("activation backward before forward", &[1], &[0]))?;
                if x.shape() != dy.shape() {
                    return Err(shape_err("activation grad", x.shape(), dy.shape()));
                }
                let k = *kind;
                let data = x.data().iter().zip(dy.data()).map(|(&xi, &g)| g * k.derivative(xi)).collect();
                Tensor::from_vec(x.shape(), data)
            }
            Layer::Regularizer(l) => l.backward(dy),
            Layer::Flatten { input_shape } => {
                let s = input_shape
                    .as_ref()
                    .ok_or_else(|| shape_err("flatten backward before forward", &[1], &[0]))?;
                dy.clone().reshape(s)
            }
        }
    }

    /// Visits `(parameter, gradient)` pairs in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        fn lstm(l: &mut Lstm, f: &mut dyn FnMut(&mut [f64], &[f64])) {
            f(l.w_input.data_mut(), l.grad_input.data());
            f(l.w_recurrent.data_mut(), l.grad_recurrent.data());
            f(l.bias.data_mut(), l.grad_bias.data());
        }
        match self {
            Layer::Dense(l) => {
                f(l.weight.data_mut(), l.grad_weight.data());
                f(l.bias.data_mut(), l.grad_bias.data());
            }
            Layer::Conv2d(l) => {
                f(l.kernels.data_mut(), l.grad_kernels.data());
                f(l.bias.data_mut(), l.grad_bias.data());
            }
            Layer::Conv1d(l) => {
                f(l.kernels.data_mut(), l.grad_kernels.data());
                f(l.bias.data_mut(), l.grad_bias.data());
            }
            Layer::Lstm(l) => lstm(l, f),
            Layer::BiLstm(l) => {
                lstm(&mut l.forward_cell, f);
                lstm(&mut l.backward_cell, f);
            }
            _ => {}
        }
    }

    /// Parameter tensors in the same order as [`Layer::visit_params`].
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(l) => vec![&l.kernels, &l.bias],
            Layer::Conv1d(l) => vec![&l.kernels, &l.bias],
            Layer::Lstm(l) => vec![&l.w_input, &l.w_recurrent, &l.bias],
            Layer::BiLstm(l) => vec![
                &l.forward_cell.w_input,
                &l.forward_cell.w_recurrent,
                &l.forward_cell.bias,
                &l.backward_cell.w_input,
                &l.backward_cell.w_recurrent,
                &l.backward_cell.bias,
            ],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.grad_weight, &l.grad_bias],
            Layer::Conv2d(l) => vec![&l.grad_kernels, &l.grad_bias],
            Layer::Conv1d(l) => vec![&l.grad_kernels, &l.grad_bias],
            Layer::Lstm(l) => vec![&l.grad_input, &l.grad_recurrent, &l.grad_bias],
            Layer::BiLstm(l) => vec![
                &l.forward_cell.grad_input,
                &l.forward_cell.grad_recurrent,
                &l.forward_cell.grad_bias,
                &l.backward_cell.grad_input,
                &l.backward_cell.grad_recurrent,
                &l.backward_cell.grad_bias,
            ],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        fn zero(t: &mut Tensor) {
            t.data_mut().fill(0.0);
        }
        fn zl(l: &mut Lstm) {
            zero(&mut l.grad_input);
            zero(&mut l.grad_recurrent);
            zero(&mut l.grad_bias);
        }
        match self {
            Layer::Dense(l) => {
                zero(&mut l.grad_weight);
                zero(&mut l.grad_bias);
            }
            Layer::Conv2d(l) => {
                zero(&mut l.grad_kernels);
                zero(&mut l.grad_bias);
            }
            Layer::Conv1d(l) => {
                zero(&mut l.grad_kernels);
                zero(&mut l.grad_bias);
            }
            Layer::Lstm(l) => zl(l),
            Layer::BiLstm(l) => {
                zl(&mut l.forward_cell);
                zl(&mut l.backward_cell);
            }
            _ => {}
        }
    }

    /// Replaces parameters from tensors in [`Layer::params`] order.
    pub fn set_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let expected: Vec<Vec<usize>> = self.params().iter().map(|t| t.shape().to_vec()).collect();
        if expected.len() != tensors.len() {
            return Err(NnError::Format(format!(
                "{} expects {} parameter tensors, got {}",
                self.spec().kind(),
                expected.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.iter().zip(&tensors) {
            if e.as_slice() != t.shape() {
                return Err(shape_err("parameter tensor", e, t.shape()));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        match self {
            Layer::Dense(l) => *l = Dense::from_params(next(), next()),
            Layer::Conv2d(l) => *l = Conv2d::from_params(next(), next()),
            Layer::Conv1d(l) => *l = Conv1d::from_params(next(), next()),
            Layer::Lstm(l) => *l = Lstm::from_params(next(), next(), next(), l.return_sequences),
            Layer::BiLstm(l) => {
                let seq = l.return_sequences();
                l.forward_cell = Lstm::from_params(next(), next(), next(), seq);
                l.backward_cell = Lstm::from_params(next(), next(), next(), seq);
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trips() {
        let specs = [
            LayerSpec::Dense { inputs: 20, units: 800 },
            LayerSpec::Conv2d { kernel: 3, inputs: 1, filters: 16 },
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Conv1d { kernel: 3, inputs: 384, filters: 16 },
            LayerSpec::MaxPool1d { size: 8 },
            LayerSpec::Lstm { inputs: 20, hidden: 32, return_sequences: false },
            LayerSpec::BiLstm { inputs: 16, hidden: 128, return_sequences: true },
            LayerSpec::Activation(Activation::Elu),
            LayerSpec::Dropout { rate: 0.1 },
            LayerSpec::GaussianNoise { std: 0.1 },
            LayerSpec::Flatten,
        ];
        for s in specs {
            assert_eq!(s.to_string().parse::<LayerSpec>().unwrap(), s);
        }
        assert!("attention heads=4".parse::<LayerSpec>().is_err());
    }
}
