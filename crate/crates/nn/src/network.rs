use std::fmt::Write as _;

use rand::{Rng, SeedableRng};

use crate::error::{NnError, Result};
use crate::layer::{Layer, LayerSpec};
use crate::loss::Loss;
use crate::tensor::Tensor;

/// A feed-forward stack of layers trained with reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn build(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::build(*s, rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Per-example output shape after every layer, starting with `input`.
    pub fn shape_chain(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut chain = vec![input.to_vec()];
        for (i, s) in specs.iter().enumerate() {
            let next = s.output_shape(chain.last().expect("non-empty")).map_err(|e| {
                NnError::Config(format!("layer {i} ({s}) rejects its input: {e}"))
            })?;
            chain.push(next);
        }
        Ok(chain)
    }

    pub fn summary(&self, input: &[usize]) -> Result<String> {
        let specs = self.specs();
        let chain = Self::shape_chain(&specs, input)?;
        let mut out = String::new();
        let _ = writeln!(out, "input {:?}", chain[0]);
        for (i, (layer, shape)) in self.layers.iter().zip(&chain[1..]).enumerate() {
            let params: usize = layer.params().iter().map(|t| t.len()).sum();
            let _ = writeln!(out, "{i:>3} {:<56} -> {:?} params={params}", layer.spec().to_string(), shape);
        }
        let _ = writeln!(out, "total params={}", self.param_count());
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|t| t.len()).sum()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut impl Rng) -> Result<Tensor> {
        let mut cur = x.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(&cur, train, rng)?;
            if !cur.is_finite() {
                return Err(NnError::NonFinite {
                    stage: "forward",
                    index,
                    layer: layer.spec().to_string(),
                });
            }
        }
        Ok(cur)
    }

    /// Inference-mode forward pass: regularizers are identities and no
    /// backward caches are kept.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut cur = x.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            if matches!(layer, Layer::Regularizer(_)) {
                continue;
            }
            cur = layer.forward(&cur, false, &mut unused)?;
            if !cur.is_finite() {
                return Err(NnError::NonFinite {
                    stage: "forward",
                    index,
                    layer: layer.spec().to_string(),
                });
            }
        }
        Ok(cur)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut cur = dy.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            cur = layer.backward(&cur)?;
            let grads_ok = layer.grads().iter().all(|g| g.is_finite());
            if !cur.is_finite() || !grads_ok {
                return Err(NnError::NonFinite {
                    stage: "backward",
                    index,
                    layer: layer.spec().to_string(),
                });
            }
        }
        Ok(cur)
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn grads(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| l.grads()).cloned().collect()
    }

    /// Rescales the gradients of recurrent layers so their joint L2 norm is
    /// at most `max_norm`. Returns the norm before clipping.
    pub fn clip_recurrent_grads(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .layers
            .iter()
            .filter(|l| l.is_recurrent())
            .flat_map(|l| l.grads())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for layer in self.layers.iter_mut().filter(|l| l.is_recurrent()) {
                scale_recurrent_grads(layer, scale);
            }
        }
        norm
    }

    /// Forward, loss and backward for one batch. Gradients are left in the
    /// layers (after zeroing) and also returned in parameter order.
    pub fn gradients(
        &mut self,
        x: &Tensor,
        target: &Tensor,
        loss: Loss,
        rng: &mut impl Rng,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.zero_grads();
        let y = self.forward(x, true, rng)?;
        let (value, dy) = loss.eval(&y, target)?;
        self.backward(&dy)?;
        Ok((value, self.grads()))
    }
}

fn scale_recurrent_grads(layer: &mut Layer, scale: f64) {
    use crate::recurrent::Lstm;
    fn s(l: &mut Lstm, k: f64) {
        for g in [&mut l.grad_input, &mut l.grad_recurrent, &mut l.grad_bias] {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    match layer {
        Layer::Lstm(l) => s(l, scale),
        Layer::BiLstm(l) => {
            s(&mut l.forward_cell, scale);
            s(&mut l.backward_cell, scale);
        }
        _ => {}
    }
}
