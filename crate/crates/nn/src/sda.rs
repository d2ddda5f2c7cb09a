//! Stacked denoising autoencoders: greedy layer-wise pretraining with
//! zero-masking corruption and tied-weight sigmoid reconstructions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::activation::{sigmoid, Activation};
use crate::dense::Dense;
use crate::error::{NnError, Result};
use crate::gemm::gemm;
use crate::layer::Layer;
use crate::loss::PROB_CLIP;
use crate::network::Network;
use crate::tensor::Tensor;
use crate::train::gather_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct SdaConfig {
    pub hidden: Vec<usize>,
    pub corruption: f64,
    pub pretrain_learning_rate: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub finetune_learning_rate: f64,
    pub finetune_epochs: usize,
    pub finetune_batch: usize,
}

impl Default for SdaConfig {
    fn default() -> Self {
        Self {
            hidden: vec![800, 500, 300],
            corruption: 0.3,
            pretrain_learning_rate: 0.5,
            pretrain_epochs: 150,
            pretrain_batch: 300,
            finetune_learning_rate: 0.1,
            finetune_epochs: 300,
            finetune_batch: 100,
        }
    }
}

/// One tied-weight denoising autoencoder.
#[derive(Debug, Clone)]
pub struct DenoisingAutoencoder {
    /// Encoder weights `(visible, hidden)`; the decoder uses the transpose.
    pub weight: Tensor,
    pub hidden_bias: Tensor,
    pub visible_bias: Tensor,
}

impl DenoisingAutoencoder {
    pub fn new(visible: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let limit = 4.0 * (6.0 / (visible + hidden) as f64).sqrt();
        let w = (0..visible * hidden).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            weight: Tensor::from_vec(&[visible, hidden], w).expect("shape"),
            hidden_bias: Tensor::zeros(&[hidden]),
            visible_bias: Tensor::zeros(&[visible]),
        }
    }

    pub fn visible(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.weight.shape()[1]
    }

    fn affine(x: &[f64], n: usize, w: &[f64], k: usize, m: usize, trans: bool, bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for r in out.chunks_mut(m) {
            r.copy_from_slice(bias);
        }
        gemm(n, k, m, x, false, w, trans, 1.0, &mut out);
        out.iter_mut().for_each(|v| *v = sigmoid(*v));
        out
    }

    /// Sigmoid codes for a batch `(n, visible)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.batch();
        if x.row_len() != self.visible() {
            return Err(NnError::Shape {
                context: "autoencoder input",
                expected: vec![n, self.visible()],
                actual: x.shape().to_vec(),
            });
        }
        let h = Self::affine(x.data(), n, self.weight.data(), self.visible(), self.hidden(), false, self.hidden_bias.data());
        Tensor::from_vec(&[n, self.hidden()], h)
    }

    /// Mean (over the batch) summed cross-entropy between `x` and the
    /// reconstruction of its corrupted copy `noisy`.
    pub fn reconstruction_loss(&self, noisy: &Tensor, x: &Tensor) -> Result<f64> {
        let n = x.batch();
        let h = self.encode(noisy)?;
        let z = Self::affine(h.data(), n, self.weight.data(), self.hidden(), self.visible(), true, self.visible_bias.data());
        Ok(cross_entropy(&z, x.data()) / n as f64)
    }

    /// One SGD step on a minibatch; returns the loss before the update.
    pub fn sgd_step(&mut self, noisy: &Tensor, x: &Tensor, lr: f64) -> Result<f64> {
        let n = x.batch();
        let (v, hd) = (self.visible(), self.hidden());
        let h = self.encode(noisy)?;
        let z = Self::affine(h.data(), n, self.weight.data(), hd, v, true, self.visible_bias.data());
        let loss = cross_entropy(&z, x.data()) / n as f64;
        // Sigmoid + cross-entropy: d/d(pre-activation) = z - x.
        let dz: Vec<f64> = z.iter().zip(x.data()).map(|(a, b)| (a - b) / n as f64).collect();
        let mut dh = vec![0.0; n * hd];
        gemm(n, v, hd, &dz, false, self.weight.data(), false, 0.0, &mut dh);
        for (g, a) in dh.iter_mut().zip(h.data()) {
            *g *= a * (1.0 - a);
        }
        let mut dw = vec![0.0; v * hd];
        // Decoder path (W^T): dW += dz^T h ; encoder path: dW += noisy^T dh.
        gemm(v, n, hd, &dz, true, h.data(), false, 0.0, &mut dw);
        gemm(v, n, hd, noisy.data(), true, &dh, false, 1.0, &mut dw);
        for (w, g) in self.weight.data_mut().iter_mut().zip(&dw) {
            *w -= lr * g;
        }
        for j in 0..hd {
            let g: f64 = (0..n).map(|r| dh[r * hd + j]).sum();
            self.hidden_bias.data_mut()[j] -= lr * g;
        }
        for i in 0..v {
            let g: f64 = (0..n).map(|r| dz[r * v + i]).sum();
            self.visible_bias.data_mut()[i] -= lr * g;
        }
        Ok(loss)
    }
}

fn cross_entropy(z: &[f64], x: &[f64]) -> f64 {
    z.iter()
        .zip(x)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// Zero-masks each element with probability `level`.
pub fn corrupt(x: &Tensor, level: f64, rng: &mut impl Rng) -> Tensor {
    let mut out = x.clone();
    if level > 0.0 {
        for v in out.data_mut() {
            if rng.random::<f64>() < level {
                *v = 0.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub layers: Vec<DenoisingAutoencoder>,
    /// Mean minibatch reconstruction loss per epoch, one trace per layer.
    pub traces: Vec<Vec<f64>>,
}

/// Greedy layer-wise pretraining on `data` `(n, d)` with values in `[0, 1]`.
pub fn sda_pretrain(cfg: &SdaConfig, data: &Tensor, rng: &mut impl Rng) -> Result<PretrainResult> {
    if data.batch() == 0 || data.is_empty() {
        return Err(NnError::Config("pretraining needs at least one example".into()));
    }
    if data.rank() != 2 {
        return Err(NnError::Shape {
            context: "pretraining data",
            expected: vec![data.batch(), data.row_len()],
            actual: data.shape().to_vec(),
        });
    }
    if data.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(NnError::Config("reconstruction targets must lie in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&cfg.corruption) {
        return Err(NnError::Config(format!("corruption must be in [0, 1), got {}", cfg.corruption)));
    }
    let mut input = data.clone();
    let mut layers = Vec::new();
    let mut traces = Vec::new();
    let n = data.batch();
    let mut order: Vec<usize> = (0..n).collect();
    for &hidden in &cfg.hidden {
        let mut da = DenoisingAutoencoder::new(input.row_len(), hidden, rng);
        let mut trace = Vec::with_capacity(cfg.pretrain_epochs);
        for _ in 0..cfg.pretrain_epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.pretrain_batch.max(1)) {
                let xb = gather_rows(&input, chunk)?;
                let noisy = corrupt(&xb, cfg.corruption, rng);
                total += da.sgd_step(&noisy, &xb, cfg.pretrain_learning_rate)?;
                batches += 1;
            }
            trace.push(total / batches as f64);
        }
        input = da.encode(&input)?;
        layers.push(da);
        traces.push(trace);
    }
    Ok(PretrainResult { layers, traces })
}

/// Encoder stack with a logistic output layer of `outputs` sigmoid units.
pub fn assemble_classifier(layers: &[DenoisingAutoencoder], outputs: usize) -> Result<Network> {
    let mut net = Vec::new();
    for da in layers {
        net.push(Layer::Dense(Dense::from_params(da.weight.clone(), da.hidden_bias.clone())));
        net.push(Layer::Activation {
            kind: Activation::Sigmoid,
            input: None,
        });
    }
    let last = layers
        .last()
        .map(|d| d.hidden())
        .ok_or_else(|| NnError::Config("no pretrained layers".into()))?;
    // Logistic regression layer starts at zero.
    net.push(Layer::Dense(Dense::from_params(Tensor::zeros(&[last, outputs]), Tensor::zeros(&[outputs]))));
    net.push(Layer::Activation {
        kind: Activation::Sigmoid,
        input: None,
    });
    Ok(Network::from_layers(net))
}
