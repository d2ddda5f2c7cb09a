//! Minibatch training over batched tensors.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::loss::Loss;
use crate::network::Network;
use crate::optim::Optimizer;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    /// Max L2 norm of recurrent-layer gradients; `None` disables clipping.
    pub clip_recurrent: Option<f64>,
    pub shuffle: bool,
}

/// Gathers rows `idx` of a batched tensor into a new batch.
pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let r = x.row_len();
    let mut data = Vec::with_capacity(idx.len() * r);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, data)
}

/// Trains `net` on `(x, y)`; returns the mean minibatch loss per epoch.
pub fn fit(
    net: &mut Network,
    x: &Tensor,
    y: &Tensor,
    optimizer: &mut Optimizer,
    opts: FitOptions,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let n = x.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    let bs = opts.batch_size.max(1);
    for _ in 0..opts.epochs {
        if opts.shuffle {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let xb = gather_rows(x, chunk)?;
            let yb = gather_rows(y, chunk)?;
            let (loss, _) = net.gradients(&xb, &yb, opts.loss, rng)?;
            if let Some(max) = opts.clip_recurrent {
                net.clip_recurrent_grads(max);
            }
            optimizer.step_network(net);
            total += loss;
            batches += 1;
        }
        trace.push(total / batches.max(1) as f64);
    }
    Ok(trace)
}

/// Inference over a large batch in chunks of `chunk` rows.
pub fn predict_batched(net: &mut Network, x: &Tensor, chunk: usize) -> Result<Tensor> {
    let n = x.batch();
    if n == 0 {
        return Err(crate::error::NnError::Config("predict on an empty batch".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut parts = Vec::new();
    let mut out_shape = Vec::new();
    for c in idx.chunks(chunk.max(1)) {
        let y = net.predict(&gather_rows(x, c)?)?;
        out_shape = y.shape().to_vec();
        parts.extend_from_slice(y.data());
    }
    out_shape[0] = n;
    Tensor::from_vec(&out_shape, parts)
}
