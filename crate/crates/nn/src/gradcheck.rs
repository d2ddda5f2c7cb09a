//! Central finite-difference checks of analytic gradients.
//!
//! Only forward passes are used to build the numeric side, so the check is
//! independent of every backward implementation it verifies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::Loss;
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|)`, with differences below `1e-10` absolute
/// treated as exact.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-10 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

fn loss_at(net: &mut Network, x: &Tensor, target: &Tensor, loss: Loss, seed: u64) -> Result<f64> {
    // Fresh generator per pass: dropout masks and noise replay exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = net.forward(x, true, &mut rng)?;
    Ok(loss.eval(&y, target)?.0)
}

fn nudge(net: &mut Network, tensor: usize, index: usize, delta: f64) {
    let mut slot = 0;
    net.visit_params(&mut |p, _| {
        if slot == tensor {
            p[index] += delta;
        }
        slot += 1;
    });
}

/// Compares every parameter gradient (or at most `max_per_tensor` evenly
/// spaced entries per tensor) against central differences with step `h`.
pub fn check_parameters(
    net: &mut Network,
    x: &Tensor,
    target: &Tensor,
    loss: Loss,
    seed: u64,
    h: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, analytic) = net.gradients(x, target, loss, &mut rng)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let stride = match max_per_tensor {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        for idx in (0..len).step_by(stride) {
            nudge(net, ti, idx, h);
            let up = loss_at(net, x, target, loss, seed)?;
            nudge(net, ti, idx, -2.0 * h);
            let down = loss_at(net, x, target, loss, seed)?;
            nudge(net, ti, idx, h);
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad.data()[idx], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Checks the gradient with respect to the network input.
pub fn check_input(net: &mut Network, x: &Tensor, target: &Tensor, loss: Loss, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.zero_grads();
    let y = net.forward(x, true, &mut rng)?;
    let (_, dy) = loss.eval(&y, target)?;
    let dx = net.backward(&dy)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss_at(net, &probe, target, loss, seed)?;
        probe.data_mut()[i] = orig - h;
        let down = loss_at(net, &probe, target, loss, seed)?;
        probe.data_mut()[i] = orig;
        let err = relative_error(dx.data()[i], (up - down) / (2.0 * h));
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks `Loss::eval`'s gradient against central differences.
pub fn check_loss(loss: Loss, prediction: &Tensor, target: &Tensor, h: f64) -> Result<GradCheckReport> {
    let (_, grad) = loss.eval(prediction, target)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut p = prediction.clone();
    for i in 0..p.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + h;
        let up = loss.eval(&p, target)?.0;
        p.data_mut()[i] = orig - h;
        let down = loss.eval(&p, target)?.0;
        p.data_mut()[i] = orig;
        let err = relative_error(grad.data()[i], (up - down) / (2.0 * h));
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
