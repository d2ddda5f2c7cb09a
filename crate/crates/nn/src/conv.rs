//! Same-padded, stride-1 convolutions (cross-correlation orientation).

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

fn uniform_kernel(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Patch matrix for a batch of `(H, W, C)` images: one row per output pixel,
/// columns ordered `(dy, dx, c)`.
fn im2col_2d(x: &[f64], n: usize, h: usize, w: usize, c: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let cols = k * k * c;
    let mut out = vec![0.0; n * h * w * cols];
    for b in 0..n {
        let img = &x[b * h * w * c..(b + 1) * h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let row = &mut out[((b * h + y) * w + xx) * cols..][..cols];
                for dy in 0..k {
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    for dx in 0..k {
                        let sx = xx + dx;
                        if sx < pad || sx - pad >= w {
                            continue;
                        }
                        let sx = sx - pad;
                        let src = &img[(sy * w + sx) * c..][..c];
                        row[(dy * k + dx) * c..][..c].copy_from_slice(src);
                    }
                }
            }
        }
    }
    out
}

fn col2im_2d(cols: &[f64], n: usize, h: usize, w: usize, c: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let width = k * k * c;
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        let img = &mut dx[b * h * w * c..(b + 1) * h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let row = &cols[((b * h + y) * w + xx) * width..][..width];
                for dy in 0..k {
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    for dxk in 0..k {
                        let sx = xx + dxk;
                        if sx < pad || sx - pad >= w {
                            continue;
                        }
                        let sx = sx - pad;
                        let dst = &mut img[(sy * w + sx) * c..][..c];
                        for (d, s) in dst.iter_mut().zip(&row[(dy * k + dxk) * c..][..c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(NnError::Config(format!(
            "same padding needs an odd kernel size, got {k}"
        )));
    }
    Ok(())
}

/// Zero-padded same-size 2-D convolution of a batch `(N, H, W, Cin)` with
/// kernels `(k, k, Cin, K)`.
pub fn conv2d_forward(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [k, k2, cin, kout] = match kernels.shape() {
        &[a, b, c, d] => [a, b, c, d],
        s => return Err(shape_err("conv2d kernel", &[3, 3, 0, 0], s)),
    };
    check_kernel(k)?;
    if k != k2 {
        return Err(shape_err("conv2d kernel", &[k, k, cin, kout], kernels.shape()));
    }
    let (n, h, w, c) = match x.shape() {
        &[n, h, w, c] => (n, h, w, c),
        s => return Err(shape_err("conv2d input", &[0, 0, 0, cin], s)),
    };
    if c != cin {
        return Err(shape_err("conv2d input channels", &[n, h, w, cin], x.shape()));
    }
    if bias.shape() != [kout] {
        return Err(shape_err("conv2d bias", &[kout], bias.shape()));
    }
    let cols = im2col_2d(x.data(), n, h, w, c, k);
    let rows = n * h * w;
    let mut y = vec![0.0; rows * kout];
    for r in y.chunks_mut(kout) {
        r.copy_from_slice(bias.data());
    }
    gemm(rows, k * k * c, kout, &cols, false, kernels.data(), false, 1.0, &mut y);
    Tensor::from_vec(&[n, h, w, kout], y)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub(crate) grad_kernels: Tensor,
    pub(crate) grad_bias: Tensor,
    cache: Option<(Vec<usize>, Vec<f64>)>,
}

impl Conv2d {
    pub fn new(kernel: usize, inputs: usize, filters: usize, rng: &mut impl Rng) -> Self {
        let kernels = uniform_kernel(&[kernel, kernel, inputs, filters], kernel * kernel * inputs, rng);
        Self::from_params(kernels, Tensor::zeros(&[filters]))
    }

    pub fn from_params(kernels: Tensor, bias: Tensor) -> Self {
        Self {
            grad_kernels: Tensor::zeros(kernels.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            kernels,
            bias,
            cache: None,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[3]
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = conv2d_forward(x, &self.kernels, &self.bias)?;
        if train {
            let s = x.shape();
            let cols = im2col_2d(x.data(), s[0], s[1], s[2], s[3], self.kernel_size());
            self.cache = Some((s.to_vec(), cols));
        } else {
            self.cache = None;
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, cols) = self
            .cache
            .as_ref()
            .ok_or_else(|| shape_err("conv2d backward before forward", &[1], &[0]))?;
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (k, kout) = (self.kernel_size(), self.filters());
        if dy.shape() != [n, h, w, kout] {
            return Err(shape_err("conv2d grad", &[n, h, w, kout], dy.shape()));
        }
        let rows = n * h * w;
        let width = k * k * c;
        gemm(width, rows, kout, cols, true, dy.data(), false, 1.0, self.grad_kernels.data_mut());
        let gb = self.grad_bias.data_mut();
        for r in dy.data().chunks(kout) {
            for (g, d) in gb.iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dcols = vec![0.0; rows * width];
        gemm(rows, kout, width, dy.data(), false, self.kernels.data(), true, 0.0, &mut dcols);
        Tensor::from_vec(shape, col2im_2d(&dcols, n, h, w, c, k))
    }
}

fn im2col_1d(x: &[f64], n: usize, t: usize, c: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let width = k * c;
    let mut out = vec![0.0; n * t * width];
    for b in 0..n {
        let seq = &x[b * t * c..(b + 1) * t * c];
        for step in 0..t {
            let row = &mut out[(b * t + step) * width..][..width];
            for d in 0..k {
                let s = step + d;
                if s < pad || s - pad >= t {
                    continue;
                }
                row[d * c..][..c].copy_from_slice(&seq[(s - pad) * c..][..c]);
            }
        }
    }
    out
}

fn col2im_1d(cols: &[f64], n: usize, t: usize, c: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let width = k * c;
    let mut dx = vec![0.0; n * t * c];
    for b in 0..n {
        for step in 0..t {
            let row = &cols[(b * t + step) * width..][..width];
            for d in 0..k {
                let s = step + d;
                if s < pad || s - pad >= t {
                    continue;
                }
                let dst = &mut dx[(b * t + s - pad) * c..][..c];
                for (a, v) in dst.iter_mut().zip(&row[d * c..][..c]) {
                    *a += v;
                }
            }
        }
    }
    dx
}

/// Same-padded 1-D convolution along time of `(N, T, Cin)` with kernels
/// `(k, Cin, K)`.
pub fn conv1d_forward(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (k, cin, kout) = match kernels.shape() {
        &[a, b, c] => (a, b, c),
        s => return Err(shape_err("conv1d kernel", &[3, 0, 0], s)),
    };
    check_kernel(k)?;
    let (n, t, c) = match x.shape() {
        &[n, t, c] => (n, t, c),
        s => return Err(shape_err("conv1d input", &[0, 0, cin], s)),
    };
    if c != cin {
        return Err(shape_err("conv1d input channels", &[n, t, cin], x.shape()));
    }
    if bias.shape() != [kout] {
        return Err(shape_err("conv1d bias", &[kout], bias.shape()));
    }
    let cols = im2col_1d(x.data(), n, t, c, k);
    let mut y = vec![0.0; n * t * kout];
    for r in y.chunks_mut(kout) {
        r.copy_from_slice(bias.data());
    }
    gemm(n * t, k * c, kout, &cols, false, kernels.data(), false, 1.0, &mut y);
    Tensor::from_vec(&[n, t, kout], y)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub(crate) grad_kernels: Tensor,
    pub(crate) grad_bias: Tensor,
    cache: Option<(Vec<usize>, Vec<f64>)>,
}

impl Conv1d {
    pub fn new(kernel: usize, inputs: usize, filters: usize, rng: &mut impl Rng) -> Self {
        let kernels = uniform_kernel(&[kernel, inputs, filters], kernel * inputs, rng);
        Self::from_params(kernels, Tensor::zeros(&[filters]))
    }

    pub fn from_params(kernels: Tensor, bias: Tensor) -> Self {
        Self {
            grad_kernels: Tensor::zeros(kernels.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            kernels,
            bias,
            cache: None,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = conv1d_forward(x, &self.kernels, &self.bias)?;
        if train {
            let s = x.shape();
            let cols = im2col_1d(x.data(), s[0], s[1], s[2], self.kernel_size());
            self.cache = Some((s.to_vec(), cols));
        } else {
            self.cache = None;
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, cols) = self
            .cache
            .as_ref()
            .ok_or_else(|| shape_err("conv1d backward before forward", &[1], &[0]))?;
        let (n, t, c) = (shape[0], shape[1], shape[2]);
        let (k, kout) = (self.kernel_size(), self.filters());
        if dy.shape() != [n, t, kout] {
            return Err(shape_err("conv1d grad", &[n, t, kout], dy.shape()));
        }
        let width = k * c;
        gemm(width, n * t, kout, cols, true, dy.data(), false, 1.0, self.grad_kernels.data_mut());
        let gb = self.grad_bias.data_mut();
        for r in dy.data().chunks(kout) {
            for (g, d) in gb.iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dcols = vec![0.0; n * t * width];
        gemm(n * t, kout, width, dy.data(), false, self.kernels.data(), true, 0.0, &mut dcols);
        Tensor::from_vec(shape, col2im_1d(&dcols, n, t, c, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delta_kernel_2d() -> Tensor {
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0;
        k
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..2 * 5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[2, 5, 4, 1], data).unwrap();
        let y = conv2d_forward(&x, &delta_kernel_2d(), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn ones_kernel_on_constant_input_shows_padding() {
        let c = 2.5;
        let x = Tensor::filled(&[1, 4, 5, 1], c);
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        let at = |r: usize, col: usize| y.data()[r * 5 + col];
        assert_eq!(at(0, 0), 4.0 * c);
        assert_eq!(at(3, 4), 4.0 * c);
        assert_eq!(at(0, 2), 6.0 * c);
        assert_eq!(at(1, 1), 9.0 * c);
        assert_eq!(at(2, 3), 9.0 * c);
    }

    #[test]
    fn frame_shape_of_first_recurrent_conv_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Conv2d::new(3, 1, 16, &mut rng);
        let y = layer.forward(&Tensor::zeros(&[1, 26, 22, 1]), false).unwrap();
        assert_eq!(y.shape(), &[1, 26, 22, 16]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 4]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[4])).is_err());
        let x1 = Tensor::zeros(&[1, 8, 2]);
        let k1 = Tensor::zeros(&[3, 3, 4]);
        assert!(conv1d_forward(&x1, &k1, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn conv1d_delta_kernel_and_shape() {
        let mut k = Tensor::zeros(&[3, 1, 1]);
        k.data_mut()[1] = 1.0;
        let x = Tensor::from_vec(&[1, 6, 1], vec![1.0, -2.0, 3.0, 0.5, 7.0, 1.0]).unwrap();
        assert_eq!(conv1d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap(), x);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Conv1d::new(3, 384, 16, &mut rng);
        let y = layer.forward(&Tensor::zeros(&[1, 210, 384]), false).unwrap();
        assert_eq!(y.shape(), &[1, 210, 16]);
    }
}
