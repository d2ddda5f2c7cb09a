//! Non-overlapping max pooling with floor truncation of trailing rows.

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

/// Returns the pooled tensor and, for every output element, the flat index
/// of the input element that won.
fn pool2d(x: &Tensor, p: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, h, w, c) = match x.shape() {
        &[n, h, w, c] => (n, h, w, c),
        s => return Err(shape_err("maxpool2d input", &[0, 0, 0, 0], s)),
    };
    if p == 0 || h < p || w < p {
        return Err(NnError::Config(format!(
            "maxpool2d of size {p} needs spatial extents >= {p}, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / p, w / p);
    let mut out = vec![f64::NEG_INFINITY; n * oh * ow * c];
    let mut arg = vec![0usize; out.len()];
    let xd = x.data();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * c;
                for dy in 0..p {
                    for dx in 0..p {
                        let i = ((b * h + oy * p + dy) * w + ox * p + dx) * c;
                        for ch in 0..c {
                            if xd[i + ch] > out[o + ch] {
                                out[o + ch] = xd[i + ch];
                                arg[o + ch] = i + ch;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, arg))
}

fn pool1d(x: &Tensor, p: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, t, c) = match x.shape() {
        &[n, t, c] => (n, t, c),
        s => return Err(shape_err("maxpool1d input", &[0, 0, 0], s)),
    };
    if p == 0 || t < p {
        return Err(NnError::Config(format!(
            "maxpool1d of size {p} needs at least {p} steps, got {t}"
        )));
    }
    let ot = t / p;
    let mut out = vec![f64::NEG_INFINITY; n * ot * c];
    let mut arg = vec![0usize; out.len()];
    let xd = x.data();
    for b in 0..n {
        for s in 0..ot {
            let o = (b * ot + s) * c;
            for d in 0..p {
                let i = (b * t + s * p + d) * c;
                for ch in 0..c {
                    if xd[i + ch] > out[o + ch] {
                        out[o + ch] = xd[i + ch];
                        arg[o + ch] = i + ch;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, ot, c], out)?, arg))
}

pub fn maxpool2d(x: &Tensor, pool: usize) -> Result<Tensor> {
    pool2d(x, pool).map(|(y, _)| y)
}

pub fn maxpool1d(x: &Tensor, pool: usize) -> Result<Tensor> {
    pool1d(x, pool).map(|(y, _)| y)
}

#[derive(Debug, Clone)]
pub struct MaxPool {
    pub size: usize,
    pub dims: PoolDims,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolDims {
    One,
    Two,
}

impl MaxPool {
    pub fn new(size: usize, dims: PoolDims) -> Self {
        Self {
            size,
            dims,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (y, arg) = match self.dims {
            PoolDims::One => pool1d(x, self.size)?,
            PoolDims::Two => pool2d(x, self.size)?,
        };
        self.cache = train.then(|| (x.shape().to_vec(), arg));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self
            .cache
            .as_ref()
            .ok_or_else(|| shape_err("maxpool backward before forward", &[1], &[0]))?;
        if dy.len() != arg.len() {
            return Err(shape_err("maxpool grad", &[arg.len()], dy.shape()));
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(dy.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_truncation_matches_recurrent_cnn_shapes() {
        let y = maxpool2d(&Tensor::zeros(&[1, 26, 22, 16]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 13, 11, 16]);
        let y = maxpool2d(&Tensor::zeros(&[1, 13, 11, 32]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 6, 5, 32]);
        let y = maxpool2d(&Tensor::zeros(&[1, 6, 5, 64]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 64]);
        assert_eq!(y.row_len(), 384);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let y = maxpool2d(&Tensor::filled(&[2, 5, 7, 3], -1.25), 2).unwrap();
        assert!(y.data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn maxpool1d_boundaries() {
        let y = maxpool1d(&Tensor::zeros(&[1, 210, 16]), 8).unwrap();
        assert_eq!(y.shape(), &[1, 26, 16]);
        let one = maxpool1d(&Tensor::zeros(&[1, 8, 2]), 8).unwrap();
        assert_eq!(one.shape(), &[1, 1, 2]);
        assert!(maxpool1d(&Tensor::zeros(&[1, 7, 2]), 8).is_err());
        assert!(maxpool2d(&Tensor::zeros(&[1, 1, 4, 2]), 2).is_err());
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let x = Tensor::from_vec(&[1, 4, 1], vec![1.0, 3.0, -1.0, 2.0]).unwrap();
        let mut p = MaxPool::new(2, PoolDims::One);
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        let dx = p
            .backward(&Tensor::from_vec(&[1, 2, 1], vec![10.0, 20.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 0.0, 20.0]);
    }
}
