//! LSTM and bidirectional LSTM over batched sequences `(N, T, D)`.
//!
//! Gate blocks in the fused `4H` axis are ordered input, forget, cell
//! candidate, output.

use rand::Rng;

use crate::activation::sigmoid;
use crate::error::{shape_err, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct LstmCache {
    n: usize,
    t: usize,
    x: Vec<f64>,
    /// Post-activation gates per step, `(N, 4H)` each.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: Tensor,
    pub w_recurrent: Tensor,
    pub bias: Tensor,
    pub return_sequences: bool,
    pub(crate) grad_input: Tensor,
    pub(crate) grad_recurrent: Tensor,
    pub(crate) grad_bias: Tensor,
    cache: Option<LstmCache>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, return_sequences: bool, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-limit..limit)).collect() };
        let w = Tensor::from_vec(&[inputs, 4 * hidden], draw(inputs * 4 * hidden)).expect("shape");
        let u = Tensor::from_vec(&[hidden, 4 * hidden], draw(hidden * 4 * hidden)).expect("shape");
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        Self::from_params(w, u, b, return_sequences)
    }

    pub fn from_params(w_input: Tensor, w_recurrent: Tensor, bias: Tensor, return_sequences: bool) -> Self {
        Self {
            grad_input: Tensor::zeros(w_input.shape()),
            grad_recurrent: Tensor::zeros(w_recurrent.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            w_input,
            w_recurrent,
            bias,
            return_sequences,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.shape()[0]
    }

    fn check(&self) -> Result<()> {
        let (d, h) = (self.inputs(), self.hidden());
        if self.w_input.shape() != [d, 4 * h] || self.w_recurrent.shape() != [h, 4 * h] || self.bias.shape() != [4 * h] {
            return Err(shape_err("lstm parameters", &[d, 4 * h], self.w_input.shape()));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check()?;
        let (d, h) = (self.inputs(), self.hidden());
        let (n, t) = match x.shape() {
            &[n, t, dd] if dd == d => (n, t),
            s => return Err(shape_err("lstm input", &[0, 0, d], s)),
        };
        let g4 = 4 * h;
        // Input projections for every (batch, step) row at once.
        let mut xw = vec![0.0; n * t * g4];
        gemm(n * t, d, g4, x.data(), false, self.w_input.data(), false, 0.0, &mut xw);

        let mut h_prev = vec![0.0; n * h];
        let mut c_prev = vec![0.0; n * h];
        let mut gates_all = Vec::with_capacity(t);
        let mut cells = Vec::with_capacity(t);
        let mut hiddens = Vec::with_capacity(t);
        let mut out = if self.return_sequences { vec![0.0; n * t * h] } else { Vec::new() };
        for step in 0..t {
            let mut z = vec![0.0; n * g4];
            for b in 0..n {
                let row = &mut z[b * g4..(b + 1) * g4];
                row.copy_from_slice(&xw[(b * t + step) * g4..][..g4]);
                for (r, bias) in row.iter_mut().zip(self.bias.data()) {
                    *r += bias;
                }
            }
            gemm(n, h, g4, &h_prev, false, self.w_recurrent.data(), false, 1.0, &mut z);
            let mut c = vec![0.0; n * h];
            let mut hh = vec![0.0; n * h];
            for b in 0..n {
                let zr = &mut z[b * g4..(b + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[h + j]);
                    let g = zr[2 * h + j].tanh();
                    let o = sigmoid(zr[3 * h + j]);
                    zr[j] = i;
                    zr[h + j] = f;
                    zr[2 * h + j] = g;
                    zr[3 * h + j] = o;
                    let cv = f * c_prev[b * h + j] + i * g;
                    c[b * h + j] = cv;
                    hh[b * h + j] = o * cv.tanh();
                }
                if self.return_sequences {
                    out[(b * t + step) * h..][..h].copy_from_slice(&hh[b * h..(b + 1) * h]);
                }
            }
            if train {
                gates_all.push(z);
                cells.push(c.clone());
                hiddens.push(hh.clone());
            }
            h_prev = hh;
            c_prev = c;
        }
        self.cache = train.then(|| LstmCache {
            n,
            t,
            x: x.data().to_vec(),
            gates: gates_all,
            cells,
            hidden: hiddens,
        });
        if self.return_sequences {
            Tensor::from_vec(&[n, t, h], out)
        } else {
            Tensor::from_vec(&[n, h], h_prev)
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (d, h) = (self.inputs(), self.hidden());
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| shape_err("lstm backward before forward", &[1], &[0]))?;
        let (n, t) = (cache.n, cache.t);
        let want: Vec<usize> = if self.return_sequences { vec![n, t, h] } else { vec![n, h] };
        if dy.shape() != want.as_slice() {
            return Err(shape_err("lstm grad", &want, dy.shape()));
        }
        let g4 = 4 * h;
        let zeros = vec![0.0; n * h];
        let mut dh_next = vec![0.0; n * h];
        let mut dc_next = vec![0.0; n * h];
        let mut dz_all = vec![0.0; n * t * g4];
        let mut dz = vec![0.0; n * g4];
        for step in (0..t).rev() {
            let gates = &cache.gates[step];
            let c = &cache.cells[step];
            let c_prev = if step > 0 { &cache.cells[step - 1] } else { &zeros };
            let h_prev = if step > 0 { &cache.hidden[step - 1] } else { &zeros };
            for b in 0..n {
                for j in 0..h {
                    let k = b * h + j;
                    let mut dh = dh_next[k];
                    if self.return_sequences {
                        dh += dy.data()[(b * t + step) * h + j];
                    } else if step + 1 == t {
                        dh += dy.data()[k];
                    }
                    let gr = &gates[b * g4..(b + 1) * g4];
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tc = c[k].tanh();
                    let d_o = dh * tc;
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    let di = dc * g;
                    let dg = dc * i;
                    let df = dc * c_prev[k];
                    dc_next[k] = dc * f;
                    let dzr = &mut dz[b * g4..(b + 1) * g4];
                    dzr[j] = di * i * (1.0 - i);
                    dzr[h + j] = df * f * (1.0 - f);
                    dzr[2 * h + j] = dg * (1.0 - g * g);
                    dzr[3 * h + j] = d_o * o * (1.0 - o);
                }
                dz_all[(b * t + step) * g4..][..g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
            }
            gemm(h, n, g4, h_prev, true, &dz, false, 1.0, self.grad_recurrent.data_mut());
            gemm(n, g4, h, &dz, false, self.w_recurrent.data(), true, 0.0, &mut dh_next);
        }
        gemm(d, n * t, g4, &cache.x, true, &dz_all, false, 1.0, self.grad_input.data_mut());
        let gb = self.grad_bias.data_mut();
        for r in dz_all.chunks(g4) {
            for (g, v) in gb.iter_mut().zip(r) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; n * t * d];
        gemm(n * t, g4, d, &dz_all, false, self.w_input.data(), true, 0.0, &mut dx);
        Tensor::from_vec(&[n, t, d], dx)
    }
}

fn reverse_time(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, t, c) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for step in 0..t {
            out[(b * t + step) * c..][..c].copy_from_slice(&x.data()[(b * t + t - 1 - step) * c..][..c]);
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

/// Forward and time-reversed LSTMs with concatenated outputs (`2H` wide).
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward_cell: Lstm,
    pub backward_cell: Lstm,
}

impl BiLstm {
    pub fn new(inputs: usize, hidden: usize, return_sequences: bool, rng: &mut impl Rng) -> Self {
        Self {
            forward_cell: Lstm::new(inputs, hidden, return_sequences, rng),
            backward_cell: Lstm::new(inputs, hidden, return_sequences, rng),
        }
    }

    pub fn return_sequences(&self) -> bool {
        self.forward_cell.return_sequences
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden()
    }

    pub fn inputs(&self) -> usize {
        self.forward_cell.inputs()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(shape_err("bilstm input", &[0, 0, self.inputs()], x.shape()));
        }
        let yf = self.forward_cell.forward(x, train)?;
        let yb = self.backward_cell.forward(&reverse_time(x), train)?;
        let h = self.hidden();
        if self.return_sequences() {
            let (n, t) = (x.shape()[0], x.shape()[1]);
            let yb = reverse_time(&yb);
            let mut out = vec![0.0; n * t * 2 * h];
            for r in 0..n * t {
                out[r * 2 * h..][..h].copy_from_slice(&yf.data()[r * h..][..h]);
                out[r * 2 * h + h..][..h].copy_from_slice(&yb.data()[r * h..][..h]);
            }
            Tensor::from_vec(&[n, t, 2 * h], out)
        } else {
            let n = x.shape()[0];
            let mut out = vec![0.0; n * 2 * h];
            for b in 0..n {
                out[b * 2 * h..][..h].copy_from_slice(&yf.data()[b * h..][..h]);
                out[b * 2 * h + h..][..h].copy_from_slice(&yb.data()[b * h..][..h]);
            }
            Tensor::from_vec(&[n, 2 * h], out)
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let h = self.hidden();
        let s = dy.shape().to_vec();
        if s.last() != Some(&(2 * h)) {
            return Err(shape_err("bilstm grad", &[0, 2 * h], &s));
        }
        let rows = dy.len() / (2 * h);
        let mut df = vec![0.0; rows * h];
        let mut db = vec![0.0; rows * h];
        for r in 0..rows {
            df[r * h..][..h].copy_from_slice(&dy.data()[r * 2 * h..][..h]);
            db[r * h..][..h].copy_from_slice(&dy.data()[r * 2 * h + h..][..h]);
        }
        let mut half = s.clone();
        *half.last_mut().unwrap() = h;
        let df = Tensor::from_vec(&half, df)?;
        let mut db = Tensor::from_vec(&half, db)?;
        if self.return_sequences() {
            db = reverse_time(&db);
        }
        let dxf = self.forward_cell.backward(&df)?;
        let dxb = reverse_time(&self.backward_cell.backward(&db)?);
        let mut dx = dxf;
        for (a, b) in dx.data_mut().iter_mut().zip(dxb.data()) {
            *a += b;
        }
        Ok(dx)
    }
}

/// Runs an LSTM (or biLSTM) over a single `(T, D)` sequence.
pub fn lstm_forward(x: &Tensor, cell: &mut LstmCell) -> Result<Tensor> {
    let (t, d) = match x.shape() {
        &[t, d] => (t, d),
        s => return Err(shape_err("lstm sequence", &[0, 0], s)),
    };
    let batched = x.clone().reshape(&[1, t, d])?;
    let y = match cell {
        LstmCell::Uni(l) => l.forward(&batched, false)?,
        LstmCell::Bi(l) => l.forward(&batched, false)?,
    };
    let tail: Vec<usize> = y.shape()[1..].to_vec();
    y.reshape(&tail)
}

#[derive(Debug, Clone)]
pub enum LstmCell {
    Uni(Lstm),
    Bi(BiLstm),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_keep_state_zero() {
        let mut l = Lstm::from_params(
            Tensor::zeros(&[3, 8]),
            Tensor::zeros(&[2, 8]),
            Tensor::zeros(&[8]),
            true,
        );
        let x = Tensor::from_vec(&[1, 4, 3], (0..12).map(|v| v as f64 - 5.0).collect()).unwrap();
        let y = l.forward(&x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_hand_gates() {
        // i = f = o = sigmoid(0) = 0.5, candidate pre-activation 1.
        let mut b = Tensor::zeros(&[4]);
        b.data_mut()[2] = 1.0;
        let mut l = Lstm::from_params(Tensor::zeros(&[1, 4]), Tensor::zeros(&[1, 4]), b, false);
        let y = l.forward(&Tensor::zeros(&[1, 1, 1]), false).unwrap();
        let want = 0.5 * (0.5 * 1f64.tanh()).tanh();
        assert!((y.data()[0] - want).abs() < 1e-15);
        assert!((y.data()[0] - 0.181_699_742).abs() < 1e-9);
    }

    #[test]
    fn backward_half_equals_forward_cell_on_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bi = BiLstm::new(3, 4, true, &mut rng);
        let data: Vec<f64> = (0..2 * 5 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[2, 5, 3], data).unwrap();
        let y = bi.forward(&x, false).unwrap();
        let mut back = bi.backward_cell.clone();
        let yb = back.forward(&reverse_time(&x), false).unwrap();
        for b in 0..2 {
            for t in 0..5 {
                for j in 0..4 {
                    let from_bi = y.data()[(b * 5 + t) * 8 + 4 + j];
                    let from_cell = yb.data()[(b * 5 + (4 - t)) * 4 + j];
                    assert_eq!(from_bi, from_cell);
                }
            }
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Lstm::new(2, 3, false, &mut rng);
        assert_eq!(&l.bias.data()[3..6], &[1.0, 1.0, 1.0]);
        assert!(l.bias.data()[..3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sequence_helper_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::zeros(&[26, 16]);
        let mut bi = LstmCell::Bi(BiLstm::new(16, 128, true, &mut rng));
        assert_eq!(lstm_forward(&x, &mut bi).unwrap().shape(), &[26, 256]);
        let mut uni = LstmCell::Uni(Lstm::new(16, 32, false, &mut rng));
        assert_eq!(lstm_forward(&x, &mut uni).unwrap().shape(), &[32]);
    }
}
