//! Left-to-right GMM-HMMs: log-domain Baum-Welch, Viterbi, and per-epoch
//! channel scoring.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::error::{CoreError, Result};
use crate::features::FeatureSequence;
use crate::signal::Label;

const HMM_MAGIC: &[u8; 4] = b"NHMM";
const HMM_VERSION: u16 = 1;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Diagonal-covariance Gaussian mixture of one HMM state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl Mixture {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self, dim: usize, floor: &[f64]) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.variances.len() != m {
            return Err(CoreError::Config("mixture parameter counts disagree".into()));
        }
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(CoreError::Config(format!("mixture weights sum to {wsum}")));
        }
        for (mu, var) in self.means.iter().zip(&self.variances) {
            if mu.len() != dim || var.len() != dim {
                return Err(CoreError::Dimension {
                    context: "mixture component",
                    expected: dim,
                    actual: mu.len().min(var.len()),
                });
            }
            for (d, &v) in var.iter().enumerate() {
                if !(v.is_finite() && v >= floor[d] * (1.0 - 1e-12) && v > 0.0) {
                    return Err(CoreError::Config(format!("variance {v} below floor {}", floor[d])));
                }
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Numeric("non-finite mixture mean".into()));
            }
        }
        Ok(())
    }
}

/// Per-component log-density constants for fast repeated evaluation.
struct Prepared {
    states: usize,
    mix: usize,
    dim: usize,
    log_norm: Vec<f64>,
    means: Vec<f64>,
    inv_var: Vec<f64>,
}

impl Prepared {
    fn new(states: &[Mixture]) -> Prepared {
        let mix = states.iter().map(|s| s.components()).max().unwrap_or(0);
        let dim = states[0].dim();
        let n = states.len() * mix;
        let mut log_norm = vec![f64::NEG_INFINITY; n];
        let mut means = vec![0.0; n * dim];
        let mut inv_var = vec![0.0; n * dim];
        for (s, st) in states.iter().enumerate() {
            for m in 0..st.components() {
                let k = s * mix + m;
                let logdet: f64 = st.variances[m].iter().map(|v| v.ln()).sum();
                log_norm[k] = st.weights[m].ln() - 0.5 * (dim as f64 * LN_2PI + logdet);
                means[k * dim..(k + 1) * dim].copy_from_slice(&st.means[m]);
                for d in 0..dim {
                    inv_var[k * dim + d] = 1.0 / st.variances[m][d];
                }
            }
        }
        Prepared {
            states: states.len(),
            mix,
            dim,
            log_norm,
            means,
            inv_var,
        }
    }

    /// Writes weighted component log-densities (states × mix) into `out`.
    fn components(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, o) in out.iter_mut().enumerate() {
            if self.log_norm[k] == f64::NEG_INFINITY {
                *o = f64::NEG_INFINITY;
                continue;
            }
            let mu = &self.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let z = x[i] - mu[i];
                q += z * z * iv[i];
            }
            *o = self.log_norm[k] - 0.5 * q;
        }
    }

    /// Per-state log emission densities for each of T frames (T × states).
    fn emissions(&self, frames: &[f64]) -> Vec<f64> {
        let t_len = frames.len() / self.dim;
        let mut comp = vec![0.0; self.states * self.mix];
        let mut out = vec![0.0; t_len * self.states];
        for t in 0..t_len {
            self.components(&frames[t * self.dim..(t + 1) * self.dim], &mut comp);
            for s in 0..self.states {
                out[t * self.states + s] = log_sum_exp(&comp[s * self.mix..(s + 1) * self.mix]);
            }
        }
        out
    }
}

pub fn gmm_log_likelihood(state: &Mixture, x: &[f64]) -> Result<f64> {
    if x.len() != state.dim() {
        return Err(CoreError::Dimension {
            context: "gmm input",
            expected: state.dim(),
            actual: x.len(),
        });
    }
    let p = Prepared::new(std::slice::from_ref(state));
    let mut comp = vec![0.0; p.mix];
    p.components(x, &mut comp);
    Ok(log_sum_exp(&comp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmHmm {
    pub label: Label,
    /// Row-stochastic, upper bidiagonal.
    pub transitions: Vec<Vec<f64>>,
    pub states: Vec<Mixture>,
    pub var_floor: Vec<f64>,
}

impl GmmHmm {
    pub fn new(
        label: Label,
        transitions: Vec<Vec<f64>>,
        states: Vec<Mixture>,
        var_floor: Vec<f64>,
    ) -> Result<GmmHmm> {
        let hmm = GmmHmm {
            label,
            transitions,
            states,
            var_floor,
        };
        hmm.validate()?;
        Ok(hmm)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.var_floor.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states.len();
        if s == 0 {
            return Err(CoreError::Config("HMM needs at least one state".into()));
        }
        if self.transitions.len() != s || self.transitions.iter().any(|r| r.len() != s) {
            return Err(CoreError::Config("transition matrix shape mismatch".into()));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                let allowed = j == i || j == i + 1;
                if !allowed && p != 0.0 {
                    return Err(CoreError::Config(format!(
                        "transition {i}->{j} violates left-to-right topology"
                    )));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(CoreError::Config(format!("transition {i}->{j} = {p}")));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CoreError::Config(format!("transition row {i} sums to {sum}")));
            }
        }
        let dim = self.dim();
        if dim == 0 || self.var_floor.iter().any(|&v| !(v > 0.0)) {
            return Err(CoreError::Config("variance floor must be positive".into()));
        }
        for st in &self.states {
            st.validate(dim, &self.var_floor)?;
        }
        Ok(())
    }

    fn log_transitions(&self) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .map(|r| r.iter().map(|&p| p.ln()).collect())
            .collect()
    }

    fn check_frames(&self, frames: &[f64]) -> Result<usize> {
        let d = self.dim();
        if frames.is_empty() || frames.len() % d != 0 {
            return Err(CoreError::Dimension {
                context: "hmm frames",
                expected: d,
                actual: frames.len() % d.max(1),
            });
        }
        Ok(frames.len() / d)
    }

    /// Log emission densities, T × states, for a flat frame sequence.
    pub fn emissions(&self, frames: &[f64]) -> Result<Vec<f64>> {
        self.check_frames(frames)?;
        Ok(Prepared::new(&self.states).emissions(frames))
    }

    /// Total log-likelihood (forward algorithm, free end state).
    pub fn log_likelihood(&self, frames: &[f64]) -> Result<f64> {
        let t_len = self.check_frames(frames)?;
        let b = self.emissions(frames)?;
        let alpha = forward(&self.log_transitions(), &b, t_len, self.num_states());
        let s = self.num_states();
        Ok(log_sum_exp(&alpha[(t_len - 1) * s..]))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_header(w, HMM_MAGIC, HMM_VERSION)?;
        w.write_u8(match self.label {
            Label::Seiz => 1,
            Label::Bckg => 0,
        })?;
        let s = self.num_states();
        let m = self.states[0].components();
        w.write_u16::<LittleEndian>(s as u16)?;
        w.write_u16::<LittleEndian>(m as u16)?;
        w.write_u16::<LittleEndian>(self.dim() as u16)?;
        for row in &self.transitions {
            for &p in row {
                w.write_f64::<LittleEndian>(p)?;
            }
        }
        for &v in &self.var_floor {
            w.write_f64::<LittleEndian>(v)?;
        }
        for st in &self.states {
            if st.components() != m {
                return Err(CoreError::Config("states differ in mixture count".into()));
            }
            for k in 0..m {
                w.write_f64::<LittleEndian>(st.weights[k])?;
                for &v in st.means[k].iter().chain(&st.variances[k]) {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<GmmHmm> {
        binio::read_header(r, HMM_MAGIC, HMM_VERSION)?;
        let label = match r.read_u8()? {
            1 => Label::Seiz,
            0 => Label::Bckg,
            x => return Err(CoreError::Data(format!("bad HMM label tag {x}"))),
        };
        let s = r.read_u16::<LittleEndian>()? as usize;
        let m = r.read_u16::<LittleEndian>()? as usize;
        let d = r.read_u16::<LittleEndian>()? as usize;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let transitions = (0..s).map(|_| read_vec(s)).collect::<Result<Vec<_>>>()?;
        let var_floor = read_vec(d)?;
        let mut states = Vec::with_capacity(s);
        for _ in 0..s {
            let mut mix = Mixture {
                weights: Vec::with_capacity(m),
                means: Vec::with_capacity(m),
                variances: Vec::with_capacity(m),
            };
            for _ in 0..m {
                mix.weights.push(read_vec(1)?[0]);
                mix.means.push(read_vec(d)?);
                mix.variances.push(read_vec(d)?);
            }
            states.push(mix);
        }
        GmmHmm::new(label, transitions, states, var_floor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GmmHmm> {
        let f = File::open(path).map_err(|source| CoreError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        GmmHmm::read_from(&mut BufReader::new(f))
    }
}

/// Log forward variables (T × S), starting in state 0.
fn forward(log_a: &[Vec<f64>], b: &[f64], t_len: usize, s: usize) -> Vec<f64> {
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s];
    alpha[0] = b[0];
    for t in 1..t_len {
        for j in 0..s {
            let stay = alpha[(t - 1) * s + j] + log_a[j][j];
            let enter = if j > 0 {
                alpha[(t - 1) * s + j - 1] + log_a[j - 1][j]
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * s + j] = lse2(stay, enter) + b[t * s + j];
        }
    }
    alpha
}

fn backward(log_a: &[Vec<f64>], b: &[f64], t_len: usize, s: usize) -> Vec<f64> {
    let mut beta = vec![0.0; t_len * s];
    for t in (0..t_len - 1).rev() {
        for i in 0..s {
            let stay = log_a[i][i] + b[(t + 1) * s + i] + beta[(t + 1) * s + i];
            let next = if i + 1 < s {
                log_a[i][i + 1] + b[(t + 1) * s + i + 1] + beta[(t + 1) * s + i + 1]
            } else {
                f64::NEG_INFINITY
            };
            beta[t * s + i] = lse2(stay, next);
        }
    }
    beta
}

/// Best monotone state path given log transitions and T × S log emissions.
pub fn viterbi_from_emissions(log_a: &[Vec<f64>], b: &[f64], s: usize) -> (Vec<usize>, f64) {
    let t_len = b.len() / s;
    let mut delta = vec![f64::NEG_INFINITY; t_len * s];
    let mut back = vec![0usize; t_len * s];
    delta[0] = b[0];
    for t in 1..t_len {
        for j in 0..s {
            let stay = delta[(t - 1) * s + j] + log_a[j][j];
            let enter = if j > 0 {
                delta[(t - 1) * s + j - 1] + log_a[j - 1][j]
            } else {
                f64::NEG_INFINITY
            };
            let (best, from) = if enter > stay { (enter, j - 1) } else { (stay, j) };
            delta[t * s + j] = best + b[t * s + j];
            back[t * s + j] = from;
        }
    }
    let last = &delta[(t_len - 1) * s..];
    let mut state = 0;
    for j in 1..s {
        if last[j] > last[state] {
            state = j;
        }
    }
    let score = last[state];
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = state;
        if t > 0 {
            state = back[t * s + state];
        }
    }
    (path, score)
}

pub fn viterbi_decode(model: &GmmHmm, frames: &[f64]) -> Result<(Vec<usize>, f64)> {
    let b = model.emissions(frames)?;
    Ok(viterbi_from_emissions(
        &model.log_transitions(),
        &b,
        model.num_states(),
    ))
}

/// Per-dimension floor: `relative` × global variance, at least `absolute`.
pub fn variance_floor(sequences: &[Vec<f64>], dim: usize, relative: f64, absolute: f64) -> Vec<f64> {
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for seq in sequences {
        for x in seq.chunks_exact(dim) {
            n += 1.0;
            for d in 0..dim {
                let delta = x[d] - mean[d];
                mean[d] += delta / n;
                m2[d] += delta * (x[d] - mean[d]);
            }
        }
    }
    m2.iter()
        .map(|&v| {
            let var = if n > 0.0 { v / n } else { 0.0 };
            (relative * var).max(absolute)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmInit {
    pub num_states: usize,
    pub num_mixtures: usize,
    pub var_floor_relative: f64,
    pub var_floor_absolute: f64,
    pub kmeans_iterations: usize,
}

impl Default for HmmInit {
    fn default() -> Self {
        HmmInit {
            num_states: 3,
            num_mixtures: 8,
            var_floor_relative: 1e-3,
            var_floor_absolute: 1e-6,
            kmeans_iterations: 10,
        }
    }
}

fn check_sequences(sequences: &[Vec<f64>], dim: usize, states: usize) -> Result<()> {
    if sequences.is_empty() {
        return Err(CoreError::Data("empty HMM training set".into()));
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.len() % dim != 0 {
            return Err(CoreError::Dimension {
                context: "training sequence",
                expected: dim,
                actual: s.len() % dim,
            });
        }
        if s.len() / dim < states {
            return Err(CoreError::Data(format!(
                "sequence {i} has {} frames, fewer than {states} states",
                s.len() / dim
            )));
        }
    }
    Ok(())
}

/// Uniform segmentation of each sequence across states, then k-means per
/// state to seed the mixtures.
pub fn initialize_hmm(
    label: Label,
    sequences: &[Vec<f64>],
    dim: usize,
    opts: &HmmInit,
    seed: u64,
) -> Result<GmmHmm> {
    if opts.num_states == 0 || opts.num_mixtures == 0 || dim == 0 {
        return Err(CoreError::Config("HMM needs states, mixtures and a dimension".into()));
    }
    check_sequences(sequences, dim, opts.num_states)?;
    let floor = variance_floor(sequences, dim, opts.var_floor_relative, opts.var_floor_absolute);
    let s = opts.num_states;
    let mut slices: Vec<Vec<&[f64]>> = vec![Vec::new(); s];
    let mut total_frames = 0usize;
    for seq in sequences {
        let t_len = seq.len() / dim;
        total_frames += t_len;
        for (t, x) in seq.chunks_exact(dim).enumerate() {
            slices[t * s / t_len].push(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = slices
        .iter()
        .map(|pts| kmeans_mixture(pts, opts.num_mixtures, opts.kmeans_iterations, &floor, &mut rng))
        .collect();
    let avg_len = total_frames as f64 / sequences.len() as f64;
    let stay = (1.0 - s as f64 / avg_len).clamp(0.1, 0.95);
    let transitions = (0..s)
        .map(|i| {
            let mut row = vec![0.0; s];
            if i + 1 < s {
                row[i] = stay;
                row[i + 1] = 1.0 - stay;
            } else {
                row[i] = 1.0;
            }
            row
        })
        .collect();
    GmmHmm::new(label, transitions, states, floor)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_mixture(
    pts: &[&[f64]],
    k: usize,
    iterations: usize,
    floor: &[f64],
    rng: &mut ChaCha8Rng,
) -> Mixture {
    let dim = floor.len();
    let n = pts.len();
    let mut global_mean = vec![0.0; dim];
    for p in pts {
        for d in 0..dim {
            global_mean[d] += p[d] / n as f64;
        }
    }
    let mut global_var = vec![0.0; dim];
    for p in pts {
        for d in 0..dim {
            global_var[d] += (p[d] - global_mean[d]).powi(2) / n as f64;
        }
    }
    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = vec![pts[rng.random_range(0..n)].to_vec()];
    let mut dist: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(pts[pick].to_vec());
        for (i, p) in pts.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_dist(p, ctr);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in pts.iter().enumerate() {
            counts[assign[i]] += 1;
            for d in 0..dim {
                sums[assign[i]][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    let mut vars = vec![vec![0.0; dim]; k];
    for (i, p) in pts.iter().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        for d in 0..dim {
            vars[c][d] += (p[d] - centers[c][d]).powi(2);
        }
    }
    let mut mix = Mixture {
        weights: Vec::with_capacity(k),
        means: Vec::with_capacity(k),
        variances: Vec::with_capacity(k),
    };
    for c in 0..k {
        if counts[c] == 0 {
            mix.weights.push(0.0);
            mix.means.push(global_mean.clone());
            mix.variances
                .push(global_var.iter().zip(floor).map(|(v, f)| v.max(*f)).collect());
        } else {
            mix.weights.push(counts[c] as f64 / n as f64);
            mix.means.push(centers[c].clone());
            mix.variances.push(
                vars[c]
                    .iter()
                    .zip(floor)
                    .map(|(v, f)| (v / counts[c] as f64).max(*f))
                    .collect(),
            );
        }
    }
    mix
}

/// Sufficient statistics of one E-step.
struct Accum {
    log_likelihood: f64,
    occ: Vec<f64>,
    sum1: Vec<f64>,
    sum2: Vec<f64>,
    trans_num: Vec<[f64; 2]>,
    trans_den: Vec<f64>,
}

fn e_step(model: &GmmHmm, sequences: &[Vec<f64>]) -> Accum {
    let s = model.num_states();
    let mix = model.states[0].components();
    let dim = model.dim();
    let prep = Prepared::new(&model.states);
    let log_a = model.log_transitions();
    let mut acc = Accum {
        log_likelihood: 0.0,
        occ: vec![0.0; s * mix],
        sum1: vec![0.0; s * mix * dim],
        sum2: vec![0.0; s * mix * dim],
        trans_num: vec![[0.0; 2]; s],
        trans_den: vec![0.0; s],
    };
    let mut comp = vec![0.0; s * mix];
    for seq in sequences {
        let t_len = seq.len() / dim;
        let b = prep.emissions(seq);
        let alpha = forward(&log_a, &b, t_len, s);
        let beta = backward(&log_a, &b, t_len, s);
        let ll = log_sum_exp(&alpha[(t_len - 1) * s..]);
        acc.log_likelihood += ll;
        for t in 0..t_len {
            let x = &seq[t * dim..(t + 1) * dim];
            prep.components(x, &mut comp);
            for j in 0..s {
                let g = (alpha[t * s + j] + beta[t * s + j] - ll).exp();
                if g == 0.0 {
                    continue;
                }
                if t + 1 < t_len {
                    acc.trans_den[j] += g;
                    acc.trans_num[j][0] +=
                        (alpha[t * s + j] + log_a[j][j] + b[(t + 1) * s + j] + beta[(t + 1) * s + j] - ll).exp();
                    if j + 1 < s {
                        acc.trans_num[j][1] += (alpha[t * s + j]
                            + log_a[j][j + 1]
                            + b[(t + 1) * s + j + 1]
                            + beta[(t + 1) * s + j + 1]
                            - ll)
                            .exp();
                    }
                }
                let bj = b[t * s + j];
                for m in 0..mix {
                    let k = j * mix + m;
                    let r = g * (comp[k] - bj).exp();
                    if r == 0.0 || !r.is_finite() {
                        continue;
                    }
                    acc.occ[k] += r;
                    // Moments about the current mean, for numerical stability.
                    let mu = &model.states[j].means[m];
                    for d in 0..dim {
                        let z = x[d] - mu[d];
                        acc.sum1[k * dim + d] += r * z;
                        acc.sum2[k * dim + d] += r * z * z;
                    }
                }
            }
        }
    }
    acc
}

fn m_step(model: &GmmHmm, acc: &Accum) -> GmmHmm {
    let s = model.num_states();
    let mix = model.states[0].components();
    let dim = model.dim();
    let mut next = model.clone();
    for i in 0..s {
        if i + 1 < s && acc.trans_den[i] > 0.0 {
            let stay = acc.trans_num[i][0];
            let go = acc.trans_num[i][1];
            let total = stay + go;
            if total > 0.0 {
                next.transitions[i][i] = stay / total;
                next.transitions[i][i + 1] = go / total;
            }
        }
        let state_occ: f64 = acc.occ[i * mix..(i + 1) * mix].iter().sum();
        if state_occ <= 0.0 {
            continue;
        }
        for m in 0..mix {
            let k = i * mix + m;
            let occ = acc.occ[k];
            next.states[i].weights[m] = occ / state_occ;
            if occ <= 0.0 {
                continue;
            }
            for d in 0..dim {
                let shift = acc.sum1[k * dim + d] / occ;
                next.states[i].means[m][d] = model.states[i].means[m][d] + shift;
                let var = acc.sum2[k * dim + d] / occ - shift * shift;
                next.states[i].variances[m][d] = var.max(model.var_floor[d]);
            }
        }
        let wsum: f64 = next.states[i].weights.iter().sum();
        for w in &mut next.states[i].weights {
            *w /= wsum;
        }
    }
    next
}

/// Runs `iterations` EM updates. Returns the model and the total
/// log-likelihood before each update plus after the last one.
pub fn baum_welch_train(
    init: &GmmHmm,
    sequences: &[Vec<f64>],
    iterations: usize,
) -> Result<(GmmHmm, Vec<f64>)> {
    init.validate()?;
    check_sequences(sequences, init.dim(), init.num_states())?;
    let mut model = init.clone();
    let mut trace = Vec::with_capacity(iterations + 1);
    for it in 0..=iterations {
        let acc = e_step(&model, sequences);
        if !acc.log_likelihood.is_finite() {
            return Err(CoreError::Numeric(format!(
                "Baum-Welch log-likelihood became {} at iteration {it}",
                acc.log_likelihood
            )));
        }
        trace.push(acc.log_likelihood);
        if it == iterations {
            break;
        }
        model = m_step(&model, &acc);
    }
    model.validate()?;
    Ok((model, trace))
}

/// Per-epoch, per-channel Viterbi scores of both models.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochScoreGrid {
    epochs: usize,
    channels: usize,
    /// epoch-major, then channel, then (seiz, bckg).
    values: Vec<f64>,
}

impl EpochScoreGrid {
    pub fn from_values(epochs: usize, channels: usize, values: Vec<f64>) -> Result<EpochScoreGrid> {
        if values.len() != epochs * channels * 2 {
            return Err(CoreError::Dimension {
                context: "score grid",
                expected: epochs * channels * 2,
                actual: values.len(),
            });
        }
        Ok(EpochScoreGrid {
            epochs,
            channels,
            values,
        })
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        2 * self.channels
    }

    /// (loglik_seiz, loglik_bckg) of one channel in one epoch.
    pub fn get(&self, epoch: usize, channel: usize) -> (f64, f64) {
        let o = (epoch * self.channels + channel) * 2;
        (self.values[o], self.values[o + 1])
    }

    /// Flattened row: seiz and bckg scores interleaved per channel.
    pub fn row(&self, epoch: usize) -> &[f64] {
        let w = self.width();
        &self.values[epoch * w..(epoch + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean over channels of the per-channel log-likelihood ratio.
    pub fn mean_llr(&self, epoch: usize) -> f64 {
        (0..self.channels)
            .map(|c| {
                let (s, b) = self.get(epoch, c);
                s - b
            })
            .sum::<f64>()
            / self.channels as f64
    }
}

/// Frame range [start, stop) of an epoch.
pub fn epoch_frames(feats: &FeatureSequence, epoch: usize) -> (usize, usize) {
    let fpe = feats.frames_per_epoch();
    let start = epoch * fpe;
    (start, (start + fpe).min(feats.frames()))
}

/// Scores every 1 s epoch of every channel with both models, restarting
/// decoding at each epoch.
pub fn epoch_scores(seiz: &GmmHmm, bckg: &GmmHmm, feats: &FeatureSequence) -> Result<EpochScoreGrid> {
    for m in [seiz, bckg] {
        if m.dim() != feats.dim() {
            return Err(CoreError::Dimension {
                context: "epoch_scores features",
                expected: m.dim(),
                actual: feats.dim(),
            });
        }
    }
    let epochs = feats.epoch_count();
    let channels = feats.channels();
    let s_prep = Prepared::new(&seiz.states);
    let b_prep = Prepared::new(&bckg.states);
    let (s_a, b_a) = (seiz.log_transitions(), bckg.log_transitions());
    let mut values = vec![0.0; epochs * channels * 2];
    for c in 0..channels {
        let span = feats.channel_span(c, 0, feats.frames());
        let es = s_prep.emissions(&span);
        let eb = b_prep.emissions(&span);
        for e in 0..epochs {
            let (t0, t1) = epoch_frames(feats, e);
            let (ns, nb) = (seiz.num_states(), bckg.num_states());
            let (_, ls) = viterbi_from_emissions(&s_a, &es[t0 * ns..t1 * ns], ns);
            let (_, lb) = viterbi_from_emissions(&b_a, &eb[t0 * nb..t1 * nb], nb);
            let o = (e * channels + c) * 2;
            values[o] = ls;
            values[o + 1] = lb;
        }
    }
    EpochScoreGrid::from_values(epochs, channels, values)
}
