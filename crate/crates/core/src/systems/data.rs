//! Input assembly shared by training, inference and the shape probe.

use std::io::{Read, Write};

use eegdet_nn::Tensor;
use rand::seq::index::sample;
use rand::Rng;

use crate::binio::{read_f64s, read_header, write_f64s, write_header};
use crate::error::{CoreError, Result};
use crate::features::FeatureSequence;
use crate::hmm::EpochScoreGrid;
use crate::signal::EpochLabelTrack;

const SCALER_MAGIC: &[u8; 4] = b"NSCL";
const SCALER_VERSION: u16 = 1;

/// One epoch of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct EpochRef {
    pub record: usize,
    pub epoch: usize,
    pub seiz: bool,
}

/// Every seizure epoch plus `ratio` times as many background epochs drawn
/// without replacement, sorted by (record, epoch).
pub fn balanced_sample(labels: &[EpochLabelTrack], ratio: f64, rng: &mut impl Rng) -> Result<Vec<EpochRef>> {
    let mut seiz = Vec::new();
    let mut bckg = Vec::new();
    for (r, track) in labels.iter().enumerate() {
        for (e, l) in track.labels().iter().enumerate() {
            let item = EpochRef {
                record: r,
                epoch: e,
                seiz: l.is_seiz(),
            };
            if item.seiz {
                seiz.push(item);
            } else {
                bckg.push(item);
            }
        }
    }
    if seiz.is_empty() || bckg.is_empty() {
        return Err(CoreError::Data(format!(
            "training corpus must contain both classes (seiz epochs {}, bckg epochs {})",
            seiz.len(),
            bckg.len()
        )));
    }
    let want = ((seiz.len() as f64 * ratio).round() as usize).clamp(1, bckg.len());
    let mut picked: Vec<usize> = sample(rng, bckg.len(), want).into_vec();
    picked.sort_unstable();
    let mut out = seiz;
    out.extend(picked.into_iter().map(|i| bckg[i]));
    out.sort();
    Ok(out)
}

/// Affine per-dimension map `y = (x - shift) * scale`, applied cyclically
/// to rows whose length is a multiple of the fitted dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// Clamp outputs to [0, 1] (min-max scaling for autoencoder inputs).
    clip: bool,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Zero mean, unit variance.
    pub fn standard<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Scaler> {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            for x in row.chunks_exact(dim) {
                n += 1;
                for d in 0..dim {
                    let delta = x[d] - mean[d];
                    mean[d] += delta / n as f64;
                    m2[d] += delta * (x[d] - mean[d]);
                }
            }
        }
        if n == 0 {
            return Err(CoreError::Data("cannot fit a scaler on no data".into()));
        }
        let scale = m2
            .iter()
            .map(|&v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Scaler {
            shift: mean,
            scale,
            clip: false,
        })
    }

    /// Maps the observed range of each dimension onto [0, 1].
    pub fn min_max<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Scaler> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for row in rows {
            for x in row.chunks_exact(dim) {
                any = true;
                for d in 0..dim {
                    lo[d] = lo[d].min(x[d]);
                    hi[d] = hi[d].max(x[d]);
                }
            }
        }
        if !any {
            return Err(CoreError::Data("cannot fit a scaler on no data".into()));
        }
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h - l > 1e-12 { 1.0 / (h - l) } else { 1.0 })
            .collect();
        Ok(Scaler {
            shift: lo,
            scale,
            clip: true,
        })
    }

    pub fn apply(&self, row: &mut [f64]) {
        let dim = self.dim();
        for x in row.chunks_exact_mut(dim) {
            for d in 0..dim {
                let mut v = (x[d] - self.shift[d]) * self.scale[d];
                if self.clip {
                    v = v.clamp(0.0, 1.0);
                }
                x[d] = v;
            }
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_header(w, SCALER_MAGIC, SCALER_VERSION)?;
        w.write_all(&[self.clip as u8])?;
        write_f64s(w, &self.shift)?;
        write_f64s(w, &self.scale)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Scaler> {
        read_header(r, SCALER_MAGIC, SCALER_VERSION)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let shift = read_f64s(r)?;
        let scale = read_f64s(r)?;
        if shift.len() != scale.len() || shift.is_empty() {
            return Err(CoreError::Data("scaler vectors disagree in length".into()));
        }
        Ok(Scaler {
            shift,
            scale,
            clip: flag[0] != 0,
        })
    }
}

/// A sequence of fixed-width vectors on a regular grid of `per_epoch`
/// units per epoch (1 for epoch-level codes, the frame rate for frames).
#[derive(Debug, Clone)]
pub struct Track {
    pub dim: usize,
    pub per_epoch: usize,
    pub data: Vec<f64>,
}

impl Track {
    pub fn units(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn unit(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends units `[per_epoch*epoch - before, per_epoch*epoch + after)`,
    /// replicating the first/last unit past the edges.
    pub fn window_into(&self, epoch: usize, before: usize, after: usize, out: &mut Vec<f64>) {
        let last = self.units() as isize - 1;
        let center = (self.per_epoch * epoch) as isize;
        for u in (center - before as isize)..(center + after as isize) {
            out.extend_from_slice(self.unit(u.clamp(0, last) as usize));
        }
    }

    /// Unit indices touched by a window, clamped like `window_into`.
    pub fn window_units(&self, epoch: usize, before: usize, after: usize) -> impl Iterator<Item = usize> {
        let last = self.units() as isize - 1;
        let center = (self.per_epoch * epoch) as isize;
        ((center - before as isize)..(center + after as isize)).map(move |u| u.clamp(0, last) as usize)
    }

    pub fn map_rows(&self, out_dim: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Track> {
        let mut data = Vec::with_capacity(self.units() * out_dim);
        for i in 0..self.units() {
            let y = f(self.unit(i))?;
            debug_assert_eq!(y.len(), out_dim);
            data.extend(y);
        }
        Ok(Track {
            dim: out_dim,
            per_epoch: self.per_epoch,
            data,
        })
    }
}

/// Score-grid rows: one `2 * channels` vector per epoch.
/// Per-channel two-class posteriors `(p, 1 - p)`, `p = σ(llr / temperature)`,
/// one 2×channels row per epoch. Raw log-likelihoods are dominated by signal
/// energy shared by both models; the ratio carries the class evidence.
pub fn grid_track(grid: &EpochScoreGrid, temperature: f64) -> Track {
    let data = grid
        .values()
        .chunks(2)
        .flat_map(|p| {
            let z = (p[0] - p[1]) / temperature;
            let s = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            [s, 1.0 - s]
        })
        .collect();
    Track {
        dim: grid.width(),
        per_epoch: 1,
        data,
    }
}

/// Centered supervectors of `n` consecutive grid rows per epoch.
pub fn supervector_track(rows: &Track, n: usize) -> Track {
    let half = n / 2;
    let epochs = rows.units();
    let mut data = Vec::with_capacity(epochs * n * rows.dim);
    for e in 0..epochs {
        rows.window_into(e, half, half + 1, &mut data);
    }
    Track {
        dim: n * rows.dim,
        per_epoch: 1,
        data,
    }
}

/// Frame track with each (channel, dim) vector standardized. With
/// `dims_major` every frame is laid out `[dim][channel]` instead of
/// `[channel][dim]`.
pub fn frame_track(feats: &FeatureSequence, scaler: &Scaler, dims_major: bool) -> Track {
    let (frames, channels, dim) = feats.shape();
    let mut data = feats.values().to_vec();
    scaler.apply(&mut data);
    if dims_major {
        let mut t = vec![0.0; data.len()];
        for f in 0..frames {
            let base = f * channels * dim;
            for c in 0..channels {
                for d in 0..dim {
                    t[base + d * channels + c] = data[base + c * dim + d];
                }
            }
        }
        data = t;
    }
    Track {
        dim: channels * dim,
        per_epoch: feats.frames_per_epoch(),
        data,
    }
}

/// Per-epoch means of standardized frames over `pool` equal sub-blocks of
/// each epoch: `epochs x (pool * channels * dim)`.
pub fn pooled_epoch_track(frames: &Track, epochs: usize, pool: usize) -> Track {
    let fpe = frames.per_epoch;
    let step = fpe / pool;
    let width = frames.dim;
    let last = frames.units() - 1;
    let mut data = Vec::with_capacity(epochs * pool * width);
    for e in 0..epochs {
        for k in 0..pool {
            let start = e * fpe + k * step;
            let stop = (start + step).min(frames.units());
            let mut acc = vec![0.0; width];
            if stop <= start {
                acc.copy_from_slice(frames.unit(last));
            } else {
                for f in start..stop {
                    for (a, v) in acc.iter_mut().zip(frames.unit(f)) {
                        *a += v;
                    }
                }
                let n = (stop - start) as f64;
                acc.iter_mut().for_each(|a| *a /= n);
            }
            data.extend(acc);
        }
    }
    Track {
        dim: pool * width,
        per_epoch: 1,
        data,
    }
}

/// Batch tensor of windows for the given epochs: shape `[n] ++ unit_shape`.
pub fn window_batch(track: &Track, epochs: &[usize], before: usize, after: usize, unit_shape: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(epochs.len() * (before + after) * track.dim);
    for &e in epochs {
        track.window_into(e, before, after, &mut data);
    }
    let mut shape = vec![epochs.len()];
    shape.extend_from_slice(unit_shape);
    Ok(Tensor::from_vec(&shape, data)?)
}

/// Two-way targets: seizure `[1, 0]`, background `[0, 1]`.
pub fn targets(refs: &[EpochRef]) -> Tensor {
    let data = refs
        .iter()
        .flat_map(|r| if r.seiz { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    Tensor::from_vec(&[refs.len(), 2], data).expect("shape")
}

/// Seizure posterior from a two-way output row.
pub fn two_way_posterior(seiz: f64, bckg: f64) -> f64 {
    let total = seiz + bckg;
    if total > 1e-12 {
        (seiz / total).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn track_of(labels: &[u8]) -> EpochLabelTrack {
        EpochLabelTrack::new(
            labels
                .iter()
                .map(|&l| if l == 1 { Label::Seiz } else { Label::Bckg })
                .collect(),
        )
    }

    #[test]
    fn balanced_sample_at_three_percent_prevalence() {
        // 30 seizure epochs among 1000.
        let mut labels = vec![0u8; 1000];
        for l in labels.iter_mut().skip(500).take(30) {
            *l = 1;
        }
        let tracks = vec![track_of(&labels)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = balanced_sample(&tracks, 1.0, &mut rng).unwrap();
        let frac = s.iter().filter(|r| r.seiz).count() as f64 / s.len() as f64;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
        // no duplicates
        let mut d = s.clone();
        d.dedup();
        assert_eq!(d.len(), s.len());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(balanced_sample(&tracks, 1.0, &mut rng).unwrap(), s);
    }

    #[test]
    fn single_class_corpus_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(balanced_sample(&[track_of(&[0, 0, 0])], 1.0, &mut rng).is_err());
        assert!(balanced_sample(&[track_of(&[1, 1])], 1.0, &mut rng).is_err());
    }

    #[test]
    fn windows_replicate_edges() {
        let t = Track {
            dim: 1,
            per_epoch: 1,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        let mut out = Vec::new();
        t.window_into(0, 2, 3, &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        out.clear();
        t.window_into(3, 1, 2, &mut out);
        assert_eq!(out, vec![2.0, 3.0, 3.0]);
        let s = supervector_track(&t, 3);
        assert_eq!(s.unit(0), &[0.0, 0.0, 1.0]);
        assert_eq!(s.unit(3), &[2.0, 3.0, 3.0]);
    }

    #[test]
    fn scalers_round_trip_and_normalize() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 3.0 * i as f64 + 1.0]).collect();
        let s = Scaler::standard(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        let mut all: Vec<f64> = rows.concat();
        s.apply(&mut all);
        let mean: f64 = all.iter().step_by(2).sum::<f64>() / 50.0;
        let var: f64 = all.iter().step_by(2).map(|v| v * v).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let m = Scaler::min_max(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        let mut x = vec![100.0, -100.0];
        m.apply(&mut x);
        assert_eq!(x, vec![1.0, 0.0]);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(Scaler::read_from(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn pooled_epochs_average_frames() {
        // 2 epochs of 4 frames, width 1; second epoch truncated to 3 frames.
        let frames = Track {
            dim: 1,
            per_epoch: 4,
            data: vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0],
        };
        let p = pooled_epoch_track(&frames, 2, 1);
        assert_eq!(p.data, vec![2.5, 20.0]);
        let p = pooled_epoch_track(&frames, 2, 2);
        assert_eq!(p.data, vec![1.5, 3.5, 15.0, 30.0]);
        let p = pooled_epoch_track(&frames, 2, 4);
        assert_eq!(p.data, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 30.0]);
    }
}
