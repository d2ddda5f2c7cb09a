//! Per-channel LFCC features with regression deltas.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::binio;
use crate::error::{CoreError, Result};
use crate::signal::EegRecord;

const FEATURE_MAGIC: &[u8; 4] = b"NFEA";
const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub frame_s: f64,
    pub window_s: f64,
    pub num_filters: usize,
    /// Log energy plus `base_dim - 1` cepstral coefficients.
    pub base_dim: usize,
    /// Base + first deltas of all base features + second deltas of the
    /// first `total_dim - 2 * base_dim` base features.
    pub total_dim: usize,
    pub preemphasis: f64,
    pub energy_floor: f64,
    pub delta_halfwidth: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_s: 0.1,
            window_s: 0.2,
            num_filters: 24,
            base_dim: 9,
            total_dim: 26,
            preemphasis: 0.97,
            energy_floor: 1e-10,
            delta_halfwidth: 2,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(format!("features: {m}")));
        if !(self.frame_s > 0.0 && self.window_s >= self.frame_s) {
            return bad("need 0 < frame_s <= window_s");
        }
        if self.base_dim < 2 || self.num_filters < self.base_dim {
            return bad("need num_filters >= base_dim >= 2");
        }
        if self.total_dim < 2 * self.base_dim || self.total_dim > 3 * self.base_dim {
            return bad("total_dim must lie in [2 * base_dim, 3 * base_dim]");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        if !(self.energy_floor > 0.0) {
            return bad("energy floor must be positive");
        }
        if self.delta_halfwidth == 0 {
            return bad("delta halfwidth must be at least 1");
        }
        Ok(())
    }

    pub fn accel_dims(&self) -> usize {
        self.total_dim - 2 * self.base_dim
    }

    pub fn frames_per_second(&self) -> usize {
        (1.0 / self.frame_s).round() as usize
    }

    pub fn window_samples(&self, rate: u32) -> Result<usize> {
        whole_samples(self.window_s, rate, "window")
    }

    pub fn hop_samples(&self, rate: u32) -> Result<usize> {
        whole_samples(self.frame_s, rate, "frame")
    }

    /// Frame count for a record with `n` samples; zero if shorter than a window.
    pub fn frame_count(&self, n: usize, rate: u32) -> Result<usize> {
        let w = self.window_samples(rate)?;
        let h = self.hop_samples(rate)?;
        Ok(if n < w { 0 } else { (n - w) / h + 1 })
    }
}

fn whole_samples(seconds: f64, rate: u32, what: &str) -> Result<usize> {
    let exact = seconds * rate as f64;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > 1e-6 {
        return Err(CoreError::Config(format!(
            "{what} of {seconds} s is not a whole number of samples at {rate} Hz"
        )));
    }
    Ok(n as usize)
}

/// Splits every channel into overlapping analysis windows (microvolts).
pub fn frame_signal(record: &EegRecord, cfg: &FeatureConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.validate()?;
    let rate = record.sample_rate_hz();
    let w = cfg.window_samples(rate)?;
    let h = cfg.hop_samples(rate)?;
    let frames = cfg.frame_count(record.num_samples(), rate)?;
    if frames == 0 {
        return Err(CoreError::Data(format!(
            "record of {} s is shorter than one {} s window",
            record.duration_s(),
            cfg.window_s
        )));
    }
    Ok((0..record.num_channels())
        .map(|c| {
            let x = record.channel_microvolts(c);
            (0..frames).map(|t| x[t * h..t * h + w].to_vec()).collect()
        })
        .collect())
}

/// Reusable LFCC computation for one window length and sample rate.
pub struct LfccExtractor {
    cfg: FeatureConfig,
    len: usize,
    hamming: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// Per filter: (bin, weight) pairs with non-zero weight.
    filters: Vec<Vec<(usize, f64)>>,
    /// (base_dim - 1) × num_filters DCT-II basis, orthonormal scaling.
    dct: Vec<Vec<f64>>,
    buf: Vec<Complex<f64>>,
}

impl LfccExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<LfccExtractor> {
        cfg.validate()?;
        let len = cfg.window_samples(sample_rate_hz)?;
        if len < 2 {
            return Err(CoreError::Config("window must hold at least 2 samples".into()));
        }
        let hamming = (0..len)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
            .collect();
        let rate = sample_rate_hz as f64;
        let nyquist = rate / 2.0;
        let m = cfg.num_filters;
        let edge = |i: usize| i as f64 * nyquist / (m + 1) as f64;
        let bins = len / 2 + 1;
        let filters = (0..m)
            .map(|j| {
                let (lo, mid, hi) = (edge(j), edge(j + 1), edge(j + 2));
                (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * rate / len as f64;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();
        let scale = (2.0 / m as f64).sqrt();
        let dct = (1..cfg.base_dim)
            .map(|k| {
                (0..m)
                    .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos())
                    .collect()
            })
            .collect();
        Ok(LfccExtractor {
            cfg: cfg.clone(),
            len,
            hamming,
            fft: FftPlanner::new().plan_fft_forward(len),
            filters,
            dct,
            buf: vec![Complex::new(0.0, 0.0); len],
        })
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    fn check(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.len {
            return Err(CoreError::Dimension {
                context: "lfcc window",
                expected: self.len,
                actual: window.len(),
            });
        }
        Ok(())
    }

    /// Linear-filterbank energies (unfloored) of the preemphasized,
    /// Hamming-windowed frame.
    pub fn filterbank_energies(&mut self, window: &[f64]) -> Result<Vec<f64>> {
        self.check(window)?;
        let a = self.cfg.preemphasis;
        for i in 0..self.len {
            let prev = if i == 0 { 0.0 } else { window[i - 1] };
            self.buf[i] = Complex::new((window[i] - a * prev) * self.hamming[i], 0.0);
        }
        self.fft.process(&mut self.buf);
        Ok(self
            .filters
            .iter()
            .map(|f| f.iter().map(|&(k, w)| w * self.buf[k].norm_sqr()).sum())
            .collect())
    }

    /// Base vector: [ln frame energy, cepstra 1..base_dim-1].
    pub fn base(&mut self, window: &[f64], out: &mut [f64]) -> Result<()> {
        let floor = self.cfg.energy_floor;
        let energy: f64 = window.iter().map(|v| v * v).sum();
        let log_fb: Vec<f64> = self
            .filterbank_energies(window)?
            .into_iter()
            .map(|e| e.max(floor).ln())
            .collect();
        out[0] = energy.max(floor).ln();
        for (o, basis) in out[1..self.cfg.base_dim].iter_mut().zip(&self.dct) {
            *o = basis.iter().zip(&log_fb).map(|(b, l)| b * l).sum();
        }
        Ok(())
    }
}

/// Base LFCC vector of a single window.
pub fn lfcc_frame(window: &[f64], cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<Vec<f64>> {
    let mut ex = LfccExtractor::new(cfg, sample_rate_hz)?;
    let mut out = vec![0.0; cfg.base_dim];
    ex.base(window, &mut out)?;
    Ok(out)
}

/// Regression deltas with replicated edges:
/// d_t = Σ_n n (c_{t+n} − c_{t−n}) / (2 Σ_n n²).
pub fn regression_delta(x: &[Vec<f64>], halfwidth: usize) -> Vec<Vec<f64>> {
    let t_len = x.len();
    let norm = 2.0 * (1..=halfwidth).map(|n| (n * n) as f64).sum::<f64>();
    (0..t_len)
        .map(|t| {
            let dim = x[t].len();
            (0..dim)
                .map(|d| {
                    let mut acc = 0.0;
                    for n in 1..=halfwidth {
                        let fwd = (t + n).min(t_len - 1);
                        let back = t.saturating_sub(n);
                        acc += n as f64 * (x[fwd][d] - x[back][d]);
                    }
                    acc / norm
                })
                .collect()
        })
        .collect()
}

/// Appends first deltas of every base column and second deltas of the first
/// `accel_dims` columns.
pub fn append_derivatives(base: &[Vec<f64>], cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let need = 2 * cfg.delta_halfwidth + 1;
    if base.len() < need {
        return Err(CoreError::Data(format!(
            "need at least {need} frames for derivatives, got {}",
            base.len()
        )));
    }
    if let Some(row) = base.iter().find(|r| r.len() != cfg.base_dim) {
        return Err(CoreError::Dimension {
            context: "base features",
            expected: cfg.base_dim,
            actual: row.len(),
        });
    }
    let delta = regression_delta(base, cfg.delta_halfwidth);
    let head: Vec<Vec<f64>> = delta.iter().map(|r| r[..cfg.accel_dims()].to_vec()).collect();
    let accel = regression_delta(&head, cfg.delta_halfwidth);
    Ok((0..base.len())
        .map(|t| {
            let mut row = Vec::with_capacity(cfg.total_dim);
            row.extend_from_slice(&base[t]);
            row.extend_from_slice(&delta[t]);
            row.extend_from_slice(&accel[t]);
            row
        })
        .collect())
}

/// Features laid out frame-major: value (t, c, d) at `(t * channels + c) * dim + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    values: Vec<f64>,
    frames: usize,
    channels: usize,
    dim: usize,
    frame_period_s: f64,
    window_s: f64,
    channel_labels: Vec<String>,
}

impl FeatureSequence {
    pub fn new(
        values: Vec<f64>,
        frames: usize,
        channel_labels: Vec<String>,
        dim: usize,
        frame_period_s: f64,
        window_s: f64,
    ) -> Result<FeatureSequence> {
        let channels = channel_labels.len();
        if frames == 0 || channels == 0 || dim == 0 {
            return Err(CoreError::Data("empty feature sequence".into()));
        }
        if !(frame_period_s > 0.0 && window_s >= frame_period_s) {
            return Err(CoreError::Data(format!(
                "bad frame period {frame_period_s} / window {window_s}"
            )));
        }
        if values.len() != frames * channels * dim {
            return Err(CoreError::Dimension {
                context: "feature values",
                expected: frames * channels * dim,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Numeric(format!("non-finite feature value at index {i}")));
        }
        Ok(FeatureSequence {
            values,
            frames,
            channels,
            dim,
            frame_period_s,
            window_s,
            channel_labels,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.channels, self.dim)
    }

    pub fn frame_period_s(&self) -> f64 {
        self.frame_period_s
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> &[f64] {
        let o = (t * self.channels + c) * self.dim;
        &self.values[o..o + self.dim]
    }

    /// All channels of frame t, channel-major.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.channels * self.dim;
        &self.values[t * w..(t + 1) * w]
    }

    /// Frames [start, stop) of one channel, concatenated.
    pub fn channel_span(&self, c: usize, start: usize, stop: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity((stop - start) * self.dim);
        for t in start..stop {
            out.extend_from_slice(self.get(t, c));
        }
        out
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    /// Seconds covered by the frames: (frames − 1)·period + window.
    pub fn coverage_s(&self) -> f64 {
        (self.frames - 1) as f64 * self.frame_period_s + self.window_s
    }

    /// Whole 1 s epochs covered by the frames.
    pub fn epoch_count(&self) -> usize {
        crate::signal::epoch_count(self.coverage_s())
    }

    pub fn frames_per_epoch(&self) -> usize {
        (crate::signal::EPOCH_S / self.frame_period_s).round() as usize
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_header(w, FEATURE_MAGIC, FEATURE_VERSION)?;
        w.write_u64::<LittleEndian>(self.frames as u64)?;
        w.write_u32::<LittleEndian>(self.channels as u32)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_f64::<LittleEndian>(self.frame_period_s)?;
        w.write_f64::<LittleEndian>(self.window_s)?;
        for l in &self.channel_labels {
            binio::write_str(w, l)?;
        }
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<FeatureSequence> {
        binio::read_header(r, FEATURE_MAGIC, FEATURE_VERSION)?;
        let frames = r.read_u64::<LittleEndian>()? as usize;
        let channels = r.read_u32::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let period = r.read_f64::<LittleEndian>()?;
        let window = r.read_f64::<LittleEndian>()?;
        let labels = (0..channels)
            .map(|_| binio::read_str(r))
            .collect::<Result<Vec<_>>>()?;
        let count = frames
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(dim))
            .filter(|&v| v < 1 << 34)
            .ok_or_else(|| CoreError::Data("implausible feature file shape".into()))?;
        let mut values = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        FeatureSequence::new(values, frames, labels, dim, period, window)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FeatureSequence> {
        let f = File::open(path).map_err(|source| CoreError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        FeatureSequence::read_from(&mut BufReader::new(f))
    }

    /// Debug export: one row per (frame, channel).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,channel");
        for d in 0..self.dim {
            s.push_str(&format!(",f{d}"));
        }
        s.push('\n');
        for t in 0..self.frames {
            for c in 0..self.channels {
                s.push_str(&format!("{t},{}", self.channel_labels[c]));
                for v in self.get(t, c) {
                    s.push_str(&format!(",{v:.9e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

pub fn extract_features(record: &EegRecord, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let rate = record.sample_rate_hz();
    let w = cfg.window_samples(rate)?;
    let h = cfg.hop_samples(rate)?;
    let frames = cfg.frame_count(record.num_samples(), rate)?;
    if frames == 0 {
        return Err(CoreError::Data(format!(
            "record of {} s is shorter than one {} s window",
            record.duration_s(),
            cfg.window_s
        )));
    }
    let channels = record.num_channels();
    let dim = cfg.total_dim;
    let mut ex = LfccExtractor::new(cfg, rate)?;
    let mut values = vec![0.0; frames * channels * dim];
    for c in 0..channels {
        let x = record.channel_microvolts(c);
        let mut base = vec![vec![0.0; cfg.base_dim]; frames];
        for (t, row) in base.iter_mut().enumerate() {
            ex.base(&x[t * h..t * h + w], row)?;
        }
        let full = append_derivatives(&base, cfg)?;
        for (t, row) in full.iter().enumerate() {
            let o = (t * channels + c) * dim;
            values[o..o + dim].copy_from_slice(row);
        }
    }
    FeatureSequence::new(
        values,
        frames,
        record.channel_labels().to_vec(),
        dim,
        cfg.frame_s,
        cfg.window_s,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(channels: usize, seconds: f64, seed: u64) -> EegRecord {
        let n = (seconds * 250.0).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..channels)
            .map(|_| (0..n).map(|_| rng.random_range(-100.0..100.0)).collect())
            .collect();
        let labels = (0..channels).map(|c| format!("c{c}")).collect();
        EegRecord::from_microvolts(labels, 250, 0.05, &data).unwrap()
    }

    #[test]
    fn frame_counts() {
        let cfg = FeatureConfig::default();
        let w = frame_signal(&record(2, 10.0, 1), &cfg).unwrap();
        assert_eq!(w[0].len(), 99);
        assert!(w[0].iter().all(|x| x.len() == 50));
        assert_eq!(frame_signal(&record(1, 0.2, 1), &cfg).unwrap()[0].len(), 1);
        assert!(frame_signal(&record(1, 0.19, 1), &cfg).is_err());
    }

    #[test]
    fn zero_window_gives_floor_energy_and_zero_cepstra() {
        let cfg = FeatureConfig::default();
        let v = lfcc_frame(&[0.0; 50], &cfg, 250).unwrap();
        assert_eq!(v[0], cfg.energy_floor.ln());
        for c in &v[1..] {
            assert!(c.abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn scaling_shifts_only_energy() {
        let cfg = FeatureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = lfcc_frame(&x, &cfg, 250).unwrap();
        let b = lfcc_frame(&x2, &cfg, 250).unwrap();
        assert!((b[0] - a[0] - 2.0 * 2f64.ln()).abs() < 1e-9);
        for k in 1..9 {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn tone_lands_in_its_filter() {
        let cfg = FeatureConfig::default();
        let x: Vec<f64> = (0..50)
            .map(|i| (2.0 * PI * 10.0 * i as f64 / 250.0).sin())
            .collect();
        let mut ex = LfccExtractor::new(&cfg, 250).unwrap();
        let e = ex.filterbank_energies(&x).unwrap();
        // Independent DFT of the same preemphasized, windowed frame.
        let n = 50;
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let prev = if i == 0 { 0.0 } else { x[i - 1] };
                (x[i] - 0.97 * prev) * (0.54 - 0.46 * (2.0 * PI * i as f64 / 49.0).cos())
            })
            .collect();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in y.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&power), 2);
        assert_eq!(argmax(&e), 1);
        // Filter centers sit on DFT bins, so each energy is the centre bin's power.
        for (j, ej) in e.iter().enumerate() {
            assert!((ej - power[j + 1]).abs() <= 1e-9 * power[2], "{j}");
        }
    }

    #[test]
    fn derivatives_of_constant_and_ramp() {
        let cfg = FeatureConfig::default();
        let constant = vec![vec![1.5; 9]; 12];
        let d = append_derivatives(&constant, &cfg).unwrap();
        assert!(d.iter().all(|r| r.len() == 26 && r[9..].iter().all(|&v| v == 0.0)));
        let m = 0.7;
        let ramp: Vec<Vec<f64>> = (0..12).map(|t| vec![m * t as f64; 9]).collect();
        let d = append_derivatives(&ramp, &cfg).unwrap();
        for row in &d[2..10] {
            for &v in &row[9..18] {
                assert!((v - m).abs() < 1e-12);
            }
        }
        assert!(append_derivatives(&ramp[..4], &cfg).is_err());
    }

    #[test]
    fn extraction_shape_and_channel_independence() {
        let cfg = FeatureConfig::default();
        let r = record(22, 10.0, 9);
        let f = extract_features(&r, &cfg).unwrap();
        assert_eq!(f.shape(), (99, 22, 26));
        assert_eq!(f.epoch_count(), 10);
        let order: Vec<usize> = (0..22).rev().collect();
        let g = extract_features(&r.permute_channels(&order).unwrap(), &cfg).unwrap();
        for t in [0, 50, 98] {
            for c in 0..22 {
                assert_eq!(f.get(t, order[c]), g.get(t, c));
            }
        }
        assert_eq!(extract_features(&r, &cfg).unwrap(), f);
    }

    #[test]
    fn feature_file_round_trip() {
        let f = extract_features(&record(3, 2.0, 4), &FeatureConfig::default()).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(FeatureSequence::read_from(&mut buf.as_slice()).unwrap(), f);
        let csv = f.to_csv();
        assert_eq!(csv.lines().count(), 1 + 19 * 3);
    }
}
