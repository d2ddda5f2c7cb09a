//! Synthetic labeled EEG: 1/f background, multichannel 3 Hz spike-and-wave
//! seizures, and focal high-amplitude artifacts labeled as background.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{join, Reader, Section};
use crate::error::{CoreError, Result};
use crate::signal::{AnnotationSet, EegRecord, Event, Label, STANDARD_CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub channels: usize,
    /// Target fraction of the record covered by seizures; ignored when
    /// `seizure_count` is set.
    pub seizure_fraction: f64,
    pub seizure_count: Option<usize>,
    pub seizure_min_s: f64,
    pub seizure_max_s: f64,
    /// Seizures involve a random subset of at least this many channels.
    pub seizure_min_channels: usize,
    pub seizure_hz: f64,
    /// Seizure amplitude relative to the background RMS, drawn per event.
    pub seizure_snr: (f64, f64),
    pub artifacts_per_min: f64,
    pub artifact_min_s: f64,
    pub artifact_max_s: f64,
    pub artifact_max_channels: usize,
    pub artifact_snr: (f64, f64),
    pub background_uv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 600.0,
            sample_rate_hz: 250,
            channels: 22,
            seizure_fraction: 0.1,
            seizure_count: None,
            seizure_min_s: 10.0,
            seizure_max_s: 30.0,
            seizure_min_channels: 8,
            seizure_hz: 3.0,
            seizure_snr: (2.5, 5.0),
            artifacts_per_min: 2.0,
            artifact_min_s: 2.0,
            artifact_max_s: 6.0,
            artifact_max_channels: 3,
            artifact_snr: (4.0, 8.0),
            background_uv: 20.0,
        }
    }
}

impl SynthConfig {
    pub fn to_section(&self, name: &str) -> Section {
        let mut s = Section::new(name);
        s.set("duration_s", self.duration_s);
        s.set("sample_rate_hz", self.sample_rate_hz);
        s.set("channels", self.channels);
        s.set("seizure_fraction", self.seizure_fraction);
        s.set("seizure_count", self.seizure_count.map_or("none".to_string(), |c| c.to_string()));
        s.set("seizure_min_s", self.seizure_min_s);
        s.set("seizure_max_s", self.seizure_max_s);
        s.set("seizure_min_channels", self.seizure_min_channels);
        s.set("seizure_hz", self.seizure_hz);
        s.set("seizure_snr", join(&[self.seizure_snr.0, self.seizure_snr.1]));
        s.set("artifacts_per_min", self.artifacts_per_min);
        s.set("artifact_min_s", self.artifact_min_s);
        s.set("artifact_max_s", self.artifact_max_s);
        s.set("artifact_max_channels", self.artifact_max_channels);
        s.set("artifact_snr", join(&[self.artifact_snr.0, self.artifact_snr.1]));
        s.set("background_uv", self.background_uv);
        s
    }

    /// Reads a section over the defaults; unknown keys are an error.
    pub fn from_section(section: Option<&Section>, name: &str) -> Result<SynthConfig> {
        let mut r = Reader::new(section, name);
        let d = SynthConfig::default();
        let pair = |r: &mut Reader, key: &str, def: (f64, f64)| -> Result<(f64, f64)> {
            let v = r.get_list(key, vec![def.0, def.1])?;
            match v[..] {
                [lo, hi] => Ok((lo, hi)),
                _ => Err(CoreError::Config(format!("[{name}] {key}: expected `low, high`"))),
            }
        };
        let cfg = SynthConfig {
            duration_s: r.get("duration_s", d.duration_s)?,
            sample_rate_hz: r.get("sample_rate_hz", d.sample_rate_hz)?,
            channels: r.get("channels", d.channels)?,
            seizure_fraction: r.get("seizure_fraction", d.seizure_fraction)?,
            seizure_count: r.get_opt("seizure_count")?,
            seizure_min_s: r.get("seizure_min_s", d.seizure_min_s)?,
            seizure_max_s: r.get("seizure_max_s", d.seizure_max_s)?,
            seizure_min_channels: r.get("seizure_min_channels", d.seizure_min_channels)?,
            seizure_hz: r.get("seizure_hz", d.seizure_hz)?,
            seizure_snr: pair(&mut r, "seizure_snr", d.seizure_snr)?,
            artifacts_per_min: r.get("artifacts_per_min", d.artifacts_per_min)?,
            artifact_min_s: r.get("artifact_min_s", d.artifact_min_s)?,
            artifact_max_s: r.get("artifact_max_s", d.artifact_max_s)?,
            artifact_max_channels: r.get("artifact_max_channels", d.artifact_max_channels)?,
            artifact_snr: pair(&mut r, "artifact_snr", d.artifact_snr)?,
            background_uv: r.get("background_uv", d.background_uv)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if self.sample_rate_hz == 0 || self.channels == 0 {
            return bad("sample rate and channel count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.seizure_fraction) {
            return bad(format!(
                "seizure fraction must lie in [0, 1], got {}",
                self.seizure_fraction
            ));
        }
        if !(self.seizure_min_s > 0.0 && self.seizure_min_s <= self.seizure_max_s) {
            return bad("seizure length range is empty".into());
        }
        if !(self.artifact_min_s > 0.0 && self.artifact_min_s <= self.artifact_max_s) {
            return bad("artifact length range is empty".into());
        }
        if self.artifacts_per_min < 0.0 || self.background_uv <= 0.0 || self.seizure_hz <= 0.0 {
            return bad("artifact rate, background level and seizure frequency must be positive".into());
        }
        if self.artifact_max_channels == 0 {
            return bad("artifacts need at least one channel".into());
        }
        for (lo, hi) in [self.seizure_snr, self.artifact_snr] {
            if !(lo >= 0.0 && lo <= hi) {
                return bad(format!("invalid amplitude range ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    /// Sharp rhythmic transients, spike-like on a few electrodes.
    SpikeTrain,
    /// Slow large deflections, as from eye movement.
    Slow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactEvent {
    pub start_s: f64,
    pub stop_s: f64,
    pub channels: Vec<usize>,
    pub kind: ArtifactKind,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub record: EegRecord,
    pub annotations: AnnotationSet,
    pub artifacts: Vec<ArtifactEvent>,
}

pub fn synthesize_record(cfg: &SynthConfig, seed: u64) -> Result<(EegRecord, AnnotationSet)> {
    let out = synthesize_detailed(cfg, seed)?;
    Ok((out.record, out.annotations))
}

pub fn synthesize_detailed(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    cfg.validate()?;
    let rate = cfg.sample_rate_hz as f64;
    let n = (cfg.duration_s * rate).round() as usize;
    if n == 0 {
        return Err(CoreError::Config("duration is shorter than one sample".into()));
    }
    let duration = n as f64 / rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let seizures = place_seizures(cfg, n, &mut rng)?;
    let artifacts = place_artifacts(cfg, n, &seizures, &mut rng);

    let mut data: Vec<Vec<f64>> = (0..cfg.channels)
        .map(|_| pink_noise(n, rate, cfg.background_uv, &mut rng))
        .collect();

    for &(s0, s1) in &seizures {
        let amp = cfg.background_uv * rng.random_range(cfg.seizure_snr.0..=cfg.seizure_snr.1);
        let f0 = cfg.seizure_hz * rng.random_range(0.9..1.1);
        let lo = cfg.seizure_min_channels.min(cfg.channels);
        let count = rng.random_range(lo..=cfg.channels);
        let involved = sample(&mut rng, cfg.channels, count).into_vec();
        let phase0: f64 = rng.random();
        for c in involved {
            let gain = rng.random_range(0.7..1.0);
            let lag = rng.random_range(0.0..0.02);
            let ch = &mut data[c];
            for (i, v) in ch.iter_mut().enumerate().take(s1).skip(s0) {
                let t = (i - s0) as f64 / rate;
                let env = ramp(t, (s1 - s0) as f64 / rate, 1.0);
                *v += amp * gain * env * spike_wave((phase0 + f0 * (t - lag)).rem_euclid(1.0));
            }
        }
    }

    for a in &artifacts {
        let s0 = (a.start_s * rate).round() as usize;
        let s1 = ((a.stop_s * rate).round() as usize).min(n);
        let len_s = (s1 - s0) as f64 / rate;
        let amp = cfg.background_uv * rng.random_range(cfg.artifact_snr.0..=cfg.artifact_snr.1);
        match a.kind {
            ArtifactKind::SpikeTrain => {
                let f = rng.random_range(2.0..4.5);
                let phase0: f64 = rng.random();
                for &c in &a.channels {
                    let gain = rng.random_range(0.6..1.0);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    for (i, v) in data[c].iter_mut().enumerate().take(s1).skip(s0) {
                        let t = (i - s0) as f64 / rate;
                        let env = ramp(t, len_s, 0.2);
                        *v += sign * amp * gain * env * spike_wave((phase0 + f * t).rem_euclid(1.0));
                    }
                }
            }
            ArtifactKind::Slow => {
                let f = rng.random_range(0.3..1.0);
                for &c in &a.channels {
                    let gain = rng.random_range(0.6..1.0);
                    for (i, v) in data[c].iter_mut().enumerate().take(s1).skip(s0) {
                        let t = (i - s0) as f64 / rate;
                        *v += amp * gain * ramp(t, len_s, 0.3) * (2.0 * PI * f * t).sin();
                    }
                }
            }
        }
    }

    let peak = data
        .iter()
        .flat_map(|ch| ch.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let calibration = (peak / i16::MAX as f64 * 1.01).max(0.1);
    let labels = channel_labels(cfg.channels);
    let record = EegRecord::from_microvolts(labels, cfg.sample_rate_hz, calibration, &data)?;

    let mut events = Vec::new();
    let mut cursor = 0usize;
    for &(s0, s1) in &seizures {
        if s0 > cursor {
            events.push(segment(cursor, s0, rate, Label::Bckg));
        }
        events.push(segment(s0, s1, rate, Label::Seiz));
        cursor = s1;
    }
    if cursor < n {
        events.push(segment(cursor, n, rate, Label::Bckg));
    }
    let annotations = AnnotationSet::new(events, duration)?;
    Ok(SynthOutput {
        record,
        annotations,
        artifacts,
    })
}

pub fn channel_labels(channels: usize) -> Vec<String> {
    (0..channels)
        .map(|c| match STANDARD_CHANNELS.get(c) {
            Some(l) => l.to_string(),
            None => format!("CH{c}"),
        })
        .collect()
}

fn segment(s0: usize, s1: usize, rate: f64, label: Label) -> Event {
    Event {
        start_s: s0 as f64 / rate,
        stop_s: s1 as f64 / rate,
        label,
    }
}

/// One cycle of spike-and-wave on phase in [0, 1): a sharp spike followed by
/// a slow wave of opposite polarity.
pub fn spike_wave(phase: f64) -> f64 {
    let spike = (-((phase - 0.08) / 0.025).powi(2)).exp();
    let wave = if phase > 0.2 {
        (PI * (phase - 0.2) / 0.8).sin().powi(2)
    } else {
        0.0
    };
    spike - 0.6 * wave
}

/// Raised-cosine onset/offset envelope.
fn ramp(t: f64, len: f64, rise: f64) -> f64 {
    let rise = rise.min(len / 2.0);
    if rise <= 0.0 {
        return 1.0;
    }
    let edge = t.min(len - t);
    if edge >= rise {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge.max(0.0) / rise).cos()
    }
}

/// Gaussian noise with a 1/f power spectrum (flattened below 0.5 Hz),
/// scaled to the requested RMS.
fn pink_noise(n: usize, rate: f64, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n < 4 {
        return (0..n)
            .map(|_| rms * rng.sample::<f64, _>(StandardNormal))
            .collect();
    }
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=(n - 1) / 2 {
        let f = (k as f64 * rate / n as f64).max(0.5);
        let g = 1.0 / f.sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spec[k] = Complex::new(re * g, im * g);
        spec[n - k] = spec[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { rms / var.sqrt() } else { 0.0 };
    for v in &mut x {
        *v = (*v - mean) * scale;
    }
    x
}

/// Seizure segments as sample ranges, sorted and separated by gaps.
fn place_seizures(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let rate = cfg.sample_rate_hz as f64;
    let to_samples = |s: f64| (s * rate).round() as usize;
    let mut lengths = Vec::new();
    match cfg.seizure_count {
        Some(k) => {
            for _ in 0..k {
                lengths.push(to_samples(rng.random_range(cfg.seizure_min_s..=cfg.seizure_max_s)).max(1));
            }
        }
        None => {
            let target = to_samples(cfg.seizure_fraction * n as f64 / rate);
            let mut total = 0usize;
            while total < target {
                let mut len = to_samples(rng.random_range(cfg.seizure_min_s..=cfg.seizure_max_s)).max(1);
                let remaining = target - total;
                if len > remaining {
                    len = remaining;
                }
                if remaining - len < to_samples(1.0) {
                    len = remaining;
                }
                lengths.push(len);
                total += len;
            }
        }
    }
    let total: usize = lengths.iter().sum();
    if total > n {
        return Err(CoreError::Config(format!(
            "{} s of seizures do not fit in a {} s record",
            total as f64 / rate,
            n as f64 / rate
        )));
    }
    if lengths.is_empty() {
        return Ok(Vec::new());
    }
    let free = n - total;
    let gaps = lengths.len() + 1;
    let reserve = to_samples(2.0).min(free / gaps);
    let spread = free - reserve * gaps;
    let weights: Vec<f64> = (0..gaps).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(lengths.len());
    let mut cursor = 0usize;
    let mut used = 0usize;
    for (i, len) in lengths.iter().enumerate() {
        let extra = ((spread as f64) * weights[i] / wsum).floor() as usize;
        let extra = extra.min(spread - used);
        used += extra;
        let start = cursor + reserve + extra;
        out.push((start, start + len));
        cursor = start + len;
    }
    debug_assert!(cursor <= n);
    Ok(out)
}

fn place_artifacts(
    cfg: &SynthConfig,
    n: usize,
    seizures: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<ArtifactEvent> {
    let rate = cfg.sample_rate_hz as f64;
    let duration = n as f64 / rate;
    let count = (cfg.artifacts_per_min * duration / 60.0).round() as usize;
    let margin = 2.0;
    let mut placed: Vec<ArtifactEvent> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let len = rng.random_range(cfg.artifact_min_s..=cfg.artifact_max_s);
            if len >= duration {
                break;
            }
            let start = (rng.random_range(0.0..duration - len) * rate).round() / rate;
            let stop = start + len;
            let clashes_seizure = seizures.iter().any(|&(s0, s1)| {
                start < s1 as f64 / rate + margin && stop > s0 as f64 / rate - margin
            });
            let clashes_artifact = placed
                .iter()
                .any(|a| start < a.stop_s + margin && stop > a.start_s - margin);
            if clashes_seizure || clashes_artifact {
                continue;
            }
            let k = rng.random_range(1..=cfg.artifact_max_channels.min(cfg.channels));
            let mut channels = sample(rng, cfg.channels, k).into_vec();
            channels.sort_unstable();
            let kind = if rng.random_bool(0.7) {
                ArtifactKind::SpikeTrain
            } else {
                ArtifactKind::Slow
            };
            placed.push(ArtifactEvent {
                start_s: start,
                stop_s: stop,
                channels,
                kind,
            });
            break;
        }
    }
    placed.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    placed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seizures: Option<usize>) -> SynthConfig {
        SynthConfig {
            duration_s: 60.0,
            seizure_count: seizures,
            seizure_min_s: 10.0,
            seizure_max_s: 10.0,
            ..SynthConfig::default()
        }
    }

    fn bytes(r: &EegRecord) -> Vec<u8> {
        let mut v = Vec::new();
        r.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn deterministic_per_seed() {
        let (r1, a1) = synthesize_record(&short(Some(1)), 7).unwrap();
        let (r2, a2) = synthesize_record(&short(Some(1)), 7).unwrap();
        assert_eq!(bytes(&r1), bytes(&r2));
        assert_eq!(a1.to_csv(), a2.to_csv());
        let (r3, _) = synthesize_record(&short(Some(1)), 8).unwrap();
        assert_ne!(bytes(&r1), bytes(&r3));
        assert_eq!(r1.num_channels(), 22);
        assert_eq!(r1.num_samples(), 15000);
        assert!((a1.seizure_duration_s() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn seizure_fraction_is_respected() {
        let cfg = SynthConfig {
            duration_s: 1000.0,
            seizure_fraction: 0.1,
            ..SynthConfig::default()
        };
        let (_, ann) = synthesize_record(&cfg, 3).unwrap();
        let seiz = ann.seizure_duration_s();
        assert!((90.0..=110.0).contains(&seiz), "{seiz}");
    }

    #[test]
    fn artifact_only_is_all_background() {
        let cfg = SynthConfig {
            duration_s: 120.0,
            seizure_fraction: 0.0,
            artifacts_per_min: 5.0,
            ..SynthConfig::default()
        };
        let out = synthesize_detailed(&cfg, 1).unwrap();
        let ev = out.annotations.events();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].label, Label::Bckg);
        assert_eq!((ev[0].start_s, ev[0].stop_s), (0.0, 120.0));
        assert!(!out.artifacts.is_empty());
        assert!(out.artifacts.iter().all(|a| (1..=3).contains(&a.channels.len())));
    }

    #[test]
    fn annotations_partition_the_record() {
        let out = synthesize_detailed(&SynthConfig::default(), 11).unwrap();
        let ev = out.annotations.events();
        assert_eq!(ev[0].start_s, 0.0);
        assert!((ev.last().unwrap().stop_s - 600.0).abs() < 1e-9);
        for w in ev.windows(2) {
            assert_eq!(w[0].stop_s, w[1].start_s);
            assert_ne!(w[0].label, w[1].label);
        }
        for a in &out.artifacts {
            for e in ev.iter().filter(|e| e.label.is_seiz()) {
                assert!(a.stop_s <= e.start_s || a.start_s >= e.stop_s);
            }
        }
    }

    #[test]
    fn section_round_trip() {
        let cfg = SynthConfig {
            seizure_count: Some(3),
            artifact_snr: (1.5, 2.5),
            ..SynthConfig::default()
        };
        let back = SynthConfig::from_section(Some(&cfg.to_section("synth")), "synth").unwrap();
        assert_eq!(back, cfg);
        let mut s = Section::new("synth");
        s.set("bogus", 1);
        assert!(SynthConfig::from_section(Some(&s), "synth").is_err());
    }

    #[test]
    fn config_errors() {
        let zero = SynthConfig {
            duration_s: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(synthesize_record(&zero, 1), Err(CoreError::Config(_))));
        let over = SynthConfig {
            seizure_fraction: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(synthesize_record(&over, 1), Err(CoreError::Config(_))));
        let all = SynthConfig {
            duration_s: 30.0,
            seizure_fraction: 1.0,
            ..SynthConfig::default()
        };
        let (_, ann) = synthesize_record(&all, 1).unwrap();
        assert!((ann.seizure_duration_s() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn pink_noise_has_falling_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = pink_noise(25000, 250.0, 20.0, &mut rng);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms - 20.0).abs() < 1e-9);
        let mut spec: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(x.len()).process(&mut spec);
        let band = |lo: f64, hi: f64| {
            let (a, b) = ((lo * 100.0) as usize, (hi * 100.0) as usize);
            spec[a..b].iter().map(|c| c.norm_sqr()).sum::<f64>() / (b - a) as f64
        };
        let ratio = band(2.0, 4.0) / band(20.0, 40.0);
        assert!((5.0..20.0).contains(&ratio), "{ratio}");
    }
}
