//! Records, annotations, epoch labels and their on-disk formats.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{CoreError, Result};

pub const SIGNAL_MAGIC: &[u8; 4] = b"NDET";
pub const SIGNAL_VERSION: u16 = 1;
pub const EPOCH_S: f64 = 1.0;

/// Standard 10-20 bipolar montage used by the synthetic corpus.
pub const STANDARD_CHANNELS: [&str; 22] = [
    "FP1-F7", "F7-T3", "T3-T5", "T5-O1", "FP2-F8", "F8-T4", "T4-T6", "T6-O2", "A1-T3", "T3-C3",
    "C3-CZ", "CZ-C4", "C4-T4", "T4-A2", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4",
    "C4-P4", "P4-O2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Seiz,
    Bckg,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Seiz => "seiz",
            Label::Bckg => "bckg",
        }
    }

    pub fn is_seiz(self) -> bool {
        self == Label::Seiz
    }

    pub fn inverted(self) -> Label {
        match self {
            Label::Seiz => Label::Bckg,
            Label::Bckg => Label::Seiz,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Label> {
        match s.trim() {
            "seiz" => Ok(Label::Seiz),
            "bckg" => Ok(Label::Bckg),
            other => Err(CoreError::InvalidAnnotations(format!("unknown label `{other}`"))),
        }
    }
}

/// A multichannel recording stored as raw 16-bit samples plus a calibration
/// factor (microvolts per count).
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecord {
    channel_labels: Vec<String>,
    sample_rate_hz: u32,
    calibration: f64,
    samples: Vec<Vec<i16>>,
}

impl EegRecord {
    pub fn new(
        channel_labels: Vec<String>,
        sample_rate_hz: u32,
        calibration: f64,
        samples: Vec<Vec<i16>>,
    ) -> Result<EegRecord> {
        if samples.is_empty() || channel_labels.is_empty() {
            return Err(CoreError::InvalidRecord("record has no channels".into()));
        }
        if channel_labels.len() != samples.len() {
            return Err(CoreError::InvalidRecord(format!(
                "{} channel labels for {} channels",
                channel_labels.len(),
                samples.len()
            )));
        }
        if channel_labels.len() > u16::MAX as usize {
            return Err(CoreError::InvalidRecord("too many channels".into()));
        }
        if sample_rate_hz == 0 {
            return Err(CoreError::InvalidRecord("sample rate must be positive".into()));
        }
        if !(calibration.is_finite() && calibration > 0.0) {
            return Err(CoreError::InvalidRecord(format!(
                "calibration must be positive and finite, got {calibration}"
            )));
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(CoreError::InvalidRecord("record has no samples".into()));
        }
        if let Some(c) = samples.iter().position(|ch| ch.len() != n) {
            return Err(CoreError::InvalidRecord(format!(
                "channel {c} has {} samples, channel 0 has {n}",
                samples[c].len()
            )));
        }
        Ok(EegRecord {
            channel_labels,
            sample_rate_hz,
            calibration,
            samples,
        })
    }

    /// Quantizes microvolt data with the given calibration; fails if any
    /// sample does not fit in 16 bits.
    pub fn from_microvolts(
        channel_labels: Vec<String>,
        sample_rate_hz: u32,
        calibration: f64,
        data: &[Vec<f64>],
    ) -> Result<EegRecord> {
        if !(calibration.is_finite() && calibration > 0.0) {
            return Err(CoreError::InvalidRecord(format!(
                "calibration must be positive and finite, got {calibration}"
            )));
        }
        let mut samples = Vec::with_capacity(data.len());
        for (c, ch) in data.iter().enumerate() {
            let mut raw = Vec::with_capacity(ch.len());
            for (i, &v) in ch.iter().enumerate() {
                let q = (v / calibration).round();
                if !q.is_finite() || q < i16::MIN as f64 || q > i16::MAX as f64 {
                    return Err(CoreError::Range {
                        channel: c,
                        index: i,
                        value: v,
                    });
                }
                raw.push(q as i16);
            }
            samples.push(raw);
        }
        EegRecord::new(channel_labels, sample_rate_hz, calibration, samples)
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate_hz as f64
    }

    pub fn raw_channel(&self, c: usize) -> &[i16] {
        &self.samples[c]
    }

    pub fn raw(&self) -> &[Vec<i16>] {
        &self.samples
    }

    pub fn channel_microvolts(&self, c: usize) -> Vec<f64> {
        self.samples[c]
            .iter()
            .map(|&s| s as f64 * self.calibration)
            .collect()
    }

    /// Same record with channels reordered: output channel i is input channel `order[i]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<EegRecord> {
        if order.len() != self.num_channels() {
            return Err(CoreError::InvalidRecord("permutation length mismatch".into()));
        }
        EegRecord::new(
            order.iter().map(|&c| self.channel_labels[c].clone()).collect(),
            self.sample_rate_hz,
            self.calibration,
            order.iter().map(|&c| self.samples[c].clone()).collect(),
        )
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SIGNAL_MAGIC)?;
        w.write_u16::<LittleEndian>(SIGNAL_VERSION)?;
        w.write_u16::<LittleEndian>(self.num_channels() as u16)?;
        w.write_u32::<LittleEndian>(self.sample_rate_hz)?;
        w.write_u64::<LittleEndian>(self.num_samples() as u64)?;
        w.write_f64::<LittleEndian>(self.calibration)?;
        for label in &self.channel_labels {
            let bytes = label.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(CoreError::InvalidRecord("channel label too long".into()));
            }
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
        }
        let mut buf = Vec::with_capacity(self.num_samples() * 2);
        for ch in &self.samples {
            buf.clear();
            for &s in ch {
                buf.extend_from_slice(&s.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

pub fn save_record(record: &EegRecord, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| CoreError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    record.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_record(path: &Path) -> Result<EegRecord> {
    let unreadable = |source| CoreError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(unreadable)?;
    parse_record(&bytes, path)
}

fn parse_record(bytes: &[u8], path: &Path) -> Result<EegRecord> {
    let malformed = |detail: &str| CoreError::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| malformed("truncated magic"))?;
    if &magic != SIGNAL_MAGIC {
        return Err(malformed("bad magic bytes"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(|_| malformed("truncated header"))?;
    if version != SIGNAL_VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let channels = r.read_u16::<LittleEndian>().map_err(|_| malformed("truncated header"))? as usize;
    let rate = r.read_u32::<LittleEndian>().map_err(|_| malformed("truncated header"))?;
    let n = r.read_u64::<LittleEndian>().map_err(|_| malformed("truncated header"))?;
    let calibration = r.read_f64::<LittleEndian>().map_err(|_| malformed("truncated header"))?;
    if channels == 0 {
        return Err(malformed("zero channels"));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    if !(calibration.is_finite() && calibration > 0.0) {
        return Err(malformed("non-positive calibration"));
    }
    if n == 0 || n > (bytes.len() as u64) {
        return Err(malformed(&format!("implausible sample count {n}")));
    }
    let n = n as usize;
    let mut labels = Vec::with_capacity(channels);
    for _ in 0..channels {
        let len = r.read_u16::<LittleEndian>().map_err(|_| malformed("truncated channel labels"))? as usize;
        if r.len() < len {
            return Err(malformed("truncated channel labels"));
        }
        let (label, rest) = r.split_at(len);
        labels.push(
            String::from_utf8(label.to_vec()).map_err(|_| malformed("channel label is not UTF-8"))?,
        );
        r = rest;
    }
    let stream = n * 2;
    if r.len() != channels * stream {
        if r.len() % stream == 0 {
            return Err(CoreError::ChannelMismatch {
                path: path.to_path_buf(),
                declared: channels,
                found: r.len() / stream,
            });
        }
        return Err(CoreError::SampleCountMismatch {
            path: path.to_path_buf(),
            expected: channels * stream,
            found: r.len(),
        });
    }
    let samples = r
        .chunks_exact(stream)
        .map(|ch| {
            ch.chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect()
        })
        .collect();
    EegRecord::new(labels, rate, calibration, samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub start_s: f64,
    pub stop_s: f64,
    pub label: Label,
}

/// Sorted, non-overlapping labeled segments of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    events: Vec<Event>,
    record_duration_s: f64,
}

impl AnnotationSet {
    pub fn new(events: Vec<Event>, record_duration_s: f64) -> Result<AnnotationSet> {
        if !(record_duration_s.is_finite() && record_duration_s > 0.0) {
            return Err(CoreError::InvalidAnnotations(format!(
                "record duration must be positive, got {record_duration_s}"
            )));
        }
        let tol = 1e-9;
        for (i, e) in events.iter().enumerate() {
            if !(e.start_s.is_finite() && e.stop_s.is_finite() && e.start_s < e.stop_s) {
                return Err(CoreError::InvalidAnnotations(format!(
                    "event {i} has start {} not before stop {}",
                    e.start_s, e.stop_s
                )));
            }
            if e.start_s < -tol || e.stop_s > record_duration_s + tol {
                return Err(CoreError::InvalidAnnotations(format!(
                    "event {i} [{}, {}) lies outside [0, {record_duration_s}]",
                    e.start_s, e.stop_s
                )));
            }
            if i > 0 && events[i - 1].stop_s > e.start_s + tol {
                return Err(CoreError::InvalidAnnotations(format!(
                    "event {i} overlaps or precedes event {}",
                    i - 1
                )));
            }
        }
        Ok(AnnotationSet {
            events,
            record_duration_s,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn record_duration_s(&self) -> f64 {
        self.record_duration_s
    }

    pub fn seizure_duration_s(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| e.label.is_seiz())
            .map(|e| e.stop_s - e.start_s)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("start_s,stop_s,label\n");
        for e in &self.events {
            s.push_str(&format!("{:.6},{:.6},{}\n", e.start_s, e.stop_s, e.label));
        }
        s
    }

    /// Parses the CSV form. Without an explicit duration the last event's
    /// stop time is taken as the record duration.
    pub fn from_csv(text: &str, record_duration_s: Option<f64>) -> Result<AnnotationSet> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "start_s,stop_s,label" => {}
            _ => {
                return Err(CoreError::InvalidAnnotations(
                    "missing header `start_s,stop_s,label`".into(),
                ))
            }
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(CoreError::InvalidAnnotations(format!(
                    "row {}: expected 3 fields",
                    i + 1
                )));
            }
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    CoreError::InvalidAnnotations(format!("row {}: bad number `{s}`", i + 1))
                })
            };
            events.push(Event {
                start_s: num(fields[0])?,
                stop_s: num(fields[1])?,
                label: fields[2].parse()?,
            });
        }
        let duration = match record_duration_s {
            Some(d) => d,
            None => events.last().map(|e| e.stop_s).ok_or_else(|| {
                CoreError::InvalidAnnotations("no events and no record duration".into())
            })?,
        };
        AnnotationSet::new(events, duration)
    }
}

pub fn save_annotations(ann: &AnnotationSet, path: &Path) -> Result<()> {
    std::fs::write(path, ann.to_csv())?;
    Ok(())
}

pub fn load_annotations(path: &Path, record_duration_s: Option<f64>) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|source| CoreError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    AnnotationSet::from_csv(&text, record_duration_s)
}

/// One label per whole 1-second epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochLabelTrack {
    labels: Vec<Label>,
}

impl EpochLabelTrack {
    pub fn new(labels: Vec<Label>) -> EpochLabelTrack {
        EpochLabelTrack { labels }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seiz_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_seiz()).count()
    }

    pub fn inverted(&self) -> EpochLabelTrack {
        EpochLabelTrack::new(self.labels.iter().map(|l| l.inverted()).collect())
    }
}

/// Number of whole epochs in a record of the given duration.
pub fn epoch_count(duration_s: f64) -> usize {
    (duration_s / EPOCH_S + 1e-9).floor() as usize
}

/// Majority rule: an epoch is seiz when seizure coverage is at least half the
/// epoch (exact ties go to seiz).
pub fn annotations_to_epoch_labels(ann: &AnnotationSet) -> EpochLabelTrack {
    let n = epoch_count(ann.record_duration_s());
    let mut coverage = vec![0.0f64; n];
    for e in ann.events().iter().filter(|e| e.label.is_seiz()) {
        let first = (e.start_s / EPOCH_S).floor().max(0.0) as usize;
        let mut k = first;
        while k < n && (k as f64) * EPOCH_S < e.stop_s {
            let lo = e.start_s.max(k as f64 * EPOCH_S);
            let hi = e.stop_s.min((k + 1) as f64 * EPOCH_S);
            if hi > lo {
                coverage[k] += hi - lo;
            }
            k += 1;
        }
    }
    EpochLabelTrack::new(
        coverage
            .into_iter()
            .map(|c| {
                if c >= 0.5 * EPOCH_S - 1e-9 {
                    Label::Seiz
                } else {
                    Label::Bckg
                }
            })
            .collect(),
    )
}
