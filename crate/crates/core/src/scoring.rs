//! Epoch-level overlap scoring, false-alarm rates, hypothesis smoothing and
//! DET sweeps.

use std::fmt;
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::signal::{EpochLabelTrack, Label, EPOCH_S};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Per-epoch seizure posteriors of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTrack {
    values: Vec<f64>,
}

impl PosteriorTrack {
    pub fn new(values: Vec<f64>) -> Result<PosteriorTrack> {
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::Numeric(format!(
                "posterior {} at epoch {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(PosteriorTrack { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,start_s,posterior\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{:.4},{v:.9}\n", i as f64 * EPOCH_S));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<PosteriorTrack> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("epoch,start_s,posterior") {
            return Err(CoreError::Data("missing posterior CSV header".into()));
        }
        let values = lines
            .enumerate()
            .map(|(i, l)| {
                let last = l.rsplit(',').next().unwrap_or("");
                last.trim()
                    .parse::<f64>()
                    .map_err(|_| CoreError::Data(format!("posterior row {}: bad value `{last}`", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        PosteriorTrack::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Maximal runs of consecutive false-positive epochs.
    pub fp_events: u64,
    pub total_duration_s: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.fp_events += other.fp_events;
        self.total_duration_s += other.total_duration_s;
    }
}

pub fn score_epochs(reference: &EpochLabelTrack, hyp: &EpochLabelTrack) -> Result<ConfusionCounts> {
    if reference.len() != hyp.len() {
        return Err(CoreError::Data(format!(
            "reference has {} epochs, hypothesis {}",
            reference.len(),
            hyp.len()
        )));
    }
    let mut c = ConfusionCounts {
        total_duration_s: reference.len() as f64 * EPOCH_S,
        ..ConfusionCounts::default()
    };
    let mut in_fp_run = false;
    for (&r, &h) in reference.labels().iter().zip(hyp.labels()) {
        let is_fp = matches!((r, h), (Label::Bckg, Label::Seiz));
        match (r, h) {
            (Label::Seiz, Label::Seiz) => c.tp += 1,
            (Label::Bckg, Label::Bckg) => c.tn += 1,
            (Label::Bckg, Label::Seiz) => c.fp += 1,
            (Label::Seiz, Label::Bckg) => c.fn_ += 1,
        }
        if is_fp && !in_fp_run {
            c.fp_events += 1;
        }
        in_fp_run = is_fp;
    }
    Ok(c)
}

/// How false alarms are counted for the per-24-hour rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaMode {
    /// Each maximal run of false-positive epochs is one alarm.
    #[default]
    Event,
    /// Each false-positive epoch is one alarm.
    Epoch,
}

impl FromStr for FaMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<FaMode> {
        match s {
            "event" => Ok(FaMode::Event),
            "epoch" => Ok(FaMode::Epoch),
            other => Err(CoreError::Config(format!("unknown FA mode `{other}`"))),
        }
    }
}

impl fmt::Display for FaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaMode::Event => "event",
            FaMode::Epoch => "epoch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fa_per_24h: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts, mode: FaMode) -> Result<Metrics> {
    if !(c.total_duration_s > 0.0) {
        return Err(CoreError::Data("cannot compute rates over zero duration".into()));
    }
    let alarms = match mode {
        FaMode::Event => c.fp_events,
        FaMode::Epoch => c.fp,
    };
    Ok(Metrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        fa_per_24h: alarms as f64 * SECONDS_PER_DAY / c.total_duration_s,
    })
}

/// Single-row metrics table.
pub fn metrics_csv(c: &ConfusionCounts, mode: FaMode) -> Result<String> {
    let m = metrics(c, mode)?;
    Ok(format!(
        "sensitivity,specificity,fa_per_24h,tp,tn,fp,fn,fp_events,duration_s\n\
         {:.6},{:.6},{:.4},{},{},{},{},{},{:.1}\n",
        m.sensitivity, m.specificity, m.fa_per_24h, c.tp, c.tn, c.fp, c.fn_, c.fp_events, c.total_duration_s
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub threshold: f64,
    pub min_event_s: f64,
    pub merge_gap_s: f64,
    /// Multiplies the seizure prior odds before thresholding.
    pub prior_weight: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            threshold: 0.5,
            min_event_s: 3.0,
            merge_gap_s: 2.0,
            prior_weight: 1.0,
        }
    }
}

impl SmoothingParams {
    /// No merging or deletion: plain thresholding.
    pub fn threshold_only(threshold: f64) -> SmoothingParams {
        SmoothingParams {
            threshold,
            min_event_s: 0.0,
            merge_gap_s: 0.0,
            prior_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CoreError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.min_event_s >= 0.0 && self.merge_gap_s >= 0.0 && self.prior_weight > 0.0) {
            return Err(CoreError::Config(
                "min_event_s and merge_gap_s must be non-negative, prior weight positive".into(),
            ));
        }
        Ok(())
    }
}

/// Seizure iff the (prior-weighted) posterior exceeds the threshold; a
/// threshold of 0 marks every epoch.
pub fn binarize(post: &PosteriorTrack, threshold: f64, prior_weight: f64) -> EpochLabelTrack {
    EpochLabelTrack::new(
        post.values()
            .iter()
            .map(|&p| {
                let q = if prior_weight == 1.0 {
                    p
                } else {
                    let num = prior_weight * p;
                    let den = num + (1.0 - p);
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                };
                if threshold <= 0.0 || q > threshold {
                    Label::Seiz
                } else {
                    Label::Bckg
                }
            })
            .collect(),
    )
}

/// Maximal runs of `label` as half-open epoch ranges.
pub fn runs(track: &[Label], label: Label) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in track.iter().enumerate() {
        match (l == label, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, track.len()));
    }
    out
}

/// Threshold, merge close seizure runs, then drop short ones.
pub fn smooth_hypotheses(
    post: &PosteriorTrack,
    p: &SmoothingParams,
) -> Result<(EpochLabelTrack, Vec<(f64, f64)>)> {
    p.validate()?;
    let mut labels = binarize(post, p.threshold, p.prior_weight).labels().to_vec();
    let seiz = runs(&labels, Label::Seiz);
    for w in seiz.windows(2) {
        let gap = (w[1].0 - w[0].1) as f64 * EPOCH_S;
        if gap < p.merge_gap_s {
            labels[w[0].1..w[1].0].fill(Label::Seiz);
        }
    }
    let mut events = Vec::new();
    for (s, e) in runs(&labels, Label::Seiz) {
        if ((e - s) as f64 * EPOCH_S) < p.min_event_s {
            labels[s..e].fill(Label::Bckg);
        } else {
            events.push((s as f64 * EPOCH_S, e as f64 * EPOCH_S));
        }
    }
    Ok((EpochLabelTrack::new(labels), events))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fa_per_24h: f64,
    pub fpr: f64,
    pub miss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,sensitivity,specificity,fa_per_24h,fpr,miss\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.4},{:.6},{:.6},{:.4},{:.6},{:.6}\n",
                p.threshold, p.sensitivity, p.specificity, p.fa_per_24h, p.fpr, p.miss
            ));
        }
        s
    }

    /// The point whose sensitivity is closest to `target`; ties go to the
    /// higher threshold (fewer alarms).
    pub fn nearest_sensitivity(&self, target: f64) -> Option<&DetPoint> {
        let mut best: Option<&DetPoint> = None;
        for p in &self.points {
            let better = match best {
                None => true,
                Some(b) => (p.sensitivity - target).abs() <= (b.sensitivity - target).abs(),
            };
            if better {
                best = Some(p);
            }
        }
        best
    }

    /// Best specificity among points with at least the given sensitivity.
    pub fn best_specificity_at(&self, min_sensitivity: f64) -> Option<&DetPoint> {
        self.points
            .iter()
            .filter(|p| p.sensitivity >= min_sensitivity)
            .max_by(|a, b| a.specificity.total_cmp(&b.specificity))
    }
}

/// 101 evenly spaced thresholds over [0, 1].
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Sweeps thresholds over one or more (posterior, reference) records,
/// pooling counts across records.
pub fn det_curve(
    records: &[(&PosteriorTrack, &EpochLabelTrack)],
    smoothing: &SmoothingParams,
    thresholds: &[f64],
    mode: FaMode,
) -> Result<DetCurve> {
    if thresholds.is_empty() {
        return Err(CoreError::Config("empty threshold list".into()));
    }
    for w in thresholds.windows(2) {
        if !(w[1] > w[0]) {
            return Err(CoreError::Config("thresholds must be strictly increasing".into()));
        }
    }
    for (i, (post, reference)) in records.iter().enumerate() {
        if post.len() != reference.len() {
            return Err(CoreError::Data(format!(
                "record {i}: {} posteriors for {} reference epochs",
                post.len(),
                reference.len()
            )));
        }
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let params = SmoothingParams {
            threshold: t,
            ..*smoothing
        };
        let mut total = ConfusionCounts::default();
        for (post, reference) in records {
            let (hyp, _) = smooth_hypotheses(post, &params)?;
            total.add(&score_epochs(reference, &hyp)?);
        }
        let m = metrics(&total, mode)?;
        points.push(DetPoint {
            threshold: t,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            fa_per_24h: m.fa_per_24h,
            fpr: 1.0 - m.specificity,
            miss: 1.0 - m.sensitivity,
        });
    }
    Ok(DetCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Bckg as B, Seiz as S};

    fn track(s: &str) -> EpochLabelTrack {
        EpochLabelTrack::new(s.chars().map(|c| if c == 's' { S } else { B }).collect())
    }

    #[test]
    fn hand_example() {
        let c = score_epochs(&track("ssbb"), &track("sbbs")).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp, c.fp_events), (1, 1, 1, 1, 1));
        let m = metrics(&c, FaMode::Event).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fa_per_24h), (0.5, 0.5, 21600.0));
        let c = score_epochs(&track("ssbb"), &track("ssbb")).unwrap();
        let m = metrics(&c, FaMode::Event).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fa_per_24h), (1.0, 1.0, 0.0));
        assert!(score_epochs(&track("ss"), &track("s")).is_err());
        assert!(metrics(&ConfusionCounts::default(), FaMode::Event).is_err());
    }

    #[test]
    fn fa_rate_scales_to_a_day() {
        let mut c = ConfusionCounts {
            fp_events: 7,
            fp: 20,
            tn: 86_380,
            total_duration_s: SECONDS_PER_DAY,
            ..ConfusionCounts::default()
        };
        assert_eq!(metrics(&c, FaMode::Event).unwrap().fa_per_24h, 7.0);
        assert_eq!(metrics(&c, FaMode::Epoch).unwrap().fa_per_24h, 20.0);
        c.total_duration_s *= 2.0;
        assert_eq!(metrics(&c, FaMode::Event).unwrap().fa_per_24h, 3.5);
    }

    #[test]
    fn smoothing_rules() {
        let post = PosteriorTrack::new(vec![0.9, 0.2, 0.9]).unwrap();
        let (t, ev) = smooth_hypotheses(&post, &SmoothingParams::default()).unwrap();
        assert_eq!(t.labels(), &[S, S, S]);
        assert_eq!(ev, vec![(0.0, 3.0)]);
        let post = PosteriorTrack::new(vec![0.1, 0.9, 0.1, 0.1]).unwrap();
        let (t, ev) = smooth_hypotheses(&post, &SmoothingParams::default()).unwrap();
        assert_eq!(t.labels(), &[B; 4]);
        assert!(ev.is_empty());
        assert!(PosteriorTrack::new(vec![1.5]).is_err());
    }

    #[test]
    fn sweep_ends() {
        let post = PosteriorTrack::new(vec![0.0, 0.3, 1.0, 0.6, 0.2]).unwrap();
        let reference = track("bsssb");
        let curve = det_curve(
            &[(&post, &reference)],
            &SmoothingParams::threshold_only(0.5),
            &default_thresholds(),
            FaMode::Event,
        )
        .unwrap();
        let first = curve.points[0];
        assert_eq!((first.sensitivity, first.specificity), (1.0, 0.0));
        let last = curve.points[100];
        assert_eq!((last.sensitivity, last.fa_per_24h), (0.0, 0.0));
        assert!(det_curve(&[(&post, &reference)], &SmoothingParams::default(), &[0.5, 0.5], FaMode::Event).is_err());
    }

    fn labels_strategy(n: usize) -> impl Strategy<Value = Vec<Label>> {
        proptest::collection::vec(prop_oneof![Just(S), Just(B)], n)
    }

    proptest! {
        #[test]
        fn recount_oracle(pair in (1usize..300).prop_flat_map(|n| (labels_strategy(n), labels_strategy(n)))) {
            let (r, h) = pair;
            let c = score_epochs(&EpochLabelTrack::new(r.clone()), &EpochLabelTrack::new(h.clone())).unwrap();
            let count = |a: Label, b: Label| r.iter().zip(&h).filter(|(x, y)| **x == a && **y == b).count() as u64;
            prop_assert_eq!((c.tp, c.tn, c.fp, c.fn_), (count(S, S), count(B, B), count(B, S), count(S, B)));
            let inv = score_epochs(&EpochLabelTrack::new(r.clone()).inverted(), &EpochLabelTrack::new(h.clone()).inverted()).unwrap();
            prop_assert_eq!((inv.tp, inv.tn, inv.fp, inv.fn_), (c.tn, c.tp, c.fn_, c.fp));
            let m = metrics(&c, FaMode::Event).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.sensitivity) && (0.0..=1.0).contains(&m.specificity));
            prop_assert!(m.fa_per_24h >= 0.0);
        }

        #[test]
        fn smoothing_properties(post in proptest::collection::vec(0.0f64..=1.0, 1..200), t in 0.0f64..1.0,
                                labels in labels_strategy(200)) {
            let track = PosteriorTrack::new(post.clone()).unwrap();
            let reference = EpochLabelTrack::new(labels[..post.len()].to_vec());
            let (plain, _) = smooth_hypotheses(&track, &SmoothingParams::threshold_only(t)).unwrap();
            prop_assert_eq!(&plain, &binarize(&track, t, 1.0));
            let deleted = SmoothingParams { threshold: t, min_event_s: 3.0, merge_gap_s: 0.0, prior_weight: 1.0 };
            let (smoothed, _) = smooth_hypotheses(&track, &deleted).unwrap();
            let before = score_epochs(&reference, &plain).unwrap();
            let after = score_epochs(&reference, &smoothed).unwrap();
            prop_assert!(after.fp_events <= before.fp_events);
            let curve = det_curve(&[(&track, &reference)], &SmoothingParams::default(), &default_thresholds(), FaMode::Event).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[1].sensitivity <= w[0].sensitivity);
            }
        }
    }
}
