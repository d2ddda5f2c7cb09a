//! The experiment document: `[experiment]`, `[synth]`, `[system]` and
//! `[scoring]` sections, every key optional, unknown keys rejected.

use std::path::PathBuf;

use eegdet_core::config::{Document, Reader, Section};
use eegdet_core::error::{CoreError, Result};
use eegdet_core::scoring::{FaMode, SmoothingParams};
use eegdet_core::synth::SynthConfig;
use eegdet_core::systems::{SystemConfig, SystemKind};

pub const SECTIONS: [&str; 4] = ["experiment", "synth", "system", "scoring"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Synthesized corpus sizes, used when no corpus directory is given.
    pub train_records: usize,
    pub eval_records: usize,
    pub train_corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub synth: SynthConfig,
    pub system: SystemConfig,
    pub smoothing: SmoothingParams,
    pub fa_mode: FaMode,
    pub det_points: usize,
}

impl ExperimentConfig {
    pub fn defaults(kind: SystemKind) -> ExperimentConfig {
        ExperimentConfig {
            seed: 0,
            train_records: 3,
            eval_records: 3,
            train_corpus: None,
            eval_corpus: None,
            synth: SynthConfig::default(),
            system: SystemConfig::defaults(kind),
            smoothing: SmoothingParams::default(),
            fa_mode: FaMode::Event,
            det_points: 101,
        }
    }

    /// `kind` overrides the document's `[system] kind`.
    pub fn parse(text: &str, kind: Option<SystemKind>) -> Result<ExperimentConfig> {
        let doc = Document::parse(text)?;
        doc.check_sections(&SECTIONS)?;

        let mut r = Reader::new(doc.section("experiment"), "experiment");
        let seed: u64 = r.get("seed", 0)?;
        let train_records = r.get("train_records", 3)?;
        let eval_records = r.get("eval_records", 3)?;
        let train_corpus = r.get_opt::<String>("train_corpus")?.map(PathBuf::from);
        let eval_corpus = r.get_opt::<String>("eval_corpus")?.map(PathBuf::from);
        r.finish()?;

        let synth = SynthConfig::from_section(doc.section("synth"), "synth")?;

        let sys_section = doc.section("system");
        let mut system = match kind {
            Some(k) => {
                // The flag wins over the document; the rest of the section still applies.
                let mut s = sys_section.cloned().unwrap_or_else(|| Section::new("system"));
                s.set("kind", k);
                SystemConfig::from_section(Some(&s), "system", None)?
            }
            None => SystemConfig::from_section(sys_section, "system", Some(SystemKind::HmmOnly))?,
        };
        if sys_section.and_then(|s| s.get("seed")).is_none() {
            system.seed = seed;
        }

        let mut r = Reader::new(doc.section("scoring"), "scoring");
        let d = SmoothingParams::default();
        let smoothing = SmoothingParams {
            threshold: r.get("threshold", d.threshold)?,
            min_event_s: r.get("min_event_s", d.min_event_s)?,
            merge_gap_s: r.get("merge_gap_s", d.merge_gap_s)?,
            prior_weight: r.get("prior_weight", d.prior_weight)?,
        };
        let fa_mode: FaMode = r.get::<String>("fa_mode", "event".into())?.parse()?;
        let det_points = r.get("det_points", 101)?;
        r.finish()?;
        smoothing.validate()?;

        let cfg = ExperimentConfig {
            seed,
            train_records,
            eval_records,
            train_corpus,
            eval_corpus,
            synth,
            system,
            smoothing,
            fa_mode,
            det_points,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.det_points < 2 {
            return Err(CoreError::Config("[scoring] det_points must be at least 2".into()));
        }
        for (n, key) in [(self.train_records, "train_records"), (self.eval_records, "eval_records")] {
            if !(1..=100).contains(&n) {
                return Err(CoreError::Config(format!("[experiment] {key} must be in 1..=100")));
            }
        }
        self.system.validate()?;
        self.synth.validate()?;
        self.smoothing.validate()
    }

    /// Sets the experiment seed; the system seed follows it.
    pub fn with_seed(mut self, seed: u64) -> ExperimentConfig {
        self.seed = seed;
        self.system.seed = seed;
        self
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.det_points - 1;
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    /// Seed of the `i`-th synthesized record of a split: train records
    /// draw from `1000 * seed + 100 + i`, eval records from `+ 200 + i`.
    pub fn record_seed(&self, eval: bool, i: usize) -> u64 {
        self.seed
            .wrapping_mul(1000)
            .wrapping_add(if eval { 200 } else { 100 })
            .wrapping_add(i as u64)
    }

    /// Fully resolved document, defaults included.
    pub fn to_document(&self) -> Document {
        let mut e = Section::new("experiment");
        e.set("seed", self.seed);
        e.set("train_records", self.train_records);
        e.set("eval_records", self.eval_records);
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        e.set("train_corpus", path(&self.train_corpus));
        e.set("eval_corpus", path(&self.eval_corpus));
        let mut s = Section::new("scoring");
        s.set("threshold", self.smoothing.threshold);
        s.set("min_event_s", self.smoothing.min_event_s);
        s.set("merge_gap_s", self.smoothing.merge_gap_s);
        s.set("prior_weight", self.smoothing.prior_weight);
        s.set("fa_mode", self.fa_mode);
        s.set("det_points", self.det_points);
        Document {
            sections: vec![e, self.synth.to_section("synth"), self.system.to_section("system"), s],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_document_parses_back() {
        let text = "[experiment]\nseed = 4\n[system]\nkind = ipca_lstm\nepochs = 2\n[scoring]\nfa_mode = epoch\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.system.kind, SystemKind::IpcaLstm);
        assert_eq!(cfg.system.seed, 4);
        assert_eq!(cfg.fa_mode, FaMode::Epoch);
        let back = ExperimentConfig::parse(&cfg.to_document().render(), None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(ExperimentConfig::parse("[experiment]\nsed = 1\n", None).is_err());
        assert!(ExperimentConfig::parse("[extra]\na = 1\n", None).is_err());
        assert!(ExperimentConfig::parse("[scoring]\nthreshold = 2\n", None).is_err());
    }

    #[test]
    fn flag_kind_overrides_the_document() {
        let cfg = ExperimentConfig::parse("[system]\nkind = hmm_sda\n", Some(SystemKind::CnnMlp)).unwrap();
        assert_eq!(cfg.system.kind, SystemKind::CnnMlp);
        assert_eq!(cfg.system.activation, SystemConfig::defaults(SystemKind::CnnMlp).activation);
    }
}
