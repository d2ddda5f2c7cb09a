//! The six detection systems as declarative pipelines: HMM front end,
//! dimensionality reduction, and a neural second pass.

mod artifact;
mod data;
mod pipeline;
mod train;

use std::fmt;
use std::str::FromStr;

use eegdet_nn::{Activation, Loss, OptimizerConfig, OptimizerKind};

use crate::config::{join, Reader, Section};
use crate::error::{CoreError, Result};
use crate::features::FeatureConfig;

pub use artifact::{load_system, save_system, verify_manifest, write_manifest, MANIFEST_FILE};
pub use data::{balanced_sample, EpochRef, Scaler};
pub use pipeline::{build_system, probe_system, PipelineDescription, Stage};
pub use train::{infer_system, infer_records, train_system, TrainedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    HmmOnly,
    HmmSda,
    HmmLstm,
    IpcaLstm,
    CnnMlp,
    CnnLstm,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::HmmOnly,
        SystemKind::HmmSda,
        SystemKind::HmmLstm,
        SystemKind::IpcaLstm,
        SystemKind::CnnMlp,
        SystemKind::CnnLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::HmmOnly => "hmm",
            SystemKind::HmmSda => "hmm_sda",
            SystemKind::HmmLstm => "hmm_lstm",
            SystemKind::IpcaLstm => "ipca_lstm",
            SystemKind::CnnMlp => "cnn_mlp",
            SystemKind::CnnLstm => "cnn_lstm",
        }
    }

    pub fn uses_hmm(self) -> bool {
        matches!(self, SystemKind::HmmOnly | SystemKind::HmmSda | SystemKind::HmmLstm)
    }

    pub fn uses_network(self) -> bool {
        self != SystemKind::HmmOnly
    }

    /// Kinds whose hidden activation is a free choice (the activation ablation axis).
    pub fn has_free_activation(self) -> bool {
        matches!(self, SystemKind::CnnMlp | SystemKind::CnnLstm)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "hmm_only" {
            return Ok(SystemKind::HmmOnly);
        }
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown system kind `{s}`")))
    }
}

/// Every knob of a system. Defaults follow the reference configuration;
/// widths can be shrunk for quick experiments without changing the input
/// shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub seed: u64,
    pub features: FeatureConfig,
    pub channels: usize,

    pub hmm_states: usize,
    pub hmm_mixtures: usize,
    pub hmm_iterations: usize,
    pub hmm_max_sequences: usize,
    pub temperature: f64,
    /// Background epochs drawn per seizure epoch.
    pub balance_ratio: f64,

    pub supervector_epochs: usize,
    pub pca_dim: usize,
    pub window_s: usize,
    pub ipca_dim: usize,
    pub ipca_batch: usize,
    pub ipca_sequence: usize,
    pub ipca_frames_per_second: usize,
    pub cnn_lstm_window_s: usize,

    pub lstm_hidden: usize,
    /// Train hmm_lstm on windows whose channel order is freshly permuted,
    /// so the network cannot key on which electrodes a training seizure hit.
    pub channel_shuffle: bool,
    pub sda_hidden: Vec<usize>,
    pub sda_corruption: f64,
    pub sda_pretrain_learning_rate: f64,
    pub sda_pretrain_epochs: usize,
    pub sda_pretrain_batch: usize,
    pub cnn_filters: Vec<usize>,
    pub mlp_units: usize,
    pub conv1d_filters: usize,
    pub conv1d_pool: usize,
    pub bilstm_hidden: Vec<usize>,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
    pub noise_std: f64,

    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    /// Recurrent gradient norm cap; 0 disables.
    pub clip_norm: f64,
}

impl SystemConfig {
    pub fn defaults(kind: SystemKind) -> SystemConfig {
        let (optimizer, learning_rate, epochs, batch_size) = match kind {
            // Minibatch SGD fine-tuning for the SdA.
            SystemKind::HmmSda => (OptimizerKind::Sgd, 0.1, 300, 100),
            SystemKind::IpcaLstm => (OptimizerKind::Adam, 0.0005, 30, 128),
            SystemKind::CnnLstm => (OptimizerKind::Adam, 0.0005, 12, 16),
            SystemKind::CnnMlp => (OptimizerKind::Adam, 0.0005, 15, 32),
            _ => (OptimizerKind::Adam, 0.0005, 30, 64),
        };
        SystemConfig {
            kind,
            seed: 0,
            features: FeatureConfig::default(),
            channels: 22,
            hmm_states: 3,
            hmm_mixtures: 8,
            hmm_iterations: 10,
            hmm_max_sequences: 4000,
            temperature: 10.0,
            balance_ratio: 1.0,
            supervector_epochs: 41,
            pca_dim: 20,
            window_s: 7,
            ipca_dim: 25,
            ipca_batch: 50,
            ipca_sequence: 7,
            ipca_frames_per_second: 1,
            cnn_lstm_window_s: 21,
            lstm_hidden: if kind == SystemKind::IpcaLstm { 128 } else { 32 },
            channel_shuffle: kind == SystemKind::HmmLstm,
            sda_hidden: vec![800, 500, 300],
            sda_corruption: 0.3,
            sda_pretrain_learning_rate: 0.01,
            sda_pretrain_epochs: 150,
            sda_pretrain_batch: 300,
            cnn_filters: vec![16, 32, 64],
            mlp_units: 512,
            conv1d_filters: 16,
            conv1d_pool: 8,
            bilstm_hidden: vec![128, 256],
            conv_dropout: 0.1,
            dense_dropout: 0.5,
            noise_std: 0.1,
            activation: match kind {
                SystemKind::CnnLstm => Activation::Elu,
                SystemKind::CnnMlp => Activation::Relu,
                _ => Activation::Sigmoid,
            },
            optimizer,
            learning_rate,
            decay: 1e-4,
            loss: if kind == SystemKind::CnnLstm {
                Loss::MeanSquared
            } else {
                Loss::CrossEntropy
            },
            epochs,
            batch_size,
            clip_norm: 5.0,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig::defaults(self.optimizer)
            .with_learning_rate(self.learning_rate)
            .with_decay(self.decay)
    }

    /// Same config with another optimizer at that optimizer's default step size.
    pub fn with_optimizer(&self, kind: OptimizerKind) -> SystemConfig {
        let mut cfg = self.clone();
        cfg.optimizer = kind;
        cfg.learning_rate = if kind == self.optimizer {
            self.learning_rate
        } else {
            OptimizerConfig::defaults(kind).learning_rate
        };
        cfg
    }

    pub fn with_activation(&self, activation: Activation) -> Result<SystemConfig> {
        if !self.kind.has_free_activation() {
            return Err(CoreError::Config(format!(
                "{} has no configurable hidden activation",
                self.kind
            )));
        }
        let mut cfg = self.clone();
        cfg.activation = activation;
        Ok(cfg)
    }

    /// Frames per epoch as set by the feature frame rate.
    pub fn frames_per_second(&self) -> usize {
        self.features.frames_per_second()
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let bad = |m: String| Err(CoreError::Config(m));
        if self.supervector_epochs % 2 == 0 {
            return bad(format!(
                "supervector window must be odd to be centered, got {}",
                self.supervector_epochs
            ));
        }
        if self.ipca_sequence % 2 == 0 {
            return bad(format!("ipca sequence must be odd, got {}", self.ipca_sequence));
        }
        if self.window_s % 2 == 0 || self.cnn_lstm_window_s % 2 == 0 {
            return bad(format!(
                "window durations must be odd to be centered, got {} and {}",
                self.window_s, self.cnn_lstm_window_s
            ));
        }
        if self.frames_per_second() % self.ipca_frames_per_second.max(1) != 0
            || self.ipca_frames_per_second == 0
        {
            return bad(format!(
                "ipca_frames_per_second must divide the frame rate {}",
                self.frames_per_second()
            ));
        }
        let positive = [
            ("channels", self.channels),
            ("hmm_states", self.hmm_states),
            ("hmm_mixtures", self.hmm_mixtures),
            ("hmm_max_sequences", self.hmm_max_sequences),
            ("pca_dim", self.pca_dim),
            ("ipca_dim", self.ipca_dim),
            ("ipca_batch", self.ipca_batch),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_units", self.mlp_units),
            ("conv1d_filters", self.conv1d_filters),
            ("conv1d_pool", self.conv1d_pool),
            ("batch_size", self.batch_size),
            ("sda_pretrain_batch", self.sda_pretrain_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.ipca_batch < self.ipca_dim {
            return bad(format!(
                "ipca_batch {} must be at least ipca_dim {}",
                self.ipca_batch, self.ipca_dim
            ));
        }
        if self.cnn_filters.len() != 3 || self.cnn_filters.contains(&0) {
            return bad("cnn_filters needs three positive widths".into());
        }
        if self.bilstm_hidden.len() != 2 || self.bilstm_hidden.contains(&0) {
            return bad("bilstm_hidden needs two positive widths".into());
        }
        if self.sda_hidden.is_empty() || self.sda_hidden.contains(&0) {
            return bad("sda_hidden needs at least one positive width".into());
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if !(self.balance_ratio > 0.0) {
            return bad("balance_ratio must be positive".into());
        }
        for (name, p) in [
            ("conv_dropout", self.conv_dropout),
            ("dense_dropout", self.dense_dropout),
            ("sda_corruption", self.sda_corruption),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.noise_std >= 0.0) || !(self.clip_norm >= 0.0) {
            return bad("noise_std and clip_norm must be non-negative".into());
        }
        let default_act = SystemConfig::defaults(self.kind).activation;
        if !self.kind.has_free_activation() && self.activation != default_act {
            return bad(format!("{} has no configurable hidden activation", self.kind));
        }
        self.optimizer_config().validate()?;
        Ok(())
    }

    pub fn to_section(&self, name: &str) -> Section {
        let mut s = Section::new(name);
        let f = &self.features;
        s.set("kind", self.kind);
        s.set("seed", self.seed);
        s.set("frame_s", f.frame_s);
        s.set("feature_window_s", f.window_s);
        s.set("num_filters", f.num_filters);
        s.set("base_dim", f.base_dim);
        s.set("total_dim", f.total_dim);
        s.set("preemphasis", f.preemphasis);
        s.set("energy_floor", f.energy_floor);
        s.set("delta_halfwidth", f.delta_halfwidth);
        s.set("channels", self.channels);
        s.set("hmm_states", self.hmm_states);
        s.set("hmm_mixtures", self.hmm_mixtures);
        s.set("hmm_iterations", self.hmm_iterations);
        s.set("hmm_max_sequences", self.hmm_max_sequences);
        s.set("temperature", self.temperature);
        s.set("balance_ratio", self.balance_ratio);
        s.set("supervector_epochs", self.supervector_epochs);
        s.set("pca_dim", self.pca_dim);
        s.set("window_s", self.window_s);
        s.set("ipca_dim", self.ipca_dim);
        s.set("ipca_batch", self.ipca_batch);
        s.set("ipca_sequence", self.ipca_sequence);
        s.set("ipca_frames_per_second", self.ipca_frames_per_second);
        s.set("cnn_lstm_window_s", self.cnn_lstm_window_s);
        s.set("lstm_hidden", self.lstm_hidden);
        s.set("channel_shuffle", self.channel_shuffle);
        s.set("sda_hidden", join(&self.sda_hidden));
        s.set("sda_corruption", self.sda_corruption);
        s.set("sda_pretrain_learning_rate", self.sda_pretrain_learning_rate);
        s.set("sda_pretrain_epochs", self.sda_pretrain_epochs);
        s.set("sda_pretrain_batch", self.sda_pretrain_batch);
        s.set("cnn_filters", join(&self.cnn_filters));
        s.set("mlp_units", self.mlp_units);
        s.set("conv1d_filters", self.conv1d_filters);
        s.set("conv1d_pool", self.conv1d_pool);
        s.set("bilstm_hidden", join(&self.bilstm_hidden));
        s.set("conv_dropout", self.conv_dropout);
        s.set("dense_dropout", self.dense_dropout);
        s.set("noise_std", self.noise_std);
        s.set("activation", self.activation);
        s.set("optimizer", self.optimizer);
        s.set("learning_rate", self.learning_rate);
        s.set("decay", self.decay);
        s.set("loss", self.loss);
        s.set("epochs", self.epochs);
        s.set("batch_size", self.batch_size);
        s.set("clip_norm", self.clip_norm);
        s
    }

    /// Reads a section; keys left out take the defaults of the given kind
    /// (or of the section's own `kind` key when present).
    pub fn from_section(section: Option<&Section>, name: &str, kind: Option<SystemKind>) -> Result<SystemConfig> {
        let mut r = Reader::new(section, name);
        let kind = match (r.get_opt::<String>("kind")?, kind) {
            (Some(k), _) => k.parse()?,
            (None, Some(k)) => k,
            (None, None) => {
                return Err(CoreError::Config(format!("[{name}] missing `kind`")));
            }
        };
        let d = SystemConfig::defaults(kind);
        let df = &d.features;
        let nn = |e: eegdet_nn::NnError| CoreError::Config(e.to_string());
        let activation: Activation = r.get::<String>("activation", d.activation.to_string())?
            .parse()
            .map_err(nn)?;
        let optimizer: OptimizerKind = r.get::<String>("optimizer", d.optimizer.to_string())?
            .parse()
            .map_err(nn)?;
        let loss: Loss = r.get::<String>("loss", d.loss.to_string())?.parse().map_err(nn)?;
        // An optimizer change without an explicit rate uses that optimizer's default.
        let lr_default = if optimizer == d.optimizer {
            d.learning_rate
        } else {
            OptimizerConfig::defaults(optimizer).learning_rate
        };
        let cfg = SystemConfig {
            kind,
            seed: r.get("seed", d.seed)?,
            features: FeatureConfig {
                frame_s: r.get("frame_s", df.frame_s)?,
                window_s: r.get("feature_window_s", df.window_s)?,
                num_filters: r.get("num_filters", df.num_filters)?,
                base_dim: r.get("base_dim", df.base_dim)?,
                total_dim: r.get("total_dim", df.total_dim)?,
                preemphasis: r.get("preemphasis", df.preemphasis)?,
                energy_floor: r.get("energy_floor", df.energy_floor)?,
                delta_halfwidth: r.get("delta_halfwidth", df.delta_halfwidth)?,
            },
            channels: r.get("channels", d.channels)?,
            hmm_states: r.get("hmm_states", d.hmm_states)?,
            hmm_mixtures: r.get("hmm_mixtures", d.hmm_mixtures)?,
            hmm_iterations: r.get("hmm_iterations", d.hmm_iterations)?,
            hmm_max_sequences: r.get("hmm_max_sequences", d.hmm_max_sequences)?,
            temperature: r.get("temperature", d.temperature)?,
            balance_ratio: r.get("balance_ratio", d.balance_ratio)?,
            supervector_epochs: r.get("supervector_epochs", d.supervector_epochs)?,
            pca_dim: r.get("pca_dim", d.pca_dim)?,
            window_s: r.get("window_s", d.window_s)?,
            ipca_dim: r.get("ipca_dim", d.ipca_dim)?,
            ipca_batch: r.get("ipca_batch", d.ipca_batch)?,
            ipca_sequence: r.get("ipca_sequence", d.ipca_sequence)?,
            ipca_frames_per_second: r.get("ipca_frames_per_second", d.ipca_frames_per_second)?,
            cnn_lstm_window_s: r.get("cnn_lstm_window_s", d.cnn_lstm_window_s)?,
            lstm_hidden: r.get("lstm_hidden", d.lstm_hidden)?,
            channel_shuffle: r.get("channel_shuffle", d.channel_shuffle)?,
            sda_hidden: r.get_list("sda_hidden", d.sda_hidden.clone())?,
            sda_corruption: r.get("sda_corruption", d.sda_corruption)?,
            sda_pretrain_learning_rate: r.get("sda_pretrain_learning_rate", d.sda_pretrain_learning_rate)?,
            sda_pretrain_epochs: r.get("sda_pretrain_epochs", d.sda_pretrain_epochs)?,
            sda_pretrain_batch: r.get("sda_pretrain_batch", d.sda_pretrain_batch)?,
            cnn_filters: r.get_list("cnn_filters", d.cnn_filters.clone())?,
            mlp_units: r.get("mlp_units", d.mlp_units)?,
            conv1d_filters: r.get("conv1d_filters", d.conv1d_filters)?,
            conv1d_pool: r.get("conv1d_pool", d.conv1d_pool)?,
            bilstm_hidden: r.get_list("bilstm_hidden", d.bilstm_hidden.clone())?,
            conv_dropout: r.get("conv_dropout", d.conv_dropout)?,
            dense_dropout: r.get("dense_dropout", d.dense_dropout)?,
            noise_std: r.get("noise_std", d.noise_std)?,
            activation,
            optimizer,
            learning_rate: r.get("learning_rate", lr_default)?,
            decay: r.get("decay", d.decay)?,
            loss,
            epochs: r.get("epochs", d.epochs)?,
            batch_size: r.get("batch_size", d.batch_size)?,
            clip_norm: r.get("clip_norm", d.clip_norm)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
