//! Stage lists with resolved shapes, and the probe that measures them.

use std::fmt;

use eegdet_nn::{Activation, LayerSpec, Network, NnRng, Tensor};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::data::{frame_track, grid_track, pooled_epoch_track, supervector_track, window_batch, Scaler, Track};
use super::{SystemConfig, SystemKind};
use crate::dimred::{ipca_fit, pca_fit};
use crate::error::{CoreError, Result};
use crate::features::FeatureSequence;
use crate::hmm::{baum_welch_train, epoch_scores, initialize_hmm, HmmInit};
use crate::signal::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    /// Per-example shape (no batch axis).
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineDescription {
    pub kind: SystemKind,
    pub stages: Vec<Stage>,
}

impl PipelineDescription {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Shapes of all stages with the given name, in order.
    pub fn shapes(&self, name: &str) -> Vec<&[usize]> {
        self.stages
            .iter()
            .filter(|s| s.name == name)
            .map(|s| s.shape.as_slice())
            .collect()
    }
}

impl fmt::Display for PipelineDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "system {}", self.kind)?;
        for s in &self.stages {
            let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
            writeln!(f, "  {:<22} {}", s.name, dims.join("x"))?;
        }
        Ok(())
    }
}

/// How a network's input window is cut from a track.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub before: usize,
    pub after: usize,
    pub unit_shape: Vec<usize>,
}

pub(crate) struct NetPlan {
    pub name: &'static str,
    pub input: Vec<usize>,
    pub specs: Vec<LayerSpec>,
}

/// Context window in units of the track the network reads.
pub(crate) fn geometry(cfg: &SystemConfig) -> Option<Geometry> {
    let fps = cfg.frames_per_second();
    let (c, d) = (cfg.channels, cfg.features.total_dim);
    let centered = |n: usize, unit: usize| (unit * (n / 2), unit * (n / 2 + 1));
    match cfg.kind {
        SystemKind::HmmOnly => None,
        SystemKind::HmmSda => Some(Geometry {
            before: 0,
            after: 1,
            unit_shape: vec![cfg.pca_dim],
        }),
        SystemKind::HmmLstm => {
            let (before, after) = centered(cfg.supervector_epochs, 1);
            Some(Geometry {
                before,
                after,
                unit_shape: vec![cfg.supervector_epochs, cfg.pca_dim],
            })
        }
        SystemKind::IpcaLstm => {
            let (before, after) = centered(cfg.ipca_sequence, 1);
            Some(Geometry {
                before,
                after,
                unit_shape: vec![cfg.ipca_sequence, cfg.ipca_dim],
            })
        }
        SystemKind::CnnMlp => {
            let (before, after) = centered(cfg.window_s, fps);
            Some(Geometry {
                before,
                after,
                unit_shape: vec![cfg.window_s * fps, c, d],
            })
        }
        SystemKind::CnnLstm => {
            let (before, after) = centered(cfg.cnn_lstm_window_s, fps);
            Some(Geometry {
                before,
                after,
                unit_shape: vec![cfg.cnn_lstm_window_s * fps, frame_embedding(cfg)],
            })
        }
    }
}

fn chain_err(stage: &str, e: eegdet_nn::NnError) -> CoreError {
    CoreError::ShapeChain {
        stage: stage.to_string(),
        detail: e.to_string(),
    }
}

/// Shape chain that names the first layer rejecting its input.
fn resolve_chain(net: &str, specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut chain = vec![input.to_vec()];
    for s in specs {
        let next = s
            .output_shape(chain.last().expect("non-empty"))
            .map_err(|e| chain_err(&format!("{net}:{}", s.kind()), e))?;
        chain.push(next);
    }
    Ok(chain)
}

fn cnn_lstm_frame_specs(cfg: &SystemConfig) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut inputs = 1;
    for &filters in &cfg.cnn_filters {
        specs.push(LayerSpec::Conv2d { kernel: 3, inputs, filters });
        specs.push(LayerSpec::Activation(cfg.activation));
        specs.push(LayerSpec::MaxPool2d { size: 2 });
        specs.push(LayerSpec::Dropout { rate: cfg.conv_dropout });
        inputs = filters;
    }
    specs.push(LayerSpec::Flatten);
    specs
}

/// Flattened per-frame embedding width of the CNN/LSTM frame network.
fn frame_embedding(cfg: &SystemConfig) -> usize {
    let (mut h, mut w) = (cfg.features.total_dim, cfg.channels);
    for _ in &cfg.cnn_filters {
        h /= 2;
        w /= 2;
    }
    h * w * cfg.cnn_filters.last().copied().unwrap_or(0)
}

/// Network layer lists with their per-example input shapes.
pub(crate) fn net_plans(cfg: &SystemConfig) -> Result<Vec<NetPlan>> {
    let (c, d) = (cfg.channels, cfg.features.total_dim);
    let plans = match cfg.kind {
        SystemKind::HmmOnly => vec![],
        SystemKind::HmmSda => {
            let mut specs = Vec::new();
            let mut inputs = cfg.pca_dim;
            for &units in &cfg.sda_hidden {
                specs.push(LayerSpec::Dense { inputs, units });
                specs.push(LayerSpec::Activation(Activation::Sigmoid));
                inputs = units;
            }
            specs.push(LayerSpec::Dense { inputs, units: 2 });
            specs.push(LayerSpec::Activation(Activation::Sigmoid));
            vec![NetPlan {
                name: "sda",
                input: vec![cfg.pca_dim],
                specs,
            }]
        }
        SystemKind::HmmLstm => vec![NetPlan {
            name: "lstm",
            input: vec![cfg.supervector_epochs, cfg.pca_dim],
            specs: vec![
                LayerSpec::Lstm {
                    inputs: cfg.pca_dim,
                    hidden: cfg.lstm_hidden,
                    return_sequences: false,
                },
                LayerSpec::Dense {
                    inputs: cfg.lstm_hidden,
                    units: 2,
                },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
        }],
        SystemKind::IpcaLstm => vec![NetPlan {
            name: "lstm",
            input: vec![cfg.ipca_sequence, cfg.ipca_dim],
            specs: vec![
                LayerSpec::Lstm {
                    inputs: cfg.ipca_dim,
                    hidden: cfg.lstm_hidden,
                    return_sequences: false,
                },
                LayerSpec::Dropout { rate: cfg.dense_dropout },
                LayerSpec::Dense {
                    inputs: cfg.lstm_hidden,
                    units: 2,
                },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
        }],
        SystemKind::CnnMlp => {
            let input = vec![cfg.window_s * cfg.frames_per_second(), c, d];
            let mut specs = Vec::new();
            let mut inputs = d;
            for &filters in &cfg.cnn_filters {
                for _ in 0..2 {
                    specs.push(LayerSpec::Conv2d { kernel: 3, inputs, filters });
                    specs.push(LayerSpec::Activation(cfg.activation));
                    inputs = filters;
                }
                specs.push(LayerSpec::MaxPool2d { size: 2 });
                specs.push(LayerSpec::Dropout { rate: cfg.conv_dropout });
            }
            specs.push(LayerSpec::Flatten);
            let chain = resolve_chain("cnn", &specs, &input)?;
            let flat = chain.last().map(|s| s[0]).unwrap_or(0);
            specs.extend([
                LayerSpec::Dense {
                    inputs: flat,
                    units: cfg.mlp_units,
                },
                LayerSpec::Activation(cfg.activation),
                LayerSpec::Dropout { rate: cfg.dense_dropout },
                LayerSpec::Dense {
                    inputs: cfg.mlp_units,
                    units: 2,
                },
                LayerSpec::Activation(Activation::Sigmoid),
            ]);
            vec![NetPlan {
                name: "cnn",
                input,
                specs,
            }]
        }
        SystemKind::CnnLstm => {
            let emb = frame_embedding(cfg);
            let t = cfg.cnn_lstm_window_s * cfg.frames_per_second();
            let (h1, h2) = (cfg.bilstm_hidden[0], cfg.bilstm_hidden[1]);
            vec![
                NetPlan {
                    name: "frame",
                    input: vec![d, c, 1],
                    specs: cnn_lstm_frame_specs(cfg),
                },
                NetPlan {
                    name: "head",
                    input: vec![t, emb],
                    specs: vec![
                        LayerSpec::Conv1d {
                            kernel: 3,
                            inputs: emb,
                            filters: cfg.conv1d_filters,
                        },
                        LayerSpec::Activation(cfg.activation),
                        LayerSpec::MaxPool1d { size: cfg.conv1d_pool },
                        LayerSpec::GaussianNoise { std: cfg.noise_std },
                        LayerSpec::BiLstm {
                            inputs: cfg.conv1d_filters,
                            hidden: h1,
                            return_sequences: true,
                        },
                        LayerSpec::Dropout { rate: cfg.conv_dropout },
                        LayerSpec::BiLstm {
                            inputs: 2 * h1,
                            hidden: h2,
                            return_sequences: false,
                        },
                        LayerSpec::Dropout { rate: cfg.conv_dropout },
                        LayerSpec::Dense {
                            inputs: 2 * h2,
                            units: 2,
                        },
                        LayerSpec::Activation(Activation::Sigmoid),
                    ],
                },
            ]
        }
    };
    Ok(plans)
}

fn stage(name: impl Into<String>, shape: &[usize]) -> Stage {
    Stage {
        name: name.into(),
        shape: shape.to_vec(),
    }
}

/// Ordered stages with shapes resolved from the configuration alone.
pub fn build_system(cfg: &SystemConfig) -> Result<PipelineDescription> {
    cfg.validate()?;
    let fps = cfg.frames_per_second();
    let (c, d) = (cfg.channels, cfg.features.total_dim);
    let n = cfg.supervector_epochs;
    let mut stages = Vec::new();
    match cfg.kind {
        SystemKind::HmmOnly => {
            stages.push(stage("features", &[fps, c, d]));
            stages.push(stage("epoch_scores", &[2 * c]));
        }
        SystemKind::HmmSda => {
            stages.push(stage("epoch_scores", &[2 * c]));
            stages.push(stage("window", &[n, 2 * c]));
            stages.push(stage("supervector", &[n * 2 * c]));
            stages.push(stage("pca", &[cfg.pca_dim]));
        }
        SystemKind::HmmLstm => {
            stages.push(stage("epoch_scores", &[2 * c]));
            stages.push(stage("pca", &[cfg.pca_dim]));
            stages.push(stage("sequence", &[n, cfg.pca_dim]));
        }
        SystemKind::IpcaLstm => {
            let pool = cfg.ipca_frames_per_second;
            stages.push(stage("features", &[fps, c, d]));
            stages.push(stage("window", &[cfg.window_s * pool, c, d]));
            stages.push(stage("flatten", &[cfg.window_s * pool * c * d]));
            stages.push(stage("ipca", &[cfg.ipca_dim]));
            stages.push(stage("sequence", &[cfg.ipca_sequence, cfg.ipca_dim]));
        }
        SystemKind::CnnMlp => {
            stages.push(stage("image", &[cfg.window_s * fps, c, d]));
        }
        SystemKind::CnnLstm => {
            stages.push(stage("frames", &[cfg.cnn_lstm_window_s * fps, d, c, 1]));
        }
    }
    for plan in net_plans(cfg)? {
        let chain = resolve_chain(plan.name, &plan.specs, &plan.input)?;
        if plan.name == "head" {
            stages.push(stage("head:input", &plan.input));
        }
        for (spec, shape) in plan.specs.iter().zip(chain.iter().skip(1)) {
            stages.push(stage(format!("{}:{}", plan.name, spec.kind()), shape));
        }
    }
    stages.push(stage("posterior", &[1]));
    Ok(PipelineDescription { kind: cfg.kind, stages })
}

fn per_example(t: &Tensor) -> Vec<usize> {
    t.shape()[1..].to_vec()
}

/// Runs a random input through a freshly built network one layer at a time.
fn measure_net(plan: &NetPlan, x: &Tensor, rng: &mut NnRng, stages: &mut Vec<Stage>) -> Result<Tensor> {
    let mut net = Network::build(&plan.specs, rng).map_err(|e| chain_err(plan.name, e))?;
    let mut cur = x.clone();
    for layer in net.layers_mut() {
        let name = format!("{}:{}", plan.name, layer.spec().kind());
        cur = layer.forward(&cur, false, rng).map_err(|e| chain_err(&name, e))?;
        stages.push(Stage {
            name,
            shape: per_example(&cur),
        });
    }
    Ok(cur)
}

fn random_features(cfg: &SystemConfig, epochs: usize, rng: &mut NnRng) -> Result<FeatureSequence> {
    let fps = cfg.frames_per_second();
    let (c, d) = (cfg.channels, cfg.features.total_dim);
    let frames = epochs * fps;
    let values = (0..frames * c * d).map(|_| rng.sample(StandardNormal)).collect();
    let labels = (0..c).map(|i| format!("ch{i}")).collect();
    FeatureSequence::new(values, frames, labels, d, cfg.features.frame_s, cfg.features.window_s)
}

/// Measures every stage shape by pushing random data through the same
/// code paths training and inference use.
pub fn probe_system(cfg: &SystemConfig, seed: u64) -> Result<PipelineDescription> {
    cfg.validate()?;
    let mut rng = NnRng::seed_from_u64(seed);
    let epochs = 60;
    let feats = random_features(cfg, epochs, &mut rng)?;
    let (_, c, d) = feats.shape();
    let fps = feats.frames_per_epoch();
    let mut stages = Vec::new();
    let plans = net_plans(cfg)?;
    let geo = geometry(cfg);
    let all: Vec<usize> = (0..epochs).collect();
    let net_input = match cfg.kind {
        SystemKind::HmmOnly | SystemKind::HmmSda | SystemKind::HmmLstm => {
            // Tiny single-state models: only the output layout matters here.
            let seqs: Vec<Vec<f64>> = (0..c).map(|ch| feats.channel_span(ch, 0, fps)).collect();
            let init = HmmInit {
                num_states: 1,
                num_mixtures: 1,
                ..HmmInit::default()
            };
            let m = initialize_hmm(Label::Seiz, &seqs, d, &init, seed)?;
            let (m, _) = baum_welch_train(&m, &seqs, 1)?;
            if cfg.kind == SystemKind::HmmOnly {
                stages.push(stage("features", &[fps, c, d]));
            }
            let grid = epoch_scores(&m, &m, &feats)?;
            let rows = grid_track(&grid, cfg.temperature);
            stages.push(stage("epoch_scores", &[rows.dim]));
            match cfg.kind {
                SystemKind::HmmOnly => None,
                SystemKind::HmmSda => {
                    let n = cfg.supervector_epochs;
                    let sv = supervector_track(&rows, n);
                    stages.push(stage("window", &[sv.dim / rows.dim, rows.dim]));
                    stages.push(stage("supervector", &[sv.dim]));
                    let pca = pca_fit(&to_matrix(&sv), cfg.pca_dim)?;
                    let codes = sv.map_rows(pca.output_dim(), |r| pca.transform(r))?;
                    stages.push(stage("pca", &[codes.dim]));
                    let g = geo.as_ref().expect("geometry");
                    Some(window_batch(&codes, &[0], g.before, g.after, &g.unit_shape)?)
                }
                _ => {
                    let pca = pca_fit(&to_matrix(&rows), cfg.pca_dim)?;
                    let codes = rows.map_rows(pca.output_dim(), |r| pca.transform(r))?;
                    stages.push(stage("pca", &[codes.dim]));
                    let g = geo.as_ref().expect("geometry");
                    let x = window_batch(&codes, &[0], g.before, g.after, &g.unit_shape)?;
                    stages.push(stage("sequence", &per_example(&x)));
                    Some(x)
                }
            }
        }
        SystemKind::IpcaLstm => {
            let pool = cfg.ipca_frames_per_second;
            stages.push(stage("features", &[fps, c, d]));
            let scaler = Scaler::standard(feats.values().chunks(d), d)?;
            let frames = frame_track(&feats, &scaler, false);
            let pooled = pooled_epoch_track(&frames, epochs, pool);
            let n = cfg.window_s;
            let windows = supervector_track(&pooled, n);
            stages.push(stage("window", &[n * pool, c, d]));
            stages.push(stage("flatten", &[windows.dim]));
            let ipca = ipca_fit(&to_matrix(&windows), cfg.ipca_dim, cfg.ipca_batch)?;
            let codes = windows.map_rows(ipca.output_dim(), |r| ipca.transform(r))?;
            stages.push(stage("ipca", &[codes.dim]));
            let g = geo.as_ref().expect("geometry");
            let x = window_batch(&codes, &[0], g.before, g.after, &g.unit_shape)?;
            stages.push(stage("sequence", &per_example(&x)));
            Some(x)
        }
        SystemKind::CnnMlp => {
            let scaler = Scaler::standard(feats.values().chunks(d), d)?;
            let frames = frame_track(&feats, &scaler, false);
            let g = geo.as_ref().expect("geometry");
            let x = window_batch(&frames, &[all[epochs / 2]], g.before, g.after, &g.unit_shape)?;
            stages.push(stage("image", &per_example(&x)));
            Some(x)
        }
        SystemKind::CnnLstm => {
            let scaler = Scaler::standard(feats.values().chunks(d), d)?;
            let frames = frame_track(&feats, &scaler, true);
            let g = geo.as_ref().expect("geometry");
            let t = g.unit_shape[0];
            let x = window_batch(&frames, &[epochs / 2], g.before, g.after, &[t, d, c, 1])?;
            stages.push(stage("frames", &per_example(&x)));
            // Frame network over every frame of the window, then the head.
            let per_frame = x.reshape(&[t, d, c, 1])?;
            let emb = measure_net(&plans[0], &per_frame, &mut rng, &mut Vec::new())?;
            // Record the frame network's shapes from a single frame.
            let one = Tensor::from_vec(&[1, d, c, 1], per_frame.row(0).to_vec())?;
            measure_net(&plans[0], &one, &mut rng, &mut stages)?;
            let head_in = emb.reshape(&[1, t, g.unit_shape[1]])?;
            stages.push(stage("head:input", &per_example(&head_in)));
            measure_net(&plans[1], &head_in, &mut rng, &mut stages)?;
            stages.push(stage("posterior", &[1]));
            return Ok(PipelineDescription { kind: cfg.kind, stages });
        }
    };
    if let (Some(x), Some(plan)) = (net_input, plans.first()) {
        measure_net(plan, &x, &mut rng, &mut stages)?;
    }
    stages.push(stage("posterior", &[1]));
    Ok(PipelineDescription { kind: cfg.kind, stages })
}

pub(crate) fn to_matrix(t: &Track) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(t.units(), t.dim, &t.data)
}
