//! Stage-by-stage training and sliding-window inference.

use eegdet_nn::sda::{assemble_classifier, sda_pretrain, SdaConfig};
use eegdet_nn::{Network, NnRng, Optimizer, Tensor};
use log::{debug, info};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::data::{
    balanced_sample, frame_track, grid_track, pooled_epoch_track, supervector_track, targets, two_way_posterior,
    window_batch, EpochRef, Scaler, Track,
};
use super::pipeline::{build_system, geometry, net_plans, to_matrix, Geometry};
use super::{SystemConfig, SystemKind};
use crate::dimred::{ipca_fit, pca_fit, PcaModel};
use crate::error::{CoreError, Result};
use crate::features::{extract_features, FeatureSequence};
use crate::hmm::{baum_welch_train, epoch_frames, epoch_scores, initialize_hmm, GmmHmm, HmmInit};
use crate::scoring::PosteriorTrack;
use crate::signal::{annotations_to_epoch_labels, epoch_count, AnnotationSet, EegRecord, EpochLabelTrack, Label};

const PREDICT_CHUNK: usize = 64;
const FRAME_CHUNK: usize = 256;
const BATCH_RUN: usize = 4;

/// Everything a trained system needs at inference time.
#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub config: SystemConfig,
    /// (seizure model, background model).
    pub hmm: Option<(GmmHmm, GmmHmm)>,
    pub feature_scaler: Option<Scaler>,
    pub reducer: Option<PcaModel>,
    pub code_scaler: Option<Scaler>,
    /// One network, or the frame network followed by the head for cnn_lstm.
    pub nets: Vec<Network>,
    /// Mean training loss per epoch of the last trained stage.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shortest record (in epochs) a system can decode.
fn min_epochs(cfg: &SystemConfig) -> usize {
    match cfg.kind {
        SystemKind::HmmOnly => 1,
        SystemKind::HmmSda | SystemKind::HmmLstm => cfg.supervector_epochs,
        SystemKind::IpcaLstm | SystemKind::CnnMlp => cfg.window_s,
        SystemKind::CnnLstm => cfg.cnn_lstm_window_s,
    }
}

fn check_record(cfg: &SystemConfig, record: &EegRecord) -> Result<()> {
    if record.num_channels() != cfg.channels {
        return Err(CoreError::Data(format!(
            "record has {} channels, system expects {}",
            record.num_channels(),
            cfg.channels
        )));
    }
    let epochs = epoch_count(record.duration_s());
    if epochs < min_epochs(cfg) {
        return Err(CoreError::Data(format!(
            "record of {:.1} s is shorter than one {} window ({} s)",
            record.duration_s(),
            cfg.kind,
            min_epochs(cfg)
        )));
    }
    Ok(())
}

fn gather(tracks: &[Track], refs: &[EpochRef], geo: &Geometry) -> Result<Tensor> {
    let width = (geo.before + geo.after) * tracks[0].dim;
    let mut data = Vec::with_capacity(refs.len() * width);
    for r in refs {
        tracks[r.record].window_into(r.epoch, geo.before, geo.after, &mut data);
    }
    let mut shape = vec![refs.len()];
    shape.extend_from_slice(&geo.unit_shape);
    Ok(Tensor::from_vec(&shape, data)?)
}

impl TrainedSystem {
    fn empty(config: &SystemConfig) -> TrainedSystem {
        TrainedSystem {
            config: config.clone(),
            hmm: None,
            feature_scaler: None,
            reducer: None,
            code_scaler: None,
            nets: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    fn hmms(&self) -> Result<&(GmmHmm, GmmHmm)> {
        self.hmm
            .as_ref()
            .ok_or_else(|| CoreError::Config(format!("{} system has no HMM stage", self.config.kind)))
    }

    fn scaler(&self) -> Result<&Scaler> {
        self.feature_scaler
            .as_ref()
            .ok_or_else(|| CoreError::Config("missing feature scaler".into()))
    }

    /// The per-record track that feeds dimensionality reduction (or the
    /// network directly for the CNN systems).
    fn pre_reduction(&self, feats: &FeatureSequence) -> Result<Track> {
        let cfg = &self.config;
        Ok(match cfg.kind {
            SystemKind::HmmOnly | SystemKind::HmmLstm => {
                let (s, b) = self.hmms()?;
                grid_track(&epoch_scores(s, b, feats)?, cfg.temperature)
            }
            SystemKind::HmmSda => {
                let (s, b) = self.hmms()?;
                supervector_track(&grid_track(&epoch_scores(s, b, feats)?, cfg.temperature), cfg.supervector_epochs)
            }
            SystemKind::IpcaLstm => {
                let frames = frame_track(feats, self.scaler()?, false);
                let pooled = pooled_epoch_track(&frames, feats.epoch_count(), cfg.ipca_frames_per_second);
                supervector_track(&pooled, cfg.window_s)
            }
            SystemKind::CnnMlp => frame_track(feats, self.scaler()?, false),
            SystemKind::CnnLstm => frame_track(feats, self.scaler()?, true),
        })
    }

    fn reduce_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut code = match &self.reducer {
            Some(p) => p.transform(row)?,
            None => row.to_vec(),
        };
        if let Some(s) = &self.code_scaler {
            s.apply(&mut code);
        }
        Ok(code)
    }

    fn reduce(&self, pre: &Track) -> Result<Track> {
        let mut t = match &self.reducer {
            Some(p) => pre.map_rows(p.output_dim(), |r| p.transform(r))?,
            None => return Ok(pre.clone()),
        };
        if let Some(s) = &self.code_scaler {
            s.apply(&mut t.data);
        }
        Ok(t)
    }

    /// Posterior per epoch for one record's features.
    fn decode(&self, feats: &FeatureSequence, nets: &mut [Network]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let epochs = feats.epoch_count();
        if cfg.kind == SystemKind::HmmOnly {
            let (s, b) = self.hmms()?;
            let grid = epoch_scores(s, b, feats)?;
            return Ok((0..epochs).map(|e| sigmoid(grid.mean_llr(e) / cfg.temperature)).collect());
        }
        let geo = geometry(cfg).expect("network system");
        let codes = self.reduce(&self.pre_reduction(feats)?)?;
        let mut post = Vec::with_capacity(epochs);
        let all: Vec<usize> = (0..epochs).collect();
        let (net, source, geo) = if cfg.kind == SystemKind::CnnLstm {
            let (frame_net, head) = nets.split_at_mut(1);
            let emb = embed_frames(&mut frame_net[0], &codes, cfg)?;
            (&mut head[0], emb, geo)
        } else {
            (&mut nets[0], codes, geo)
        };
        for chunk in all.chunks(PREDICT_CHUNK) {
            let x = window_batch(&source, chunk, geo.before, geo.after, &geo.unit_shape)?;
            let y = net.predict(&x)?;
            for i in 0..chunk.len() {
                let row = y.row(i);
                post.push(two_way_posterior(row[0], row[1]));
            }
        }
        Ok(post)
    }

    fn train_hmms(
        &mut self,
        feats: &[FeatureSequence],
        labels: &[EpochLabelTrack],
        sample_refs: &[EpochRef],
        rng: &mut NnRng,
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let dim = cfg.features.total_dim;
        let sequences = |refs: &mut dyn Iterator<Item = (usize, usize)>| -> Vec<Vec<f64>> {
            let mut out = Vec::new();
            for (r, e) in refs {
                let (t0, t1) = epoch_frames(&feats[r], e);
                if t1 - t0 < cfg.hmm_states {
                    continue;
                }
                for c in 0..feats[r].channels() {
                    out.push(feats[r].channel_span(c, t0, t1));
                }
            }
            out
        };
        let mut seiz_refs = labels.iter().enumerate().flat_map(|(r, t)| {
            t.labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| l.is_seiz())
                .map(move |(e, _)| (r, e))
        });
        let mut bckg_refs = sample_refs.iter().filter(|r| !r.seiz).map(|r| (r.record, r.epoch));
        let mut models = Vec::new();
        let mut traces = Vec::new();
        let init = HmmInit {
            num_states: cfg.hmm_states,
            num_mixtures: cfg.hmm_mixtures,
            ..HmmInit::default()
        };
        for (label, seqs) in [
            (Label::Seiz, sequences(&mut seiz_refs)),
            (Label::Bckg, sequences(&mut bckg_refs)),
        ] {
            let seqs = if seqs.len() > cfg.hmm_max_sequences {
                let mut idx = sample(rng, seqs.len(), cfg.hmm_max_sequences).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| seqs[i].clone()).collect()
            } else {
                seqs
            };
            let frames: usize = seqs.iter().map(|s| s.len() / dim).sum();
            let m = initialize_hmm(label, &seqs, dim, &init, rng.random())?;
            let (m, trace) = baum_welch_train(&m, &seqs, cfg.hmm_iterations)?;
            info!(
                "{label} HMM: {} sequences, log-likelihood/frame {:.3} -> {:.3}",
                seqs.len(),
                trace[0] / frames as f64,
                trace[trace.len() - 1] / frames as f64
            );
            traces.push(trace.into_iter().map(|v| -v / frames as f64).collect::<Vec<_>>());
            models.push(m);
        }
        let bckg = models.pop().expect("two models");
        let seiz = models.pop().expect("two models");
        self.hmm = Some((seiz, bckg));
        Ok(traces[0].iter().zip(&traces[1]).map(|(a, b)| 0.5 * (a + b)).collect())
    }

    /// Like `gather`, but each window sees the channels of its pre-reduction
    /// score rows in a fresh random order before reduction.
    fn gather_shuffled(&self, pre: &[Track], refs: &[EpochRef], geo: &Geometry, rng: &mut NnRng) -> Result<Tensor> {
        let channels = pre[0].dim / 2;
        let mut order: Vec<usize> = (0..channels).collect();
        let mut rows = Vec::new();
        let mut row = vec![0.0; pre[0].dim];
        let mut data = Vec::new();
        for r in refs {
            order.shuffle(rng);
            rows.clear();
            pre[r.record].window_into(r.epoch, geo.before, geo.after, &mut rows);
            for src in rows.chunks(row.len()) {
                for (dst, &c) in order.iter().enumerate() {
                    row[2 * dst..2 * dst + 2].copy_from_slice(&src[2 * c..2 * c + 2]);
                }
                let code = self.reduce_row(&row)?;
                data.extend(code);
            }
        }
        let mut shape = vec![refs.len()];
        shape.extend_from_slice(&geo.unit_shape);
        Ok(Tensor::from_vec(&shape, data)?)
    }

    fn train_single(
        &mut self,
        mut net: Network,
        codes: &[Track],
        labels: &[EpochLabelTrack],
        fixed: Option<&[EpochRef]>,
        shuffle_from: Option<&[Track]>,
        rng: &mut NnRng,
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let geo = geometry(cfg).expect("network system");
        let mut opt = Optimizer::new(cfg.optimizer_config())?;
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut refs = match fixed {
                Some(f) => f.to_vec(),
                None => balanced_sample(labels, cfg.balance_ratio, rng)?,
            };
            refs.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in refs.chunks(cfg.batch_size) {
                let x = match shuffle_from {
                    Some(pre) => self.gather_shuffled(pre, chunk, &geo, rng)?,
                    None => gather(codes, chunk, &geo)?,
                };
                let y = targets(chunk);
                let (loss, _) = net.gradients(&x, &y, cfg.loss, rng)?;
                if cfg.clip_norm > 0.0 {
                    net.clip_recurrent_grads(cfg.clip_norm);
                }
                opt.step_network(&mut net);
                total += loss;
                batches += 1;
            }
            let mean = total / batches.max(1) as f64;
            debug!("{} epoch {epoch}: loss {mean:.5}", cfg.kind);
            trace.push(mean);
        }
        self.nets = vec![net];
        Ok(trace)
    }

    fn train_cnn_lstm(&mut self, tracks: &[Track], labels: &[EpochLabelTrack], rng: &mut NnRng) -> Result<Vec<f64>> {
        let cfg = self.config.clone();
        let plans = net_plans(&cfg)?;
        let mut frame_net = Network::build(&plans[0].specs, rng)?;
        let mut head = Network::build(&plans[1].specs, rng)?;
        let geo = geometry(&cfg).expect("network system");
        let (d, c) = (cfg.features.total_dim, cfg.channels);
        let emb_dim = geo.unit_shape[1];
        let mut opt_frame = Optimizer::new(cfg.optimizer_config())?;
        let mut opt_head = Optimizer::new(cfg.optimizer_config())?;
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let refs = balanced_sample(labels, cfg.balance_ratio, rng)?;
            // Neighbouring epochs share most of their frames, so batches are
            // built from short runs of adjacent windows of one class, with
            // both classes interleaved so every batch holds them in
            // proportion; single-class batches make training oscillate.
            let split: (Vec<EpochRef>, Vec<EpochRef>) = refs.iter().partition(|r| r.seiz);
            let mut keyed = Vec::new();
            for class in [&split.0, &split.1] {
                let mut runs: Vec<&[EpochRef]> = class.chunks(BATCH_RUN).collect();
                runs.shuffle(rng);
                let n = runs.len() as f64;
                keyed.extend(runs.into_iter().enumerate().map(|(i, r)| ((i as f64 + 0.5) / n, r)));
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            let runs: Vec<&[EpochRef]> = keyed.into_iter().map(|(_, r)| r).collect();
            let per_batch = cfg.batch_size.div_ceil(BATCH_RUN).max(1);
            let mut total = 0.0;
            let n_batches = runs.len().div_ceil(per_batch);
            for group in runs.chunks(per_batch) {
                let batch: Vec<EpochRef> = group.concat();
                let mut units: Vec<(usize, usize)> = batch
                    .iter()
                    .flat_map(|r| {
                        tracks[r.record]
                            .window_units(r.epoch, geo.before, geo.after)
                            .map(move |u| (r.record, u))
                    })
                    .collect();
                units.sort_unstable();
                units.dedup();
                let mut fx = Vec::with_capacity(units.len() * d * c);
                for &(r, u) in &units {
                    fx.extend_from_slice(tracks[r].unit(u));
                }
                let fx = Tensor::from_vec(&[units.len(), d, c, 1], fx)?;
                frame_net.zero_grads();
                head.zero_grads();
                let emb = frame_net.forward(&fx, true, rng)?;
                let mut index = Vec::with_capacity(batch.len() * geo.unit_shape[0]);
                let mut hx = Vec::with_capacity(index.capacity() * emb_dim);
                for r in &batch {
                    for u in tracks[r.record].window_units(r.epoch, geo.before, geo.after) {
                        let k = units.binary_search(&(r.record, u)).expect("unit present");
                        index.push(k);
                        hx.extend_from_slice(emb.row(k));
                    }
                }
                let hx = Tensor::from_vec(&[batch.len(), geo.unit_shape[0], emb_dim], hx)?;
                let y = head.forward(&hx, true, rng)?;
                let (loss, dy) = cfg.loss.eval(&y, &targets(&batch))?;
                let dhx = head.backward(&dy)?;
                let mut demb = vec![0.0; units.len() * emb_dim];
                for (j, &k) in index.iter().enumerate() {
                    let src = &dhx.data()[j * emb_dim..(j + 1) * emb_dim];
                    for (a, b) in demb[k * emb_dim..(k + 1) * emb_dim].iter_mut().zip(src) {
                        *a += b;
                    }
                }
                frame_net.backward(&Tensor::from_vec(&[units.len(), emb_dim], demb)?)?;
                if cfg.clip_norm > 0.0 {
                    head.clip_recurrent_grads(cfg.clip_norm);
                }
                opt_head.step_network(&mut head);
                opt_frame.step_network(&mut frame_net);
                total += loss;
            }
            let mean = total / n_batches.max(1) as f64;
            info!("cnn_lstm epoch {epoch}: loss {mean:.5}");
            trace.push(mean);
        }
        self.nets = vec![frame_net, head];
        Ok(trace)
    }
}

/// Runs the frame network over every frame of a record.
fn embed_frames(frame_net: &mut Network, frames: &Track, cfg: &SystemConfig) -> Result<Track> {
    let (d, c) = (cfg.features.total_dim, cfg.channels);
    let n = frames.units();
    let mut data = Vec::new();
    let mut dim = 0;
    for start in (0..n).step_by(FRAME_CHUNK) {
        let stop = (start + FRAME_CHUNK).min(n);
        let x = Tensor::from_vec(&[stop - start, d, c, 1], frames.data[start * frames.dim..stop * frames.dim].to_vec())?;
        let y = frame_net.predict(&x)?;
        dim = y.row_len();
        data.extend_from_slice(y.data());
    }
    Ok(Track {
        dim,
        per_epoch: frames.per_epoch,
        data,
    })
}

/// Trains every stage in pipeline order on `corpus`.
pub fn train_system(cfg: &SystemConfig, corpus: &[(EegRecord, AnnotationSet)]) -> Result<TrainedSystem> {
    build_system(cfg)?;
    if corpus.is_empty() {
        return Err(CoreError::Data("empty training corpus".into()));
    }
    let mut feats = Vec::with_capacity(corpus.len());
    let mut labels = Vec::with_capacity(corpus.len());
    for (record, ann) in corpus {
        check_record(cfg, record)?;
        let f = extract_features(record, &cfg.features)?;
        let l = annotations_to_epoch_labels(ann);
        if l.len() != f.epoch_count() {
            return Err(CoreError::Data(format!(
                "annotations cover {} epochs but the record has {}",
                l.len(),
                f.epoch_count()
            )));
        }
        feats.push(f);
        labels.push(l);
    }
    let mut rng = NnRng::seed_from_u64(cfg.seed);
    let fixed = balanced_sample(&labels, cfg.balance_ratio, &mut rng)?;
    info!(
        "training {} on {} records, balanced sample of {} epochs",
        cfg.kind,
        corpus.len(),
        fixed.len()
    );
    let mut sys = TrainedSystem::empty(cfg);
    if cfg.kind.uses_hmm() {
        sys.loss_trace = sys.train_hmms(&feats, &labels, &fixed, &mut rng)?;
    } else {
        let d = cfg.features.total_dim;
        sys.feature_scaler = Some(Scaler::standard(feats.iter().map(|f| f.values()), d)?);
    }
    if cfg.kind == SystemKind::HmmOnly {
        return Ok(sys);
    }
    let pre = feats.iter().map(|f| sys.pre_reduction(f)).collect::<Result<Vec<_>>>()?;
    drop(feats);
    let reduced_dim = match cfg.kind {
        SystemKind::HmmSda | SystemKind::HmmLstm => Some(cfg.pca_dim),
        SystemKind::IpcaLstm => Some(cfg.ipca_dim),
        _ => None,
    };
    let shuffle = cfg.channel_shuffle && cfg.kind == SystemKind::HmmLstm;
    let (codes, pre) = if let Some(k) = reduced_dim {
        // Reduction is fitted on the class-balanced subset.
        let rows = Track {
            dim: pre[0].dim,
            per_epoch: 1,
            data: fixed.iter().flat_map(|r| pre[r.record].unit(r.epoch).to_vec()).collect(),
        };
        let m = to_matrix(&rows);
        let model = if cfg.kind == SystemKind::IpcaLstm {
            ipca_fit(&m, k, cfg.ipca_batch)?
        } else {
            pca_fit(&m, k)?
        };
        let fitted = rows.map_rows(k, |r| model.transform(r))?;
        sys.code_scaler = Some(if cfg.kind == SystemKind::HmmSda {
            Scaler::min_max(fitted.data.chunks(k), k)?
        } else {
            Scaler::standard(fitted.data.chunks(k), k)?
        });
        sys.reducer = Some(model);
        let codes = pre.iter().map(|t| sys.reduce(t)).collect::<Result<Vec<_>>>()?;
        // Pre-reduction rows are only needed again for channel shuffling.
        (codes, if shuffle { pre } else { Vec::new() })
    } else {
        (pre, Vec::new())
    };
    sys.loss_trace = match cfg.kind {
        SystemKind::HmmSda => {
            let x: Vec<f64> = fixed.iter().flat_map(|r| codes[r.record].unit(r.epoch).to_vec()).collect();
            let x = Tensor::from_vec(&[fixed.len(), cfg.pca_dim], x)?;
            let sda = SdaConfig {
                hidden: cfg.sda_hidden.clone(),
                corruption: cfg.sda_corruption,
                pretrain_learning_rate: cfg.sda_pretrain_learning_rate,
                pretrain_epochs: cfg.sda_pretrain_epochs,
                pretrain_batch: cfg.sda_pretrain_batch,
                finetune_learning_rate: cfg.learning_rate,
                finetune_epochs: cfg.epochs,
                finetune_batch: cfg.batch_size,
            };
            let pre = sda_pretrain(&sda, &x, &mut rng)?;
            for (i, t) in pre.traces.iter().enumerate() {
                if let (Some(a), Some(b)) = (t.first(), t.last()) {
                    info!("SdA layer {i} reconstruction loss {a:.4} -> {b:.4}");
                }
            }
            let net = assemble_classifier(&pre.layers, 2)?;
            sys.train_single(net, &codes, &labels, Some(&fixed), None, &mut rng)?
        }
        SystemKind::CnnLstm => sys.train_cnn_lstm(&codes, &labels, &mut rng)?,
        _ => {
            let plans = net_plans(cfg)?;
            let net = Network::build(&plans[0].specs, &mut rng)?;
            sys.train_single(net, &codes, &labels, None, shuffle.then_some(&pre[..]), &mut rng)?
        }
    };
    Ok(sys)
}

/// One posterior per epoch of `record`, each from the window centered on it.
pub fn infer_system(system: &TrainedSystem, record: &EegRecord) -> Result<PosteriorTrack> {
    let mut nets = system.nets.clone();
    infer_with(system, &mut nets, record)
}

fn infer_with(system: &TrainedSystem, nets: &mut [Network], record: &EegRecord) -> Result<PosteriorTrack> {
    check_record(&system.config, record)?;
    let feats = extract_features(record, &system.config.features)?;
    PosteriorTrack::new(system.decode(&feats, nets)?)
}

/// Decodes records on up to `jobs` threads; output order follows input.
pub fn infer_records(system: &TrainedSystem, records: &[EegRecord], jobs: usize) -> Result<Vec<PosteriorTrack>> {
    let jobs = jobs.clamp(1, records.len().max(1));
    if jobs == 1 {
        let mut nets = system.nets.clone();
        return records.iter().map(|r| infer_with(system, &mut nets, r)).collect();
    }
    let mut slots: Vec<Option<Result<PosteriorTrack>>> = (0..records.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                scope.spawn(move || {
                    let mut nets = system.nets.clone();
                    (j..records.len())
                        .step_by(jobs)
                        .map(|i| (i, infer_with(system, &mut nets, &records[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("inference worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every record decoded")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_record, SynthConfig};

    fn tiny(kind: SystemKind) -> SystemConfig {
        let mut cfg = SystemConfig::defaults(kind);
        cfg.seed = 5;
        cfg.hmm_mixtures = 2;
        cfg.hmm_iterations = 3;
        cfg.hmm_max_sequences = 300;
        cfg.sda_hidden = vec![8, 6];
        cfg.sda_pretrain_epochs = 3;
        cfg.lstm_hidden = 4;
        cfg.cnn_filters = vec![2, 2, 2];
        cfg.mlp_units = 4;
        cfg.bilstm_hidden = vec![3, 3];
        cfg.epochs = 2;
        cfg.batch_size = 8;
        cfg
    }

    fn corpus(seconds: f64, seed: u64) -> Vec<(EegRecord, AnnotationSet)> {
        let cfg = SynthConfig {
            duration_s: seconds,
            channels: 22,
            seizure_fraction: 0.25,
            seizure_min_s: 8.0,
            seizure_max_s: 12.0,
            artifacts_per_min: 0.0,
            ..SynthConfig::default()
        };
        vec![synthesize_record(&cfg, seed).unwrap()]
    }

    #[test]
    fn every_kind_trains_and_aligns_with_labels() {
        let data = corpus(60.0, 1);
        let labels = annotations_to_epoch_labels(&data[0].1);
        for kind in SystemKind::ALL {
            let sys = train_system(&tiny(kind), &data).unwrap();
            assert!(sys.loss_trace.iter().all(|v| v.is_finite()), "{kind}");
            let post = infer_system(&sys, &data[0].0).unwrap();
            assert_eq!(post.len(), labels.len(), "{kind}");
            let again = infer_system(&sys, &data[0].0).unwrap();
            assert_eq!(post, again, "{kind}");
        }
    }

    #[test]
    fn identical_models_give_even_odds() {
        let data = corpus(20.0, 2);
        let mut sys = train_system(&tiny(SystemKind::HmmOnly), &data).unwrap();
        let seiz = sys.hmm.as_ref().unwrap().0.clone();
        sys.hmm = Some((seiz.clone(), seiz));
        let post = infer_system(&sys, &data[0].0).unwrap();
        assert!(post.values().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn hmm_posterior_is_monotone_in_mean_llr() {
        let data = corpus(30.0, 3);
        let sys = train_system(&tiny(SystemKind::HmmOnly), &data).unwrap();
        let feats = extract_features(&data[0].0, &sys.config.features).unwrap();
        let (s, b) = sys.hmm.as_ref().unwrap();
        let grid = epoch_scores(s, b, &feats).unwrap();
        let post = infer_system(&sys, &data[0].0).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..grid.epochs()).map(|e| (grid.mean_llr(e), post.values()[e])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn short_records_and_single_class_corpora_fail() {
        let data = corpus(30.0, 4);
        let sys = train_system(&tiny(SystemKind::HmmOnly), &data).unwrap();
        let mut lstm = sys.clone();
        lstm.config.kind = SystemKind::HmmLstm;
        assert!(matches!(infer_system(&lstm, &data[0].0), Err(CoreError::Data(_))));
        let quiet = SynthConfig {
            duration_s: 30.0,
            seizure_fraction: 0.0,
            artifacts_per_min: 0.0,
            ..SynthConfig::default()
        };
        let bckg_only = vec![synthesize_record(&quiet, 1).unwrap()];
        assert!(matches!(
            train_system(&tiny(SystemKind::HmmOnly), &bckg_only),
            Err(CoreError::Data(_))
        ));
    }

    #[test]
    fn parallel_inference_matches_sequential() {
        let data = corpus(30.0, 6);
        let sys = train_system(&tiny(SystemKind::HmmOnly), &data).unwrap();
        let records: Vec<EegRecord> = (0..3).map(|s| corpus(25.0, 10 + s).remove(0).0).collect();
        let seq = infer_records(&sys, &records, 1).unwrap();
        let par = infer_records(&sys, &records, 3).unwrap();
        assert_eq!(seq, par);
    }
}
