//! One function per subcommand. Each writes its outputs plus a resolved
//! `config.cfg` and a `manifest.txt` of content hashes into its output
//! directory, and returns the one-line summary for stdout.

use std::fs;
use std::path::{Path, PathBuf};

use eegdet_core::error::{CoreError, Result};
use eegdet_core::features::extract_features;
use eegdet_core::scoring::{
    det_curve, metrics, metrics_csv, score_epochs, smooth_hypotheses, ConfusionCounts, PosteriorTrack,
};
use eegdet_core::signal::{
    annotations_to_epoch_labels, load_annotations, load_record, save_annotations, save_record, AnnotationSet,
    EegRecord, EpochLabelTrack,
};
use eegdet_core::synth::synthesize_record;
use eegdet_core::systems::{infer_records, load_system, save_system, train_system, write_manifest, MANIFEST_FILE};
use eegdet_nn::{Activation, OptimizerKind};
use log::info;

use crate::experiment::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.cfg";
const RECORD_EXT: &str = "ndet";
const POSTERIOR_SUFFIX: &str = ".post.csv";

/// A named record with its reference annotations.
pub type Item = (String, EegRecord, AnnotationSet);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Unreadable {
        path: path.to_path_buf(),
        source,
    }
}

fn list_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry?.path();
        if p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path, suffix: &str) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.strip_suffix(suffix).unwrap_or(name).to_string()
}

/// Records given as files or as directories of `.ndet` files.
fn expand_records(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_files(p, &format!(".{RECORD_EXT}"))?);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CoreError::Config("no input records given".into()));
    }
    Ok(out)
}

/// Every `<name>.ndet` in `dir` with its `<name>.csv` annotations.
pub fn load_corpus(dir: &Path) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    for p in list_files(dir, &format!(".{RECORD_EXT}"))? {
        let record = load_record(&p)?;
        let ann = load_annotations(&p.with_extension("csv"), Some(record.duration_s()))?;
        items.push((stem(&p, &format!(".{RECORD_EXT}")), record, ann));
    }
    if items.is_empty() {
        return Err(CoreError::Data(format!("{}: no .{RECORD_EXT} records", dir.display())));
    }
    Ok(items)
}

fn synth_split(cfg: &ExperimentConfig, eval: bool) -> Result<Vec<Item>> {
    let (n, tag) = if eval {
        (cfg.eval_records, "eval")
    } else {
        (cfg.train_records, "train")
    };
    (0..n)
        .map(|i| {
            let (r, a) = synthesize_record(&cfg.synth, cfg.record_seed(eval, i))?;
            Ok((format!("{tag}_{i:03}"), r, a))
        })
        .collect()
}

/// The configured corpus directory for a split, or a synthesized one.
pub fn corpus(cfg: &ExperimentConfig, eval: bool) -> Result<Vec<Item>> {
    let dir = if eval { &cfg.eval_corpus } else { &cfg.train_corpus };
    match dir {
        Some(d) => load_corpus(d),
        None => synth_split(cfg, eval),
    }
}

fn write_corpus(dir: &Path, items: &[Item]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, r, a) in items {
        save_record(r, &dir.join(format!("{name}.{RECORD_EXT}")))?;
        save_annotations(a, &dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(rel.join("/"));
        }
    }
    Ok(())
}

/// Writes the resolved config and a manifest over everything in `dir`.
pub fn finish_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_document().render())?;
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.retain(|f| f != MANIFEST_FILE);
    write_manifest(dir, &files)
}

fn total_seconds(items: &[Item]) -> f64 {
    items.iter().map(|(_, r, _)| r.duration_s()).sum()
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let train = synth_split(cfg, false)?;
    let eval = synth_split(cfg, true)?;
    write_corpus(&out.join("train"), &train)?;
    write_corpus(&out.join("eval"), &eval)?;
    finish_dir(out, cfg)?;
    Ok(format!(
        "synth: {} train + {} eval records ({:.0} s + {:.0} s) -> {}",
        train.len(),
        eval.len(),
        total_seconds(&train),
        total_seconds(&eval),
        out.display()
    ))
}

pub fn cmd_features(cfg: &ExperimentConfig, inputs: &[PathBuf], out: &Path) -> Result<String> {
    let paths = expand_records(inputs)?;
    fs::create_dir_all(out)?;
    let mut frames = 0;
    for p in &paths {
        let feats = extract_features(&load_record(p)?, &cfg.system.features)?;
        frames += feats.frames();
        feats.save(&out.join(format!("{}.feat", stem(p, &format!(".{RECORD_EXT}")))))?;
    }
    finish_dir(out, cfg)?;
    Ok(format!(
        "features: {} records, {frames} frames of {} dims -> {}",
        paths.len(),
        cfg.system.features.total_dim,
        out.display()
    ))
}

fn train_on(cfg: &ExperimentConfig, items: &[Item], out: &Path) -> Result<f64> {
    let data: Vec<(EegRecord, AnnotationSet)> = items.iter().map(|(_, r, a)| (r.clone(), a.clone())).collect();
    info!("training {} on {} records", cfg.system.kind, data.len());
    let sys = train_system(&cfg.system, &data)?;
    save_system(&sys, out)?;
    finish_dir(out, cfg)?;
    Ok(sys.loss_trace.last().copied().unwrap_or(f64::NAN))
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let items = corpus(cfg, false)?;
    let loss = train_on(cfg, &items, out)?;
    Ok(format!(
        "train: {} on {} records, final loss {loss:.6} -> {}",
        cfg.system.kind,
        items.len(),
        out.display()
    ))
}

fn write_posteriors(dir: &Path, names: &[String], posts: &[PosteriorTrack]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (n, p) in names.iter().zip(posts) {
        fs::write(dir.join(format!("{n}{POSTERIOR_SUFFIX}")), p.to_csv())?;
    }
    Ok(())
}

pub fn cmd_infer(cfg: &ExperimentConfig, model: &Path, inputs: &[PathBuf], out: &Path, jobs: usize) -> Result<String> {
    let sys = load_system(model)?;
    let paths = expand_records(inputs)?;
    let records = paths.iter().map(|p| load_record(p)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = paths.iter().map(|p| stem(p, &format!(".{RECORD_EXT}"))).collect();
    let posts = infer_records(&sys, &records, jobs)?;
    write_posteriors(out, &names, &posts)?;
    finish_dir(out, cfg)?;
    let epochs: usize = posts.iter().map(|p| p.len()).sum();
    Ok(format!(
        "infer: {} posteriors for {} records ({epochs} epochs) -> {}",
        sys.config.kind,
        records.len(),
        out.display()
    ))
}

/// Posterior files in `posteriors` paired with `<name>.csv` in `reference`.
fn load_pairs(posteriors: &Path, reference: &Path) -> Result<Vec<(PosteriorTrack, EpochLabelTrack)>> {
    let files = list_files(posteriors, POSTERIOR_SUFFIX)?;
    if files.is_empty() {
        return Err(CoreError::Data(format!("{}: no posterior files", posteriors.display())));
    }
    let mut pairs = Vec::new();
    for p in files {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let post = PosteriorTrack::from_csv(&text)?;
        let ann = load_annotations(&reference.join(format!("{}.csv", stem(&p, POSTERIOR_SUFFIX))), None)?;
        let labels = annotations_to_epoch_labels(&ann);
        if labels.len() != post.len() {
            return Err(CoreError::Data(format!(
                "{}: {} posteriors for {} reference epochs",
                p.display(),
                post.len(),
                labels.len()
            )));
        }
        pairs.push((post, labels));
    }
    Ok(pairs)
}

fn pooled_counts(cfg: &ExperimentConfig, pairs: &[(PosteriorTrack, EpochLabelTrack)]) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for (post, reference) in pairs {
        let (hyp, _) = smooth_hypotheses(post, &cfg.smoothing)?;
        total.add(&score_epochs(reference, &hyp)?);
    }
    Ok(total)
}

fn score_summary(cfg: &ExperimentConfig, c: &ConfusionCounts) -> Result<String> {
    let m = metrics(c, cfg.fa_mode)?;
    Ok(format!(
        "sensitivity {:.4} specificity {:.4} fa_per_24h {:.2}",
        m.sensitivity, m.specificity, m.fa_per_24h
    ))
}

pub fn cmd_score(cfg: &ExperimentConfig, posteriors: &Path, reference: &Path, out: &Path) -> Result<String> {
    let pairs = load_pairs(posteriors, reference)?;
    let counts = pooled_counts(cfg, &pairs)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&counts, cfg.fa_mode)?)?;
    finish_dir(out, cfg)?;
    Ok(format!("score: {} records, {}", pairs.len(), score_summary(cfg, &counts)?))
}

fn det_csv(cfg: &ExperimentConfig, pairs: &[(PosteriorTrack, EpochLabelTrack)]) -> Result<String> {
    let refs: Vec<(&PosteriorTrack, &EpochLabelTrack)> = pairs.iter().map(|(p, l)| (p, l)).collect();
    Ok(det_curve(&refs, &cfg.smoothing, &cfg.thresholds(), cfg.fa_mode)?.to_csv())
}

pub fn cmd_det(cfg: &ExperimentConfig, posteriors: &Path, reference: &Path, out: &Path) -> Result<String> {
    let pairs = load_pairs(posteriors, reference)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("det.csv"), det_csv(cfg, &pairs)?)?;
    finish_dir(out, cfg)?;
    Ok(format!(
        "det: {} thresholds over {} records -> {}",
        cfg.det_points,
        pairs.len(),
        out.join("det.csv").display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Optimizer,
    Activation,
}

impl std::str::FromStr for Axis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Axis> {
        match s {
            "optimizer" => Ok(Axis::Optimizer),
            "activation" => Ok(Axis::Activation),
            other => Err(CoreError::Config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

/// The configs of an ablation, labelled by variant; everything but the axis
/// stays as configured.
pub fn ablation_variants(cfg: &ExperimentConfig, axis: Axis) -> Result<Vec<(String, ExperimentConfig)>> {
    match axis {
        Axis::Optimizer => Ok(OptimizerKind::ALL
            .iter()
            .map(|&k| {
                let mut c = cfg.clone();
                c.system = cfg.system.with_optimizer(k);
                (k.name().to_string(), c)
            })
            .collect()),
        Axis::Activation => Activation::ALL
            .iter()
            .map(|&a| {
                let mut c = cfg.clone();
                c.system = cfg.system.with_activation(a)?;
                Ok((a.name().to_string(), c))
            })
            .collect(),
    }
}

pub fn cmd_ablate(cfg: &ExperimentConfig, axis: Axis, out: &Path, jobs: usize) -> Result<String> {
    let variants = ablation_variants(cfg, axis)?;
    let train = corpus(cfg, false)?;
    let eval = corpus(cfg, true)?;
    let data: Vec<(EegRecord, AnnotationSet)> = train.iter().map(|(_, r, a)| (r.clone(), a.clone())).collect();
    let records: Vec<EegRecord> = eval.iter().map(|(_, r, _)| r.clone()).collect();
    let labels: Vec<EpochLabelTrack> = eval.iter().map(|(_, _, a)| annotations_to_epoch_labels(a)).collect();
    let mut table = String::from("variant,sensitivity,specificity,fa_per_24h\n");
    for (name, v) in &variants {
        info!("ablation {name}: training {}", v.system.kind);
        let sys = train_system(&v.system, &data)?;
        let posts = infer_records(&sys, &records, jobs)?;
        let pairs: Vec<_> = posts.into_iter().zip(labels.iter().cloned()).collect();
        let m = metrics(&pooled_counts(v, &pairs)?, v.fa_mode)?;
        table.push_str(&format!(
            "{name},{:.6},{:.6},{:.4}\n",
            m.sensitivity, m.specificity, m.fa_per_24h
        ));
    }
    fs::create_dir_all(out)?;
    let axis_name = match axis {
        Axis::Optimizer => "optimizer",
        Axis::Activation => "activation",
    };
    fs::write(out.join(format!("ablation_{axis_name}.csv")), &table)?;
    finish_dir(out, cfg)?;
    Ok(format!(
        "ablate: {} {axis_name} variants of {} -> {}",
        variants.len(),
        cfg.system.kind,
        out.display()
    ))
}

/// synth (unless corpora are configured) → train → infer → score → det.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<String> {
    let train = corpus(cfg, false)?;
    let eval = corpus(cfg, true)?;
    if cfg.train_corpus.is_none() {
        write_corpus(&out.join("corpus").join("train"), &train)?;
    }
    if cfg.eval_corpus.is_none() {
        write_corpus(&out.join("corpus").join("eval"), &eval)?;
    }
    train_on(cfg, &train, &out.join("model"))?;
    let sys = load_system(&out.join("model"))?;
    let records: Vec<EegRecord> = eval.iter().map(|(_, r, _)| r.clone()).collect();
    let names: Vec<String> = eval.iter().map(|(n, _, _)| n.clone()).collect();
    let posts = infer_records(&sys, &records, jobs)?;
    write_posteriors(&out.join("posteriors"), &names, &posts)?;
    let pairs: Vec<_> = posts
        .into_iter()
        .zip(eval.iter().map(|(_, _, a)| annotations_to_epoch_labels(a)))
        .collect();
    let counts = pooled_counts(cfg, &pairs)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&counts, cfg.fa_mode)?)?;
    fs::write(out.join("det.csv"), det_csv(cfg, &pairs)?)?;
    finish_dir(out, cfg)?;
    Ok(format!("run: {} {}", cfg.system.kind, score_summary(cfg, &counts)?))
}
