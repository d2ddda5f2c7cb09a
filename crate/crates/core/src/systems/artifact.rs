//! On-disk system artifact: a directory of stage files plus a manifest of
//! SHA-256 content hashes that `load_system` verifies.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use eegdet_nn::Network;
use sha2::{Digest, Sha256};

use super::data::Scaler;
use super::train::TrainedSystem;
use super::{SystemConfig, SystemKind};
use crate::config::Document;
use crate::dimred::PcaModel;
use crate::error::{CoreError, Result};
use crate::hmm::GmmHmm;

pub const MANIFEST_FILE: &str = "manifest.txt";
const CONFIG_FILE: &str = "system.cfg";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CoreError::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `name  hash` lines for every file in `files`, sorted by name.
pub fn write_manifest(dir: &Path, files: &[String]) -> Result<()> {
    let mut names = files.to_vec();
    names.sort();
    let mut out = String::new();
    for n in &names {
        out.push_str(&format!("{}  {}\n", sha256_file(&dir.join(n))?, n));
    }
    fs::write(dir.join(MANIFEST_FILE), out)?;
    Ok(())
}

/// Checks every manifest entry against the file on disk.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut names = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, name) = line
            .split_once("  ")
            .ok_or_else(|| CoreError::Data(format!("malformed manifest line `{line}`")))?;
        let actual = sha256_file(&dir.join(name))?;
        if actual != hash {
            return Err(CoreError::Data(format!("{name}: content hash does not match the manifest")));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

fn save_with(dir: &Path, name: &str, files: &mut Vec<String>, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    files.push(name.to_string());
    Ok(())
}

pub fn save_system(system: &TrainedSystem, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let doc = Document {
        sections: vec![system.config.to_section("system")],
    };
    fs::write(dir.join(CONFIG_FILE), doc.render())?;
    files.push(CONFIG_FILE.to_string());
    if let Some((s, b)) = &system.hmm {
        save_with(dir, "hmm_seiz.bin", &mut files, |w| s.write_to(w))?;
        save_with(dir, "hmm_bckg.bin", &mut files, |w| b.write_to(w))?;
    }
    if let Some(s) = &system.feature_scaler {
        save_with(dir, "feature_scaler.bin", &mut files, |w| s.write_to(w))?;
    }
    if let Some(p) = &system.reducer {
        let name = if system.config.kind == SystemKind::IpcaLstm {
            "ipca.bin"
        } else {
            "pca.bin"
        };
        save_with(dir, name, &mut files, |w| p.write_to(w))?;
    }
    if let Some(s) = &system.code_scaler {
        save_with(dir, "code_scaler.bin", &mut files, |w| s.write_to(w))?;
    }
    let net_names: &[&str] = if system.config.kind == SystemKind::CnnLstm {
        &["frame_net.bin", "head_net.bin"]
    } else {
        &["net.bin"]
    };
    for (net, name) in system.nets.iter().zip(net_names) {
        save_with(dir, name, &mut files, |w| Ok(net.write_to(w)?))?;
    }
    let mut csv = String::from("epoch,loss\n");
    for (i, v) in system.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    fs::write(dir.join("train_loss.csv"), csv)?;
    files.push("train_loss.csv".to_string());
    write_manifest(dir, &files)
}

fn open(dir: &Path, name: &str) -> Result<Option<BufReader<fs::File>>> {
    let p = dir.join(name);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(BufReader::new(fs::File::open(p)?)))
}

pub fn load_system(dir: &Path) -> Result<TrainedSystem> {
    verify_manifest(dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| CoreError::Unreadable {
        path: cfg_path.clone(),
        source: e,
    })?;
    let doc = Document::parse(&text)?;
    doc.check_sections(&["system"])?;
    let config = SystemConfig::from_section(doc.section("system"), "system", None)?;
    let kind = config.kind;
    let hmm = match (open(dir, "hmm_seiz.bin")?, open(dir, "hmm_bckg.bin")?) {
        (Some(mut s), Some(mut b)) => Some((GmmHmm::read_from(&mut s)?, GmmHmm::read_from(&mut b)?)),
        _ => None,
    };
    let feature_scaler = open(dir, "feature_scaler.bin")?
        .map(|mut r| Scaler::read_from(&mut r))
        .transpose()?;
    let reducer = match open(dir, if kind == SystemKind::IpcaLstm { "ipca.bin" } else { "pca.bin" })? {
        Some(mut r) => Some(PcaModel::read_from(&mut r)?),
        None => None,
    };
    let code_scaler = open(dir, "code_scaler.bin")?
        .map(|mut r| Scaler::read_from(&mut r))
        .transpose()?;
    let net_names: &[&str] = if kind == SystemKind::CnnLstm {
        &["frame_net.bin", "head_net.bin"]
    } else if kind.uses_network() {
        &["net.bin"]
    } else {
        &[]
    };
    let mut nets = Vec::new();
    for name in net_names {
        let mut r = open(dir, name)?.ok_or_else(|| CoreError::Data(format!("artifact is missing {name}")))?;
        nets.push(Network::read_from(&mut r)?);
    }
    if kind.uses_hmm() && hmm.is_none() {
        return Err(CoreError::Data("artifact is missing its HMM files".into()));
    }
    let loss_trace = match fs::read_to_string(dir.join("train_loss.csv")) {
        Ok(t) => t
            .lines()
            .skip(1)
            .filter_map(|l| l.split_once(','))
            .map(|(_, v)| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CoreError::Data(format!("bad loss value `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?,
        Err(_) => Vec::new(),
    };
    Ok(TrainedSystem {
        config,
        hmm,
        feature_scaler,
        reducer,
        code_scaler,
        nets,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::EegRecord;
    use crate::synth::{synthesize_record, SynthConfig};
    use crate::systems::{infer_system, train_system};

    #[test]
    fn saved_artifact_reloads_and_detects_tampering() {
        let (rec, ann) = synthesize_record(
            &SynthConfig {
                duration_s: 40.0,
                seizure_fraction: 0.25,
                seizure_min_s: 8.0,
                seizure_max_s: 12.0,
                artifacts_per_min: 0.0,
                ..SynthConfig::default()
            },
            9,
        )
        .unwrap();
        let mut cfg = SystemConfig::defaults(SystemKind::CnnLstm);
        cfg.cnn_filters = vec![2, 2, 2];
        cfg.bilstm_hidden = vec![2, 2];
        cfg.epochs = 1;
        let sys = train_system(&cfg, &[(rec.clone(), ann)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_system(&sys, dir.path()).unwrap();
        let back = load_system(dir.path()).unwrap();
        assert_eq!(back.config, sys.config);
        assert_eq!(back.loss_trace, sys.loss_trace);
        let p: EegRecord = rec;
        assert_eq!(infer_system(&back, &p).unwrap(), infer_system(&sys, &p).unwrap());

        // Re-saving produces byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        save_system(&back, dir2.path()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(dir2.path().join(MANIFEST_FILE)).unwrap()
        );

        let mut bytes = fs::read(dir.path().join("head_net.bin")).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(dir.path().join("head_net.bin"), bytes).unwrap();
        assert!(matches!(load_system(dir.path()), Err(CoreError::Data(_))));
    }
}
