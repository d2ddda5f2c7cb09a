//! Batch PCA and incremental PCA (sequential Karhunen-Loeve rank update).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::binio;
use crate::error::{CoreError, Result};

const PCA_MAGIC: &[u8; 4] = b"NPCA";
const PCA_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    /// output_dim × input_dim, row-major, orthonormal rows.
    components: Vec<f64>,
    singular_values: Vec<f64>,
    samples_seen: u64,
}

impl PcaModel {
    /// An unfitted model, ready for `ipca_partial_fit`.
    pub fn empty(input_dim: usize, output_dim: usize) -> Result<PcaModel> {
        if output_dim == 0 || output_dim > input_dim {
            return Err(CoreError::Config(format!(
                "PCA output dimension {output_dim} must lie in 1..={input_dim}"
            )));
        }
        Ok(PcaModel {
            input_dim,
            output_dim,
            mean: vec![0.0; input_dim],
            components: vec![0.0; output_dim * input_dim],
            singular_values: vec![0.0; output_dim],
            samples_seen: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Variance of the data along each component (unbiased).
    pub fn explained_variance(&self) -> Vec<f64> {
        let denom = (self.samples_seen.max(2) - 1) as f64;
        self.singular_values.iter().map(|s| s * s / denom).collect()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(CoreError::Dimension {
                context: "pca input",
                expected: self.input_dim,
                actual: len,
            });
        }
        Ok(())
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut out = vec![0.0; self.output_dim];
        self.transform_into(x, &mut out);
        Ok(out)
    }

    fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.components[k * d..(k + 1) * d];
            *o = row
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(c, (v, m))| c * (v - m))
                .sum();
        }
    }

    /// Row-major batch (n × input_dim) to row-major (n × output_dim).
    pub fn transform_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        if rows.len() % self.input_dim != 0 {
            return Err(CoreError::Dimension {
                context: "pca batch",
                expected: self.input_dim,
                actual: rows.len() % self.input_dim,
            });
        }
        let n = rows.len() / self.input_dim;
        let mut out = vec![0.0; n * self.output_dim];
        for i in 0..n {
            self.transform_into(
                &rows[i * self.input_dim..(i + 1) * self.input_dim],
                &mut out[i * self.output_dim..(i + 1) * self.output_dim],
            );
        }
        Ok(out)
    }

    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim {
            return Err(CoreError::Dimension {
                context: "pca code",
                expected: self.output_dim,
                actual: y.len(),
            });
        }
        let mut x = self.mean.clone();
        for (k, &yk) in y.iter().enumerate() {
            for (xi, c) in x.iter_mut().zip(self.component(k)) {
                *xi += yk * c;
            }
        }
        Ok(x)
    }

    /// Max absolute deviation of the component Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.output_dim {
            for j in 0..self.output_dim {
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(self.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_header(w, PCA_MAGIC, PCA_VERSION)?;
        w.write_u32::<LittleEndian>(self.input_dim as u32)?;
        w.write_u32::<LittleEndian>(self.output_dim as u32)?;
        w.write_u64::<LittleEndian>(self.samples_seen)?;
        binio::write_f64s(w, &self.mean)?;
        binio::write_f64s(w, &self.components)?;
        binio::write_f64s(w, &self.singular_values)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<PcaModel> {
        binio::read_header(r, PCA_MAGIC, PCA_VERSION)?;
        let input_dim = r.read_u32::<LittleEndian>()? as usize;
        let output_dim = r.read_u32::<LittleEndian>()? as usize;
        let samples_seen = r.read_u64::<LittleEndian>()?;
        let mean = binio::read_f64s(r)?;
        let components = binio::read_f64s(r)?;
        let singular_values = binio::read_f64s(r)?;
        if mean.len() != input_dim
            || components.len() != input_dim * output_dim
            || singular_values.len() != output_dim
        {
            return Err(CoreError::Data("PCA model file has inconsistent sizes".into()));
        }
        Ok(PcaModel {
            input_dim,
            output_dim,
            mean,
            components,
            singular_values,
            samples_seen,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PcaModel> {
        let f = File::open(path).map_err(|source| CoreError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        PcaModel::read_from(&mut BufReader::new(f))
    }
}

/// Top `k` right singular vectors (rows) and singular values, sorted
/// descending, with each row's largest-magnitude entry made positive.
fn top_right_singular(x: DMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = x.ncols();
    let svd = x.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CoreError::Numeric("SVD did not produce right singular vectors".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    if order.len() < k {
        return Err(CoreError::Config(format!(
            "cannot extract {k} components from rank-{} data",
            order.len()
        )));
    }
    let mut comps = Vec::with_capacity(k * d);
    let mut values = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let row: Vec<f64> = (0..d).map(|j| v_t[(i, j)]).collect();
        let pivot = row
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        comps.extend(row.into_iter().map(|v| v * sign));
        values.push(s[i].max(0.0));
    }
    if comps.iter().chain(&values).any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("SVD produced non-finite values".into()));
    }
    Ok((comps, values))
}

fn column_means(data: &DMatrix<f64>) -> Vec<f64> {
    let n = data.nrows() as f64;
    (0..data.ncols()).map(|j| data.column(j).sum() / n).collect()
}

pub fn pca_fit(data: &DMatrix<f64>, out_dim: usize) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(CoreError::Data(format!("PCA needs at least 2 samples, got {n}")));
    }
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(CoreError::Config(format!(
            "PCA output dimension {out_dim} must lie in 1..={}",
            n.min(d)
        )));
    }
    let mean = column_means(data);
    let mut centered = data.clone();
    for j in 0..d {
        for i in 0..n {
            centered[(i, j)] -= mean[j];
        }
    }
    let (components, singular_values) = top_right_singular(centered, out_dim)?;
    Ok(PcaModel {
        input_dim: d,
        output_dim: out_dim,
        mean,
        components,
        singular_values,
        samples_seen: n as u64,
    })
}

pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.transform(x)
}

/// Folds one batch into the model: SVD of [diag(S)·components; centered
/// batch; mean-correction row].
pub fn ipca_partial_fit(model: &PcaModel, batch: &DMatrix<f64>) -> Result<PcaModel> {
    let (b, d) = batch.shape();
    model.check_dim(d)?;
    if b == 0 {
        return Err(CoreError::Data("empty IPCA batch".into()));
    }
    let k = model.output_dim;
    let seen = model.samples_seen as f64;
    let total = seen + b as f64;
    let batch_mean = column_means(batch);
    let new_mean: Vec<f64> = model
        .mean
        .iter()
        .zip(&batch_mean)
        .map(|(m, bm)| (seen * m + b as f64 * bm) / total)
        .collect();
    let x = if model.samples_seen == 0 {
        if b < k {
            return Err(CoreError::Config(format!(
                "first IPCA batch has {b} rows, fewer than {k} components"
            )));
        }
        DMatrix::from_fn(b, d, |i, j| batch[(i, j)] - batch_mean[j])
    } else {
        let corr = (seen * b as f64 / total).sqrt();
        DMatrix::from_fn(k + b + 1, d, |i, j| {
            if i < k {
                model.singular_values[i] * model.components[i * d + j]
            } else if i < k + b {
                batch[(i - k, j)] - batch_mean[j]
            } else {
                corr * (model.mean[j] - batch_mean[j])
            }
        })
    };
    let (components, singular_values) = top_right_singular(x, k)?;
    Ok(PcaModel {
        input_dim: d,
        output_dim: k,
        mean: new_mean,
        components,
        singular_values,
        samples_seen: model.samples_seen + b as u64,
    })
}

/// IPCA over consecutive row batches of `data`.
pub fn ipca_fit(data: &DMatrix<f64>, out_dim: usize, batch_size: usize) -> Result<PcaModel> {
    if batch_size == 0 {
        return Err(CoreError::Config("IPCA batch size must be positive".into()));
    }
    let (n, d) = data.shape();
    let mut model = PcaModel::empty(d, out_dim)?;
    let mut start = 0;
    while start < n {
        let mut stop = (start + batch_size).min(n);
        // Fold a short tail into the first batch so it has enough rows.
        if start == 0 && n - stop < out_dim && stop < n {
            stop = n;
        }
        model = ipca_partial_fit(&model, &data.rows(start, stop - start).into_owned())?;
        start = stop;
    }
    Ok(model)
}

/// Principal angles (radians, ascending) between the row spaces of two
/// models' components.
pub fn principal_angles(a: &PcaModel, b: &PcaModel) -> Result<Vec<f64>> {
    if a.input_dim != b.input_dim {
        return Err(CoreError::Dimension {
            context: "principal angles",
            expected: a.input_dim,
            actual: b.input_dim,
        });
    }
    let d = a.input_dim;
    let m: DMatrix<f64> = DMatrix::from_fn(a.output_dim, b.output_dim, |i, j| {
        a.components[i * d..(i + 1) * d]
            .iter()
            .zip(&b.components[j * d..(j + 1) * d])
            .map(|(x, y)| x * y)
            .sum()
    });
    let mut angles: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    Ok(angles)
}
