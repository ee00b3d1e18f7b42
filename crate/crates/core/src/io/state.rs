//! Detector state directory: `state.json` plus one OODT tensor per
//! matrix or vector. Matrices are stored row-major as f64, counts and
//! masks as i32. Scalars live in the descriptor.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    CosineConcepts, DetectorState, GaussianStats, KlTemplates, KnnIndex, Provenance, ReactParams, VimParams,
};
use crate::io::oodt::{read_tensor_file, write_tensor_file, ReadOptions};
use crate::pack::ClassifierHead;
use crate::tensor::Tensor;

pub const DESCRIPTOR: &str = "state.json";
pub const FORMAT: &str = "oodkit-state";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    format: String,
    version: u32,
    provenance: Provenance,
    head: HeadEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gaussian: Option<GaussianEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knn: Option<KnnEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kl: Option<KlEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vim: Option<VimEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    react: Option<ReactEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cosine: Option<CosineEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadEntry {
    weight: String,
    bias: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianEntry {
    class_means: String,
    class_counts: String,
    total: usize,
    shared_cov: String,
    shared_precision: String,
    shared_lambda: f64,
    global_mean: String,
    global_cov: String,
    global_precision: String,
    global_lambda: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnEntry {
    features: String,
    k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KlEntry {
    templates: String,
    present: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VimEntry {
    offset: String,
    basis: String,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactEntry {
    threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CosineEntry {
    concepts: String,
}

fn matrix_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    let values: Vec<f64> = m.transpose().iter().copied().collect();
    Tensor::from_f64(vec![m.nrows(), m.ncols()], values)
}

fn vector_tensor(v: &DVector<f64>) -> Result<Tensor> {
    Tensor::from_f64(vec![v.len()], v.iter().copied().collect())
}

fn count_tensor(values: impl IntoIterator<Item = usize>) -> Result<Tensor> {
    let values = values
        .into_iter()
        .map(|v| i32::try_from(v).map_err(|_| Error::InvalidArgument(format!("count {v} exceeds i32"))))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_i32(vec![values.len()], values)
}

struct Writer<'a> {
    dir: &'a Path,
}

impl Writer<'_> {
    fn put(&self, name: &str, t: Tensor) -> Result<String> {
        let file = format!("{name}.oodt");
        write_tensor_file(&t, self.dir.join(&file))?;
        Ok(file)
    }
}

/// Writes `state` into `dir` (created if needed).
pub fn save_state(state: &DetectorState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = Writer { dir };

    let head = HeadEntry {
        weight: w.put("head_weight", matrix_tensor(state.head.weight())?)?,
        bias: w.put("head_bias", vector_tensor(state.head.bias())?)?,
    };
    let gaussian = state
        .gaussian
        .as_ref()
        .map(|g| -> Result<GaussianEntry> {
            Ok(GaussianEntry {
                class_means: w.put("class_means", matrix_tensor(&g.class_means)?)?,
                class_counts: w.put("class_counts", count_tensor(g.class_counts.iter().copied())?)?,
                total: g.total,
                shared_cov: w.put("shared_cov", matrix_tensor(&g.shared_cov)?)?,
                shared_precision: w.put("shared_precision", matrix_tensor(&g.shared_precision)?)?,
                shared_lambda: g.shared_lambda,
                global_mean: w.put("global_mean", vector_tensor(&g.global_mean)?)?,
                global_cov: w.put("global_cov", matrix_tensor(&g.global_cov)?)?,
                global_precision: w.put("global_precision", matrix_tensor(&g.global_precision)?)?,
                global_lambda: g.global_lambda,
            })
        })
        .transpose()?;
    let knn = state
        .knn
        .as_ref()
        .map(|k| -> Result<KnnEntry> {
            let t = Tensor::from_f64(vec![k.len(), k.dim()], k.normalized().to_vec())?;
            Ok(KnnEntry { features: w.put("knn_features", t)?, k: k.k() })
        })
        .transpose()?;
    let kl = state
        .kl
        .as_ref()
        .map(|t| -> Result<KlEntry> {
            Ok(KlEntry {
                templates: w.put("kl_templates", matrix_tensor(&t.templates)?)?,
                present: w.put("kl_present", count_tensor(t.present.iter().map(|&p| p as usize))?)?,
            })
        })
        .transpose()?;
    let vim = state
        .vim
        .as_ref()
        .map(|v| -> Result<VimEntry> {
            Ok(VimEntry {
                offset: w.put("vim_offset", vector_tensor(&v.offset)?)?,
                basis: w.put("vim_basis", matrix_tensor(&v.basis)?)?,
                alpha: v.alpha,
            })
        })
        .transpose()?;
    let react = state.react.as_ref().map(|r| ReactEntry { threshold: r.threshold });
    let cosine = state
        .cosine
        .as_ref()
        .map(|c| -> Result<CosineEntry> {
            Ok(CosineEntry { concepts: w.put("cosine_concepts", matrix_tensor(&c.concepts)?)? })
        })
        .transpose()?;

    let descriptor = Descriptor {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        provenance: state.provenance.clone(),
        head,
        gaussian,
        knn,
        kl,
        vim,
        react,
        cosine,
    };
    let mut text = serde_json::to_string_pretty(&descriptor).map_err(|e| Error::json("state descriptor", e))?;
    text.push('\n');
    let path = dir.join(DESCRIPTOR);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    dir: &'a Path,
}

impl Reader<'_> {
    fn tensor(&self, file: &str) -> Result<Tensor> {
        if Path::new(file).components().count() != 1 {
            return Err(Error::InvalidArgument(format!("state file `{file}` must be a bare file name")));
        }
        read_tensor_file(self.dir.join(file), ReadOptions::default())
    }

    fn matrix(&self, file: &str, rows: Option<usize>, cols: Option<usize>) -> Result<DMatrix<f64>> {
        let t = self.tensor(file)?;
        let (r, c) = t.dims2()?;
        if rows.is_some_and(|n| n != r) || cols.is_some_and(|n| n != c) {
            return Err(Error::Shape(format!("`{file}` is {r}×{c}, expected {rows:?}×{cols:?}")));
        }
        Ok(DMatrix::from_row_slice(r, c, &t.to_f64_vec()))
    }

    fn vector(&self, file: &str, len: usize) -> Result<DVector<f64>> {
        let t = self.tensor(file)?;
        if t.shape() != [len] {
            return Err(Error::Shape(format!("`{file}` has shape {:?}, expected [{len}]", t.shape())));
        }
        Ok(DVector::from_vec(t.to_f64_vec()))
    }

    fn counts(&self, file: &str, len: usize) -> Result<Vec<usize>> {
        let t = self.tensor(file)?;
        if t.shape() != [len] {
            return Err(Error::Shape(format!("`{file}` has shape {:?}, expected [{len}]", t.shape())));
        }
        t.to_f64_vec()
            .into_iter()
            .map(|v| {
                if v >= 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidArgument(format!("`{file}` holds a negative count")))
                }
            })
            .collect()
    }
}

/// Reads a state written by [`save_state`].
pub fn load_state(dir: impl AsRef<Path>) -> Result<DetectorState> {
    let dir = dir.as_ref();
    let path = dir.join(DESCRIPTOR);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let desc: Descriptor =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if desc.format != FORMAT {
        return Err(Error::InvalidArgument(format!("`{}` is not a detector state", path.display())));
    }
    if desc.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(desc.version));
    }
    let r = Reader { dir };
    let d = desc.provenance.feature_dim;
    let c = desc.provenance.num_classes;

    let head = ClassifierHead::new(r.matrix(&desc.head.weight, Some(d), Some(c))?, r.vector(&desc.head.bias, c)?)?;
    let gaussian = desc
        .gaussian
        .map(|g| -> Result<GaussianStats> {
            Ok(GaussianStats {
                class_means: r.matrix(&g.class_means, Some(c), Some(d))?,
                class_counts: r.counts(&g.class_counts, c)?,
                total: g.total,
                shared_cov: r.matrix(&g.shared_cov, Some(d), Some(d))?,
                shared_precision: r.matrix(&g.shared_precision, Some(d), Some(d))?,
                shared_lambda: g.shared_lambda,
                global_mean: r.vector(&g.global_mean, d)?,
                global_cov: r.matrix(&g.global_cov, Some(d), Some(d))?,
                global_precision: r.matrix(&g.global_precision, Some(d), Some(d))?,
                global_lambda: g.global_lambda,
            })
        })
        .transpose()?;
    let knn = desc
        .knn
        .map(|k| -> Result<KnnIndex> {
            let t = r.tensor(&k.features)?;
            let (rows, cols) = t.dims2()?;
            if cols != d {
                return Err(Error::Shape(format!("knn index has dimension {cols}, expected {d}")));
            }
            KnnIndex::from_parts(rows, cols, t.to_f64_vec(), k.k)
        })
        .transpose()?;
    let kl = desc
        .kl
        .map(|k| -> Result<KlTemplates> {
            let present = r.counts(&k.present, c)?.into_iter().map(|v| v != 0).collect();
            KlTemplates::new(r.matrix(&k.templates, Some(c), Some(c))?, present)
        })
        .transpose()?;
    let vim = desc
        .vim
        .map(|v| -> Result<VimParams> {
            Ok(VimParams {
                offset: r.vector(&v.offset, d)?,
                basis: r.matrix(&v.basis, Some(d), None)?,
                alpha: v.alpha,
            })
        })
        .transpose()?;
    let react = desc.react.map(|e| ReactParams::new(e.threshold)).transpose()?;
    let cosine = desc
        .cosine
        .map(|e| CosineConcepts::new(r.matrix(&e.concepts, Some(c), Some(d))?))
        .transpose()?;

    Ok(DetectorState { head, gaussian, knn, kl, vim, react, cosine, provenance: desc.provenance })
}
