//! JSON manifests that describe a feature pack stored as OODT tensors.
//!
//! Tensor paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io::oodt::{read_tensor_file, write_tensor_file, ReadOptions};
use crate::pack::{validate_pack, FeaturePack, Role};
use crate::tensor::{Tensor, TensorData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub num_classes: usize,
    pub role: String,
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn labels_from_tensor(t: &Tensor, path: &Path) -> Result<Vec<usize>> {
    if t.rank() != 1 {
        return Err(Error::Shape(format!(
            "labels in {} must be rank 1, got shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    let TensorData::I32(values) = t.data() else {
        return Err(Error::InvalidArgument(format!(
            "labels in {} must be 32-bit integers",
            path.display()
        )));
    };
    values
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            usize::try_from(v).map_err(|_| {
                Error::InvalidPack(format!("label out of range at row {row} (label {v})"))
            })
        })
        .collect()
}

/// Loads the manifest and the validated pack it describes.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<(Manifest, FeaturePack)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let role: Role = manifest.role.parse()?;

    let features = read_tensor_file(resolve(base, &manifest.features), ReadOptions::default())?;
    let logits = manifest
        .logits
        .as_ref()
        .map(|p| read_tensor_file(resolve(base, p), ReadOptions::default()))
        .transpose()?;
    let labels = manifest
        .labels
        .as_ref()
        .map(|p| {
            let full = resolve(base, p);
            let t = read_tensor_file(&full, ReadOptions::default())?;
            labels_from_tensor(&t, &full)
        })
        .transpose()?;

    let pack = FeaturePack { features, logits, labels, num_classes: manifest.num_classes, role };
    validate_pack(&pack).into_result()?;
    Ok((manifest, pack))
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::json("manifest", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `pack` as `<stem>_features.oodt` (plus logits/labels) and
/// `<stem>.json` inside `dir`; returns the manifest path.
pub fn write_pack(
    pack: &FeaturePack,
    dir: impl AsRef<Path>,
    stem: &str,
    metadata: Map<String, Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    validate_pack(pack).into_result()?;
    let features = PathBuf::from(format!("{stem}_features.oodt"));
    write_tensor_file(&pack.features, dir.join(&features))?;
    let logits = match &pack.logits {
        Some(t) => {
            let p = PathBuf::from(format!("{stem}_logits.oodt"));
            write_tensor_file(t, dir.join(&p))?;
            Some(p)
        }
        None => None,
    };
    let labels = match &pack.labels {
        Some(l) => {
            let p = PathBuf::from(format!("{stem}_labels.oodt"));
            let values = l
                .iter()
                .map(|&v| i32::try_from(v).map_err(|_| Error::InvalidArgument(format!("label {v} too large"))))
                .collect::<Result<Vec<_>>>()?;
            write_tensor_file(&Tensor::from_i32(vec![values.len()], values)?, dir.join(&p))?;
            Some(p)
        }
        None => None,
    };
    let manifest = Manifest {
        features,
        logits,
        labels,
        num_classes: pack.num_classes,
        role: pack.role.to_string(),
        metadata,
    };
    let path = dir.join(format!("{stem}.json"));
    write_manifest(&manifest, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_features(dir: &Path, rows: usize) {
        let t = Tensor::from_f32(vec![rows, 2], (0..rows * 2).map(|v| v as f32).collect()).unwrap();
        write_tensor_file(&t, dir.join("f.oodt")).unwrap();
    }

    fn write_labels(dir: &Path, labels: &[i32]) {
        let t = Tensor::from_i32(vec![labels.len()], labels.to_vec()).unwrap();
        write_tensor_file(&t, dir.join("y.oodt")).unwrap();
    }

    #[test]
    fn train_without_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), 3);
        fs::write(
            dir.path().join("m.json"),
            r#"{"features": "f.oodt", "num_classes": 2, "role": "train"}"#,
        )
        .unwrap();
        let err = read_manifest(dir.path().join("m.json")).unwrap_err();
        assert!(err.to_string().contains("train pack requires labels"), "{err}");
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), 3);
        write_labels(dir.path(), &[0, 1]);
        fs::write(
            dir.path().join("m.json"),
            r#"{"features": "f.oodt", "labels": "y.oodt", "num_classes": 2, "role": "train"}"#,
        )
        .unwrap();
        assert!(read_manifest(dir.path().join("m.json")).is_err());
    }

    #[test]
    fn negative_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), 2);
        write_labels(dir.path(), &[0, -1]);
        fs::write(
            dir.path().join("m.json"),
            r#"{"features": "f.oodt", "labels": "y.oodt", "num_classes": 2, "role": "train"}"#,
        )
        .unwrap();
        let err = read_manifest(dir.path().join("m.json")).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn well_formed_manifest_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), 3);
        write_labels(dir.path(), &[0, 1, 1]);
        fs::write(
            dir.path().join("m.json"),
            r#"{"features": "f.oodt", "labels": "y.oodt", "num_classes": 2, "role": "train",
               "metadata": {"z_model": "vit-b16", "a_wd": 0.1}}"#,
        )
        .unwrap();
        let (manifest, pack) = read_manifest(dir.path().join("m.json")).unwrap();
        assert!(validate_pack(&pack).is_ok());
        let keys: Vec<&String> = manifest.metadata.keys().collect();
        assert_eq!(keys, ["z_model", "a_wd"]);
        assert_eq!(manifest.metadata["a_wd"], serde_json::json!(0.1));
    }

    #[test]
    fn missing_tensor_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("m.json"),
            r#"{"features": "absent.oodt", "num_classes": 2, "role": "id-test"}"#,
        )
        .unwrap();
        assert!(matches!(read_manifest(dir.path().join("m.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn write_pack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pack = FeaturePack {
            features: Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            logits: Some(Tensor::from_f64(vec![2, 3], vec![0.5; 6]).unwrap()),
            labels: Some(vec![2, 0]),
            num_classes: 3,
            role: Role::Train,
        };
        let path = write_pack(&pack, dir.path(), "train", Map::new()).unwrap();
        let (_, back) = read_manifest(path).unwrap();
        assert_eq!(back, pack);
    }
}
