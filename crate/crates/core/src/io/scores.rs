//! Score sets: a rank-1 f64 OODT tensor plus a JSON sidecar next to it
//! (same stem, `.json` extension) naming the method, the source role and
//! the state hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::oodt::{read_tensor_file, write_tensor_file, ReadOptions};
use crate::method::Method;
use crate::pack::ScoreSet;
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    method: Method,
    source_role: String,
    state_hash: String,
    count: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        return Err(Error::InvalidArgument(format!(
            "score file `{}` would collide with its sidecar",
            path.display()
        )));
    }
    let tensor = Tensor::from_f64(vec![scores.values.len()], scores.values.clone())?;
    write_tensor_file(&tensor, path)?;
    let sidecar = Sidecar {
        method: scores.method,
        source_role: scores.source_role.to_string(),
        state_hash: scores.state_hash.clone(),
        count: scores.values.len(),
    };
    let mut text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("score sidecar", e))?;
    text.push('\n');
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::json(side.display().to_string(), e))?;
    let tensor = read_tensor_file(path, ReadOptions::default())?;
    if tensor.rank() != 1 || tensor.len() != sidecar.count {
        return Err(Error::Shape(format!(
            "`{}` has shape {:?}; the sidecar promises [{}]",
            path.display(),
            tensor.shape(),
            sidecar.count
        )));
    }
    Ok(ScoreSet {
        method: sidecar.method,
        values: tensor.to_f64_vec(),
        source_role: sidecar.source_role.parse()?,
        state_hash: sidecar.state_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::Role;

    #[test]
    fn round_trip() {
        let s = ScoreSet {
            method: Method::Vim,
            values: vec![-0.25, 1e-300, -3.5],
            source_role: Role::Ood("noise".into()),
            state_hash: "ab".repeat(32),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.oodt");
        write_scores(&s, &p).unwrap();
        assert!(dir.path().join("s.json").exists());
        assert_eq!(read_scores(&p).unwrap(), s);
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.oodt");
        write_tensor_file(&Tensor::from_f64(vec![1], vec![0.0]).unwrap(), &p).unwrap();
        assert!(matches!(read_scores(&p), Err(Error::Io { .. })));
    }
}
