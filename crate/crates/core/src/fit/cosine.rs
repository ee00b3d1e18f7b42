use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::class_means;
use crate::pack::FeaturePack;

/// Concept vectors, here the class-wise train means (C×d).
#[derive(Debug, Clone, PartialEq)]
pub struct CosineConcepts {
    pub concepts: DMatrix<f64>,
}

impl CosineConcepts {
    pub fn new(concepts: DMatrix<f64>) -> Result<Self> {
        for c in 0..concepts.nrows() {
            if concepts.row(c).norm() == 0.0 {
                return Err(Error::ZeroNorm { what: "concept vector", row: c });
            }
        }
        Ok(CosineConcepts { concepts })
    }
}

pub fn fit_cosine(train: &FeaturePack) -> Result<CosineConcepts> {
    let labels = train
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidPack("train pack requires labels".into()))?;
    let (means, _) = class_means(&train.feature_matrix()?, labels, train.num_classes)?;
    CosineConcepts::new(means)
}
