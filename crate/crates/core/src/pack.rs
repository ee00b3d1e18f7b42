//! Feature packs, the linear classifier head and score sets.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::method::Method;
use crate::tensor::Tensor;

/// What a pack is used for in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    IdTest,
    Ood(String),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Train => f.write_str("train"),
            Role::IdTest => f.write_str("id-test"),
            Role::Ood(name) => write!(f, "ood:{name}"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "id-test" => Ok(Role::IdTest),
            _ => match s.strip_prefix("ood:") {
                Some(name) if !name.is_empty() => Ok(Role::Ood(name.to_string())),
                _ => Err(Error::InvalidArgument(format!(
                    "role `{s}` is not one of train, id-test, ood:<name>"
                ))),
            },
        }
    }
}

/// Features (and optionally logits and labels) of N samples.
///
/// Fields are public so that malformed packs can be represented and
/// reported by [`validate_pack`]; every consumer validates first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    /// N×d matrix of penultimate-layer features.
    pub features: Tensor,
    /// Optional N×C matrix of logits.
    pub logits: Option<Tensor>,
    /// Dense class indices in `0..num_classes`.
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    FeaturesNotMatrix(Vec<usize>),
    EmptyPack,
    ZeroFeatureDim,
    ZeroClasses,
    MissingTrainLabels,
    LabelCount { labels: usize, rows: usize },
    LabelOutOfRange { row: usize, label: usize },
    LogitsNotMatrix(Vec<usize>),
    LogitRows { logit_rows: usize, rows: usize },
    LogitColumns { columns: usize, classes: usize },
    NonFiniteFeature { row: usize, col: usize },
    NonFiniteLogit { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeaturesNotMatrix(s) => write!(f, "features must be rank 2, got shape {s:?}"),
            Violation::EmptyPack => f.write_str("empty pack"),
            Violation::ZeroFeatureDim => f.write_str("feature dimension is zero"),
            Violation::ZeroClasses => f.write_str("num_classes is zero"),
            Violation::MissingTrainLabels => f.write_str("train pack requires labels"),
            Violation::LabelCount { labels, rows } => {
                write!(f, "{labels} labels for {rows} feature rows")
            }
            Violation::LabelOutOfRange { row, label } => {
                write!(f, "label out of range at row {row} (label {label})")
            }
            Violation::LogitsNotMatrix(s) => write!(f, "logits must be rank 2, got shape {s:?}"),
            Violation::LogitRows { logit_rows, rows } => {
                write!(f, "{logit_rows} logit rows for {rows} feature rows")
            }
            Violation::LogitColumns { columns, classes } => {
                write!(f, "{columns} logit columns for {classes} classes")
            }
            Violation::NonFiniteFeature { row, col } => {
                write!(f, "non-finite feature at row {row}, column {col}")
            }
            Violation::NonFiniteLogit { row, col } => {
                write!(f, "non-finite logit at row {row}, column {col}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::InvalidPack(msgs.join("; ")))
        }
    }
}

/// Checks every pack invariant and lists each violation found.
pub fn validate_pack(pack: &FeaturePack) -> ValidationReport {
    let mut violations = Vec::new();
    let rows = match pack.features.shape() {
        &[rows, cols] => {
            if rows == 0 {
                violations.push(Violation::EmptyPack);
            }
            if cols == 0 {
                violations.push(Violation::ZeroFeatureDim);
            }
            if let Some(idx) = pack.features.first_non_finite() {
                violations.push(Violation::NonFiniteFeature { row: idx / cols, col: idx % cols });
            }
            Some(rows)
        }
        other => {
            violations.push(Violation::FeaturesNotMatrix(other.to_vec()));
            None
        }
    };
    if pack.num_classes == 0 {
        violations.push(Violation::ZeroClasses);
    }
    match &pack.labels {
        None if pack.role == Role::Train => violations.push(Violation::MissingTrainLabels),
        None => {}
        Some(labels) => {
            if let Some(rows) = rows {
                if labels.len() != rows {
                    violations.push(Violation::LabelCount { labels: labels.len(), rows });
                }
            }
            for (row, &label) in labels.iter().enumerate() {
                if label >= pack.num_classes {
                    violations.push(Violation::LabelOutOfRange { row, label });
                }
            }
        }
    }
    if let Some(logits) = &pack.logits {
        match logits.shape() {
            &[logit_rows, columns] => {
                if let Some(rows) = rows {
                    if logit_rows != rows {
                        violations.push(Violation::LogitRows { logit_rows, rows });
                    }
                }
                if columns != pack.num_classes {
                    violations.push(Violation::LogitColumns { columns, classes: pack.num_classes });
                }
                if let Some(idx) = logits.first_non_finite() {
                    let cols = columns.max(1);
                    violations.push(Violation::NonFiniteLogit { row: idx / cols, col: idx % cols });
                }
            }
            other => violations.push(Violation::LogitsNotMatrix(other.to_vec())),
        }
    }
    ValidationReport { violations }
}

impl FeaturePack {
    pub fn len(&self) -> usize {
        self.features.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape().get(1).copied().unwrap_or(0)
    }

    /// N×d feature matrix widened to f64.
    pub fn feature_matrix(&self) -> Result<DMatrix<f64>> {
        let (rows, cols) = self.features.dims2()?;
        Ok(DMatrix::from_row_slice(rows, cols, &self.features.to_f64_vec()))
    }

    /// Supplied logits, if any, widened to f64.
    pub fn supplied_logits(&self) -> Result<Option<DMatrix<f64>>> {
        self.logits
            .as_ref()
            .map(|t| {
                let (rows, cols) = t.dims2()?;
                Ok(DMatrix::from_row_slice(rows, cols, &t.to_f64_vec()))
            })
            .transpose()
    }

    /// Logits used by the pipeline: supplied logits win over the head.
    pub fn resolve_logits(&self, head: Option<&ClassifierHead>) -> Result<DMatrix<f64>> {
        match (self.supplied_logits()?, head) {
            (Some(logits), Some(_)) => {
                log::warn!(
                    "pack `{}` carries logits and a head is available; using the supplied logits",
                    self.role
                );
                Ok(logits)
            }
            (Some(logits), None) => Ok(logits),
            (None, Some(head)) => logits_from_features(&self.feature_matrix()?, head),
            (None, None) => Err(Error::InvalidArgument(format!(
                "pack `{}` has no logits and no classifier head was given",
                self.role
            ))),
        }
    }

    pub fn has_logits(&self) -> bool {
        self.logits.is_some()
    }
}

/// Last linear layer `g(h) = Wᵀh + b` with `W` of shape d×C.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ClassifierHead {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "head weight has {} columns but bias has {} entries",
                weight.ncols(),
                bias.len()
            )));
        }
        if weight.ncols() == 0 || weight.nrows() == 0 {
            return Err(Error::Shape("head weight must be non-empty".into()));
        }
        if weight.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("head contains non-finite values".into()));
        }
        Ok(ClassifierHead { weight, bias })
    }

    pub fn from_tensors(weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let (rows, cols) = weight.dims2()?;
        let bias_len = match bias.shape() {
            &[n] => n,
            other => {
                return Err(Error::Shape(format!("head bias must be rank 1, got shape {other:?}")))
            }
        };
        if bias_len != cols {
            return Err(Error::Shape(format!(
                "head weight has {cols} columns but bias has {bias_len} entries"
            )));
        }
        ClassifierHead::new(
            DMatrix::from_row_slice(rows, cols, &weight.to_f64_vec()),
            DVector::from_vec(bias.to_f64_vec()),
        )
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    /// `Wᵀh + b` for a single feature row.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| {
                let column = self.weight.column(c);
                let dot: f64 = column.iter().zip(h).map(|(w, x)| w * x).sum();
                dot + self.bias[c]
            })
            .collect()
    }
}

/// Row i of the result is `Wᵀh_i + b`.
pub fn logits_from_features(features: &DMatrix<f64>, head: &ClassifierHead) -> Result<DMatrix<f64>> {
    if features.ncols() != head.feature_dim() {
        return Err(Error::Shape(format!(
            "features have dimension {} but the head expects {}",
            features.ncols(),
            head.feature_dim()
        )));
    }
    let mut logits = features * head.weight();
    for mut row in logits.row_iter_mut() {
        for (value, b) in row.iter_mut().zip(head.bias().iter()) {
            *value += b;
        }
    }
    Ok(logits)
}

/// Per-sample scores of one method; larger means more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub method: Method,
    pub values: Vec<f64>,
    pub source_role: Role,
    /// Provenance hash of the detector state the scores came from.
    pub state_hash: String,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
