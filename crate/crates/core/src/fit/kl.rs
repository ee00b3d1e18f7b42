use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, stable_softmax};

/// How train samples are assigned to a KL template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlGrouping {
    /// argmax of the logits, ties to the lowest index
    #[default]
    Predicted,
    Labels,
}

/// Mean softmax vector per class (C×C); classes without members are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct KlTemplates {
    pub templates: DMatrix<f64>,
    pub present: Vec<bool>,
}

impl KlTemplates {
    pub fn new(templates: DMatrix<f64>, present: Vec<bool>) -> Result<Self> {
        if templates.nrows() != present.len() {
            return Err(Error::Shape("template rows and presence mask disagree".into()));
        }
        if !present.iter().any(|&p| p) {
            return Err(Error::Degenerate("no KL template is present".into()));
        }
        Ok(KlTemplates { templates, present })
    }

    pub fn present_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.present.iter().enumerate().filter(|(_, &p)| p).map(|(c, _)| c)
    }
}

/// Averages softmax rows of `logits` (N×C) grouped per `grouping`.
pub fn fit_kl_templates(
    logits: &DMatrix<f64>,
    labels: Option<&[usize]>,
    grouping: KlGrouping,
) -> Result<KlTemplates> {
    let (n, c) = logits.shape();
    if n == 0 {
        return Err(Error::Empty("KL templates need at least one train row".into()));
    }
    let labels = match grouping {
        KlGrouping::Labels => Some(labels.ok_or_else(|| {
            Error::InvalidPack("grouping KL templates by labels requires labels".into())
        })?),
        KlGrouping::Predicted => None,
    };
    let mut sums = DMatrix::<f64>::zeros(c, c);
    let mut counts = vec![0usize; c];
    let mut row = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            row[j] = logits[(i, j)];
        }
        let group = match labels {
            Some(l) => l[i],
            None => argmax(&row),
        };
        if group >= c {
            return Err(Error::InvalidArgument(format!("label {group} at row {i} >= {c}")));
        }
        counts[group] += 1;
        for (j, p) in stable_softmax(&row).into_iter().enumerate() {
            sums[(group, j)] += p;
        }
    }
    for (g, &count) in counts.iter().enumerate() {
        if count > 0 {
            for j in 0..c {
                sums[(g, j)] /= count as f64;
            }
        }
    }
    KlTemplates::new(sums, counts.iter().map(|&k| k > 0).collect())
}
