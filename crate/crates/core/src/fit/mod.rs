//! Fitting every statistic the scorers need from a train pack.

pub mod cosine;
pub mod gaussian;
pub mod kl;
pub mod knn;
pub mod react;
pub mod vim;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cosine::{fit_cosine, CosineConcepts};
pub use gaussian::{fit_gaussian, GaussianStats};
pub use kl::{fit_kl_templates, KlGrouping, KlTemplates};
pub use knn::{fit_knn, KnnIndex, DEFAULT_K};
pub use react::{fit_react, ReactParams};
pub use vim::{fit_vim, principal_dim_for, VimParams};

use crate::error::{Error, Result};
use crate::io::oodt::encode_tensor;
use crate::linalg::DEFAULT_JITTER_SCALE;
use crate::method::Method;
use crate::pack::{validate_pack, ClassifierHead, FeaturePack, Violation};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub methods: Vec<Method>,
    pub knn_k: usize,
    pub jitter_scale: f64,
    pub kl_grouping: KlGrouping,
    /// Overrides the default ViM principal dimension rule.
    pub vim_dim: Option<usize>,
    /// Abort on the first failing sub-fit instead of collecting failures.
    pub fail_fast: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            methods: Method::ALL.to_vec(),
            knn_k: DEFAULT_K,
            jitter_scale: DEFAULT_JITTER_SCALE,
            kl_grouping: KlGrouping::Predicted,
            vim_dim: None,
            fail_fast: false,
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitsSource {
    /// Stored alongside the features.
    Supplied,
    /// Computed as `Wᵀh + b`.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hex SHA-256 over the OODT encodings of the train features, labels
    /// and logits (those present, in that order).
    pub train_hash: String,
    pub train_rows: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub logits_source: LogitsSource,
    pub config: FitConfig,
    /// Requested methods whose statistics were fitted successfully.
    pub fitted: Vec<Method>,
}

/// Everything the ten scorers need; absent pieces were not requested or
/// failed to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub head: ClassifierHead,
    pub gaussian: Option<GaussianStats>,
    pub knn: Option<KnnIndex>,
    pub kl: Option<KlTemplates>,
    pub vim: Option<VimParams>,
    pub react: Option<ReactParams>,
    pub cosine: Option<CosineConcepts>,
    pub provenance: Provenance,
}

impl DetectorState {
    pub fn hash(&self) -> &str {
        &self.provenance.train_hash
    }
}

/// State plus per-method failures that did not abort the fit.
#[derive(Debug)]
pub struct FitOutcome {
    pub state: DetectorState,
    pub failures: Vec<(Method, Error)>,
}

pub fn train_hash(pack: &FeaturePack) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(encode_tensor(&pack.features));
    if let Some(labels) = &pack.labels {
        let values = labels
            .iter()
            .map(|&v| i32::try_from(v).map_err(|_| Error::InvalidArgument(format!("label {v} too large"))))
            .collect::<Result<Vec<_>>>()?;
        hasher.update(encode_tensor(&Tensor::from_i32(vec![values.len()], values)?));
    }
    if let Some(logits) = &pack.logits {
        hasher.update(encode_tensor(logits));
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn needs_labels(methods: &[Method], grouping: KlGrouping) -> bool {
    methods.iter().any(|m| match m {
        Method::Mahalanobis | Method::RelMahalanobis | Method::Cosine => true,
        Method::KlMatching => grouping == KlGrouping::Labels,
        _ => false,
    })
}

/// Fits the statistics for `config.methods`. Sub-fits are independent;
/// a failing one is reported in [`FitOutcome::failures`] unless
/// `fail_fast` is set.
pub fn fit_all(train: &FeaturePack, head: &ClassifierHead, config: &FitConfig) -> Result<FitOutcome> {
    let report = validate_pack(train);
    let labels_needed = needs_labels(&config.methods, config.kl_grouping);
    let blocking: Vec<&Violation> = report
        .violations
        .iter()
        .filter(|v| labels_needed || **v != Violation::MissingTrainLabels)
        .collect();
    if !blocking.is_empty() {
        let msgs: Vec<String> = blocking.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidPack(msgs.join("; ")));
    }
    if head.feature_dim() != train.dim() || head.num_classes() != train.num_classes {
        return Err(Error::Shape(format!(
            "head is {}×{} but the pack has d = {}, C = {}",
            head.feature_dim(),
            head.num_classes(),
            train.dim(),
            train.num_classes
        )));
    }

    let x = train.feature_matrix()?;
    let logits_source = if train.has_logits() { LogitsSource::Supplied } else { LogitsSource::Derived };
    let wants = |m: Method| config.methods.contains(&m);
    let needs_logits = wants(Method::KlMatching) || wants(Method::Vim);
    let logits = if needs_logits { Some(train.resolve_logits(Some(head))?) } else { None };

    let mut failures: Vec<(Method, Error)> = Vec::new();
    let mut fitted: Vec<Method> = Vec::new();
    let mut record = |m: Method, r: Result<()>, failures: &mut Vec<(Method, Error)>| -> Result<()> {
        match r {
            Ok(()) => {
                fitted.push(m);
                Ok(())
            }
            Err(e) if config.fail_fast => Err(Error::FitFailed(vec![(m.to_string(), e)])),
            Err(e) => {
                log::warn!("fit for {m} failed: {e}");
                failures.push((m, e));
                Ok(())
            }
        }
    };

    let mut gaussian: Option<GaussianStats> = None;
    let mut gaussian_error: Option<String> = None;
    if wants(Method::Mahalanobis) || wants(Method::RelMahalanobis) {
        match gaussian::gaussian_from_matrix(
            &x,
            train.labels.as_deref().unwrap_or_default(),
            train.num_classes,
            config.jitter_scale,
        ) {
            Ok(g) => gaussian = Some(g),
            Err(e) => gaussian_error = Some(e.to_string()),
        }
    }
    let mut knn = None;
    let mut kl = None;
    let mut vim = None;
    let mut react = None;
    let mut cosine = None;

    for &m in &config.methods {
        let result: Result<()> = match m {
            Method::Msp | Method::MaxLogit | Method::Energy => Ok(()),
            Method::Mahalanobis | Method::RelMahalanobis => match &gaussian_error {
                None => Ok(()),
                Some(msg) => Err(Error::Degenerate(format!("gaussian fit failed: {msg}"))),
            },
            Method::Knn => knn::knn_from_matrix(&x, config.knn_k).map(|k| knn = Some(k)),
            Method::KlMatching => {
                let logits = logits.as_ref().expect("logits resolved for KL");
                fit_kl_templates(logits, train.labels.as_deref(), config.kl_grouping).map(|t| kl = Some(t))
            }
            Method::Vim => {
                let logits = logits.as_ref().expect("logits resolved for ViM");
                fit_vim(&x, logits, head, config.vim_dim).map(|v| vim = Some(v))
            }
            Method::ReactEnergy => fit_react(train).map(|r| react = Some(r)),
            Method::Cosine => {
                let concepts = match &gaussian {
                    Some(g) => CosineConcepts::new(g.class_means.clone()),
                    None => fit_cosine(train),
                };
                concepts.map(|c| cosine = Some(c))
            }
        };
        record(m, result, &mut failures)?;
    }

    let provenance = Provenance {
        train_hash: train_hash(train)?,
        train_rows: train.len(),
        feature_dim: train.dim(),
        num_classes: train.num_classes,
        logits_source,
        config: config.clone(),
        fitted,
    };
    Ok(FitOutcome {
        state: DetectorState { head: head.clone(), gaussian, knn, kl, vim, react, cosine, provenance },
        failures,
    })
}
