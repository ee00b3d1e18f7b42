//! Post-hoc out-of-distribution detection on precomputed features and
//! logits: ten scorers, the statistics they need, evaluation metrics and
//! model-pool analysis.

pub mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod method;
pub mod metrics;
pub mod pack;
pub mod pool;
pub mod scorers;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use fit::{fit_all, DetectorState, FitConfig, FitOutcome};
pub use method::Method;
pub use metrics::{evaluate, AucPooling, EvalResult};
pub use pack::{validate_pack, ClassifierHead, FeaturePack, Role, ScoreSet};
pub use scorers::{score_pack, CosineMode, ScoreOptions};
pub use tensor::{DType, Tensor};
