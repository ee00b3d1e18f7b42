use crate::error::{Error, Result};
use crate::linalg::percentile_nearest_rank;
use crate::pack::FeaturePack;

/// Fraction of train activations left untruncated.
pub const REACT_PERCENTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactParams {
    pub threshold: f64,
}

impl ReactParams {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument("ReAct threshold must be finite".into()));
        }
        Ok(ReactParams { threshold })
    }
}

/// Threshold at the 99th nearest-rank percentile of all train activations.
pub fn fit_react(train: &FeaturePack) -> Result<ReactParams> {
    let activations = train.features.to_f64_vec();
    ReactParams::new(percentile_nearest_rank(&activations, REACT_PERCENTILE)?)
}
