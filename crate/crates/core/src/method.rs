use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The ten post-hoc scoring methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Msp,
    MaxLogit,
    Energy,
    KlMatching,
    Knn,
    Mahalanobis,
    RelMahalanobis,
    ReactEnergy,
    Vim,
    Cosine,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Msp,
        Method::MaxLogit,
        Method::Energy,
        Method::KlMatching,
        Method::Knn,
        Method::Mahalanobis,
        Method::RelMahalanobis,
        Method::ReactEnergy,
        Method::Vim,
        Method::Cosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::MaxLogit => "maxlogit",
            Method::Energy => "energy",
            Method::KlMatching => "kl_matching",
            Method::Knn => "knn",
            Method::Mahalanobis => "mahalanobis",
            Method::RelMahalanobis => "rel_mahalanobis",
            Method::ReactEnergy => "react_energy",
            Method::Vim => "vim",
            Method::Cosine => "cosine",
        }
    }

    /// Methods that only read logits and need nothing fitted.
    pub fn is_logit_only(self) -> bool {
        matches!(self, Method::Msp | Method::MaxLogit | Method::Energy)
    }

    /// Parses `all` or a comma-separated list; duplicates are dropped.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        if s.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        let mut out: Vec<Method> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("empty method list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}
