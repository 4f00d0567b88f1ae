//! The ten compared procedures.

use serde::{Deserialize, Serialize};

use crate::estimate::Estimator;

/// A design paired with an estimator.
///
/// `C` methods balance the cluster covariates `(n_i, x~_i)` and use the
/// Horvitz-Thompson family; `X` methods balance the individual covariates and
/// use the Hajek family. `M` is Mahalanobis, `W` is weighted Euclidean with
/// optimal weights. `.adj` adds the matching regression adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ReMC")]
    ReMC,
    #[serde(rename = "ReWC")]
    ReWC,
    #[serde(rename = "ReMX")]
    ReMX,
    #[serde(rename = "ReWX")]
    ReWX,
    #[serde(rename = "Haj")]
    Haj,
    #[serde(rename = "HT")]
    Ht,
    #[serde(rename = "ReMC.adj")]
    ReMCAdj,
    #[serde(rename = "ReWC.adj")]
    ReWCAdj,
    #[serde(rename = "ReMX.adj")]
    ReMXAdj,
    #[serde(rename = "ReWX.adj")]
    ReWXAdj,
}

/// Assignment mechanism behind a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesignKind {
    Complete,
    MahalanobisCluster,
    WeightedCluster,
    MahalanobisIndividual,
    WeightedIndividual,
}

impl DesignKind {
    pub fn is_rerandomized(self) -> bool {
        self != DesignKind::Complete
    }

    pub fn label(self) -> &'static str {
        match self {
            DesignKind::Complete => "CR",
            DesignKind::MahalanobisCluster => "ReM-c",
            DesignKind::WeightedCluster => "ReW-c",
            DesignKind::MahalanobisIndividual => "ReM-x",
            DesignKind::WeightedIndividual => "ReW-x",
        }
    }
}

impl Method {
    pub fn all() -> Vec<Method> {
        use Method::*;
        vec![ReMC, ReWC, ReMX, ReWX, Haj, Ht, ReMCAdj, ReWCAdj, ReMXAdj, ReWXAdj]
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::ReMC => "ReMC",
            Method::ReWC => "ReWC",
            Method::ReMX => "ReMX",
            Method::ReWX => "ReWX",
            Method::Haj => "Haj",
            Method::Ht => "HT",
            Method::ReMCAdj => "ReMC.adj",
            Method::ReWCAdj => "ReWC.adj",
            Method::ReMXAdj => "ReMX.adj",
            Method::ReWXAdj => "ReWX.adj",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::all().into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn design(self) -> DesignKind {
        use Method::*;
        match self {
            Haj | Ht => DesignKind::Complete,
            ReMC | ReMCAdj => DesignKind::MahalanobisCluster,
            ReWC | ReWCAdj => DesignKind::WeightedCluster,
            ReMX | ReMXAdj => DesignKind::MahalanobisIndividual,
            ReWX | ReWXAdj => DesignKind::WeightedIndividual,
        }
    }

    pub fn estimator(self) -> Estimator {
        use Method::*;
        match self {
            Ht | ReMC | ReWC => Estimator::Ht,
            Haj | ReMX | ReWX => Estimator::Haj,
            ReMCAdj | ReWCAdj => Estimator::HtAdj,
            ReMXAdj | ReWXAdj => Estimator::HajAdj,
        }
    }

    /// Whether the improved interval is reported. Baselines have no
    /// constraint, and for cluster-level adjustment with `v = c` the
    /// residuals are orthogonal to the design covariates so it would match
    /// the normal interval.
    pub fn has_improved_interval(self) -> bool {
        use Method::*;
        matches!(self, ReMC | ReWC | ReMX | ReWX | ReMXAdj | ReWXAdj)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
