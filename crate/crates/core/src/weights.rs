//! Adaptive penalty weights.
//!
//! Every scheme first produces a `p`-vector estimate `b` of coefficient importance, then
//! maps it to `w_j = 1 / |b_j|^gamma1` and `v_l = 1 / ||b^l||^gamma2`. The schemes differ
//! only in `b`:
//!
//! * `pca_d` / `pls_d`: unpenalized quantile regression on the first `d` PCA or PLS scores,
//!   mapped back to the original variables;
//! * `pca_1` / `pls_1`: the first PCA loading or PLS weight vector;
//! * `unpenalized`: the plain quantile regression fit (needs `n > p`).
//!
//! Zero entries would give infinite weights, so weights are clamped to `[1/cap, cap]`.

use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupStructure};
use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::penalty::PenaltySpec;
use crate::reduction::{choose_components, pca, pls1};
use crate::solver::{fit, SolverOptions};

pub const DEFAULT_WEIGHT_CAP: f64 = 1e8;
pub const DEFAULT_VARIANCE_THRESHOLD_PCT: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    PcaD,
    Pca1,
    PlsD,
    Pls1,
    Unpenalized,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::PcaD,
        SchemeKind::Pca1,
        SchemeKind::PlsD,
        SchemeKind::Pls1,
        SchemeKind::Unpenalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::PcaD => "pca_d",
            SchemeKind::Pca1 => "pca_1",
            SchemeKind::PlsD => "pls_d",
            SchemeKind::Pls1 => "pls_1",
            SchemeKind::Unpenalized => "unpenalized",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WeightScheme {
    pub kind: SchemeKind,
    #[serde(default)]
    pub gamma1: f64,
    #[serde(default)]
    pub gamma2: f64,
    #[serde(default = "default_threshold")]
    pub variance_threshold_pct: f64,
    #[serde(default = "default_cap")]
    pub weight_cap: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_VARIANCE_THRESHOLD_PCT
}

fn default_cap() -> f64 {
    DEFAULT_WEIGHT_CAP
}

impl WeightScheme {
    pub fn new(kind: SchemeKind, gamma1: f64, gamma2: f64) -> Self {
        Self {
            kind,
            gamma1,
            gamma2,
            variance_threshold_pct: DEFAULT_VARIANCE_THRESHOLD_PCT,
            weight_cap: DEFAULT_WEIGHT_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma("gamma1", self.gamma1)?;
        check_gamma("gamma2", self.gamma2)?;
        check_cap(self.weight_cap)?;
        if !(self.variance_threshold_pct > 0.0 && self.variance_threshold_pct <= 100.0) {
            return Err(Error::invalid(
                "variance_threshold_pct",
                format!("must lie in (0, 100], got {}", self.variance_threshold_pct),
            ));
        }
        Ok(())
    }
}

fn check_gamma(name: &str, g: f64) -> Result<()> {
    if g.is_finite() && g >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and >= 0, got {g}")))
    }
}

fn check_cap(cap: f64) -> Result<()> {
    if cap.is_finite() && cap >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("weight_cap", format!("must be finite and >= 1, got {cap}")))
    }
}

/// `1 / x^gamma` clamped to `[1/cap, cap]`; exactly 1 when `gamma = 0`.
pub fn reciprocal_power(x: f64, gamma: f64, cap: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    let x = x.abs();
    if x == 0.0 {
        return cap;
    }
    (1.0 / x.powf(gamma)).clamp(1.0 / cap, cap)
}

/// The importance estimate `b` behind a weight scheme, computed once and reusable for any
/// `(gamma1, gamma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate {
    kind: SchemeKind,
    estimate: Vec<f64>,
    components: Option<usize>,
}

impl WeightEstimate {
    /// Runs the scheme's decomposition and auxiliary fit on the training data.
    pub fn compute(
        kind: SchemeKind,
        train: &Dataset,
        tau: QuantileLevel,
        variance_threshold_pct: f64,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let (estimate, components) = match kind {
            SchemeKind::Pca1 => {
                let m = pca(train.x())?;
                (m.loadings().column(0).iter().copied().collect(), None)
            }
            SchemeKind::Pls1 => {
                let m = pls1(train.x(), train.y(), 1)?;
                (m.rotations().column(0).iter().copied().collect(), None)
            }
            SchemeKind::PcaD => {
                let m = pca(train.x())?;
                let d = choose_components(&m.explained_variance(), variance_threshold_pct)?;
                let basis = m.loadings().columns(0, d).clone_owned();
                (projected_fit(train, &basis, tau, opts)?, Some(d))
            }
            SchemeKind::PlsD => {
                let cap = train.n().min(train.p());
                let m = pls1(train.x(), train.y(), cap)?;
                let d = choose_components(m.explained_x_variance(), variance_threshold_pct)?;
                let basis = m.rotations().columns(0, d).clone_owned();
                (projected_fit(train, &basis, tau, opts)?, Some(d))
            }
            SchemeKind::Unpenalized => {
                let (n, p) = (train.n(), train.p());
                if n <= p {
                    return Err(Error::Infeasible { n, p });
                }
                let spec = PenaltySpec::unpenalized(GroupStructure::singletons(p)?)?;
                let res = fit(train, tau, &spec, &cold(opts))?;
                if !res.converged {
                    return Err(Error::NotConverged {
                        what: "unpenalized weight fit",
                        kkt_residual: res.kkt_residual,
                        iterations: res.iterations,
                    });
                }
                (res.beta_hat, None)
            }
        };
        Ok(Self {
            kind,
            estimate,
            components,
        })
    }

    /// Wraps an externally computed estimate.
    pub fn from_vector(kind: SchemeKind, estimate: Vec<f64>) -> Self {
        Self {
            kind,
            estimate,
            components: None,
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    /// Number of components `d` used by the `_d` schemes.
    pub fn components(&self) -> Option<usize> {
        self.components
    }

    /// `(w, v)` for the given exponents.
    pub fn weights(
        &self,
        groups: &GroupStructure,
        gamma1: f64,
        gamma2: f64,
        cap: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if groups.p() != self.estimate.len() {
            return Err(Error::dims("groups", self.estimate.len(), groups.p()));
        }
        check_gamma("gamma1", gamma1)?;
        check_gamma("gamma2", gamma2)?;
        check_cap(cap)?;
        let w = self
            .estimate
            .iter()
            .map(|&b| reciprocal_power(b, gamma1, cap))
            .collect();
        let v = groups
            .iter()
            .map(|members| {
                let norm = members.iter().map(|&j| self.estimate[j].powi(2)).sum::<f64>().sqrt();
                reciprocal_power(norm, gamma2, cap)
            })
            .collect();
        Ok((w, v))
    }
}

/// Weights for one scheme, computed from scratch on `train`.
pub fn adaptive_weights(
    train: &Dataset,
    tau: QuantileLevel,
    groups: &GroupStructure,
    scheme: &WeightScheme,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    scheme.validate()?;
    if groups.p() != train.p() {
        return Err(Error::dims("groups", train.p(), groups.p()));
    }
    let est = WeightEstimate::compute(scheme.kind, train, tau, scheme.variance_threshold_pct, opts)?;
    est.weights(groups, scheme.gamma1, scheme.gamma2, scheme.weight_cap)
}

fn cold(opts: &SolverOptions) -> SolverOptions {
    SolverOptions {
        beta0: None,
        intercept0: 0.0,
        ..opts.clone()
    }
}

/// Unpenalized fit on the scores `X B`, mapped back to `B beta`.
fn projected_fit(
    train: &Dataset,
    basis: &DMatrix<f64>,
    tau: QuantileLevel,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let scores = train.x() * basis;
    let reduced = Dataset::new(scores, train.y().clone())?;
    let spec = PenaltySpec::unpenalized(GroupStructure::singletons(basis.ncols())?)?;
    let res = fit(&reduced, tau, &spec, &cold(opts))?;
    if !res.converged {
        return Err(Error::NotConverged {
            what: "projected weight fit",
            kkt_residual: res.kkt_residual,
            iterations: res.iterations,
        });
    }
    let back: DVector<f64> = basis * DVector::from_vec(res.beta_hat);
    Ok(back.iter().copied().collect())
}
