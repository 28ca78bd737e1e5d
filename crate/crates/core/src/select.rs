//! Validation-set grid search over penalty families and their hyperparameters.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupStructure};
use crate::error::{Error, Result};
use crate::loss::{mean_check_loss, residuals, QuantileLevel};
use crate::penalty::PenaltySpec;
use crate::solver::{fit, lambda_max, FitResult, SolverOptions};
use crate::weights::{SchemeKind, WeightEstimate, DEFAULT_VARIANCE_THRESHOLD_PCT, DEFAULT_WEIGHT_CAP};

/// Mean check loss of `beta` on `d`.
pub fn quantile_error(beta: &[f64], d: &Dataset, tau: QuantileLevel) -> Result<f64> {
    quantile_error_with_intercept(beta, 0.0, d, tau)
}

pub fn quantile_error_with_intercept(beta: &[f64], intercept: f64, d: &Dataset, tau: QuantileLevel) -> Result<f64> {
    if d.n() == 0 {
        return Err(Error::invalid("dataset", "empty evaluation set"));
    }
    Ok(mean_check_loss(&residuals(beta, intercept, d)?, tau))
}

/// A penalty family: which parameters are tuned and how the weights are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Lasso,
    Sgl,
    /// Adaptive weights on the l1 part only (`v = 1`).
    AlSgl(SchemeKind),
    Asgl(SchemeKind),
}

impl ModelKind {
    pub fn scheme(self) -> Option<SchemeKind> {
        match self {
            ModelKind::AlSgl(s) | ModelKind::Asgl(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_adaptive(self) -> bool {
        self.scheme().is_some()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Lasso => f.write_str("LASSO"),
            ModelKind::Sgl => f.write_str("SGL"),
            ModelKind::AlSgl(s) => write!(f, "AL-SGL-{s}"),
            ModelKind::Asgl(s) => write!(f, "ASGL-{s}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let scheme = |rest: &str| {
            SchemeKind::ALL
                .into_iter()
                .find(|k| k.name() == rest)
                .ok_or_else(|| Error::invalid("model", format!("unknown weight scheme in `{s}`")))
        };
        match lower.as_str() {
            "lasso" => Ok(ModelKind::Lasso),
            "sgl" => Ok(ModelKind::Sgl),
            _ => {
                if let Some(rest) = lower.strip_prefix("al-sgl-") {
                    Ok(ModelKind::AlSgl(scheme(rest)?))
                } else if let Some(rest) = lower.strip_prefix("asgl-") {
                    Ok(ModelKind::Asgl(scheme(rest)?))
                } else {
                    Err(Error::invalid(
                        "model",
                        format!("unknown model `{s}` (expected lasso, sgl, al-sgl-<scheme> or asgl-<scheme>)"),
                    ))
                }
            }
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for ModelKind {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "ModelKind".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        schemars::json_schema!({
            "type": "string",
            "pattern": "^(lasso|LASSO|sgl|SGL|(al-sgl|AL-SGL|asgl|ASGL)-(pca_d|pca_1|pls_d|pls_1|unpenalized))$"
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum LambdaGrid {
    /// Log-spaced from `lambda_max` down to `min_ratio * lambda_max`.
    Path {
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_min_ratio")]
        min_ratio: f64,
    },
    /// Fixed values, strictly decreasing.
    Values(Vec<f64>),
}

fn default_count() -> usize {
    20
}

fn default_min_ratio() -> f64 {
    1e-3
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Path {
            count: default_count(),
            min_ratio: default_min_ratio(),
        }
    }
}

impl LambdaGrid {
    pub fn values(&self, lambda_max: f64) -> Vec<f64> {
        match self {
            LambdaGrid::Values(v) => v.clone(),
            LambdaGrid::Path { count, min_ratio } => {
                if *count == 1 {
                    return vec![lambda_max];
                }
                let step = min_ratio.ln() / (*count as f64 - 1.0);
                (0..*count).map(|i| lambda_max * (step * i as f64).exp()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub models: Vec<ModelKind>,
    pub lambdas: LambdaGrid,
    pub alphas: Vec<f64>,
    pub gamma1s: Vec<f64>,
    pub gamma2s: Vec<f64>,
    pub variance_threshold_pct: f64,
    pub weight_cap: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            models: vec![ModelKind::Asgl(SchemeKind::PlsD)],
            lambdas: LambdaGrid::default(),
            alphas: (0..10).map(|i| 0.05 + 0.1 * i as f64).collect(),
            gamma1s: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            gamma2s: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            variance_threshold_pct: DEFAULT_VARIANCE_THRESHOLD_PCT,
            weight_cap: DEFAULT_WEIGHT_CAP,
        }
    }
}

impl Grid {
    /// The same grid restricted to one model.
    pub fn for_model(&self, model: ModelKind) -> Grid {
        Grid {
            models: vec![model],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("grid.models", "must not be empty"));
        }
        match &self.lambdas {
            LambdaGrid::Path { count, min_ratio } => {
                if *count == 0 {
                    return Err(Error::invalid("grid.lambdas.count", "must be at least 1"));
                }
                if !(*min_ratio > 0.0 && *min_ratio < 1.0) {
                    return Err(Error::invalid("grid.lambdas.min_ratio", format!("must lie in (0, 1), got {min_ratio}")));
                }
            }
            LambdaGrid::Values(v) => {
                if v.is_empty() {
                    return Err(Error::invalid("grid.lambdas", "must not be empty"));
                }
                if v.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                    return Err(Error::invalid("grid.lambdas", "values must be positive and finite"));
                }
                if v.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::invalid("grid.lambdas", "values must be strictly decreasing"));
                }
            }
        }
        check_list("grid.alphas", &self.alphas, 0.0, 1.0)?;
        check_list("grid.gamma1s", &self.gamma1s, 0.0, f64::MAX)?;
        check_list("grid.gamma2s", &self.gamma2s, 0.0, f64::MAX)?;
        if !(self.variance_threshold_pct > 0.0 && self.variance_threshold_pct <= 100.0) {
            return Err(Error::invalid("grid.variance_threshold_pct", "must lie in (0, 100]"));
        }
        if !(self.weight_cap.is_finite() && self.weight_cap >= 1.0) {
            return Err(Error::invalid("grid.weight_cap", "must be finite and >= 1"));
        }
        Ok(())
    }

    /// `(alpha, gamma1, gamma2)` triples searched for `model`.
    fn settings(&self, model: ModelKind) -> Vec<(f64, f64, f64)> {
        let (alphas, g1, g2): (&[f64], &[f64], &[f64]) = match model {
            ModelKind::Lasso => (&[1.0], &[0.0], &[0.0]),
            ModelKind::Sgl => (&self.alphas, &[0.0], &[0.0]),
            ModelKind::AlSgl(_) => (&self.alphas, &self.gamma1s, &[0.0]),
            ModelKind::Asgl(_) => (&self.alphas, &self.gamma1s, &self.gamma2s),
        };
        let mut out = Vec::new();
        for &a in g1 {
            for &b in g2 {
                for &alpha in alphas {
                    out.push((alpha, a, b));
                }
            }
        }
        out
    }
}

fn check_list(name: &str, v: &[f64], lo: f64, hi: f64) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(name, "must not be empty"));
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= lo && **x <= hi)) {
        return Err(Error::invalid(name, format!("value {bad} out of range")));
    }
    Ok(())
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Combination {
    pub model: ModelKind,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Combination {
    /// Preference among equal validation errors: larger lambda, larger alpha, smaller
    /// gamma1, smaller gamma2, then model order.
    fn preference(&self, other: &Self, model_rank: impl Fn(ModelKind) -> usize) -> Ordering {
        other
            .lambda
            .total_cmp(&self.lambda)
            .then(other.alpha.total_cmp(&self.alpha))
            .then(self.gamma1.total_cmp(&other.gamma1))
            .then(self.gamma2.total_cmp(&other.gamma2))
            .then(model_rank(self.model).cmp(&model_rank(other.model)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GridEntry {
    pub combination: Combination,
    /// `None` when the fit did not converge or could not be run.
    pub val_error: Option<f64>,
    pub converged: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub support_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GridSearchResult {
    pub best: Combination,
    pub best_val_error: f64,
    pub best_fit: FitResult,
    pub best_w: Vec<f64>,
    pub best_v: Vec<f64>,
    pub table: Vec<GridEntry>,
    /// Filled in by [`GridSearchResult::evaluate_test`].
    pub test_error: Option<f64>,
}

impl GridSearchResult {
    /// Test error of the selected model; stored and returned.
    pub fn evaluate_test(&mut self, test: &Dataset, tau: QuantileLevel) -> Result<f64> {
        let e = self.best_fit.quantile_error(test, tau)?;
        self.test_error = Some(e);
        Ok(e)
    }

    pub fn failed_fits(&self) -> usize {
        self.table.iter().filter(|e| e.val_error.is_none()).count()
    }
}

/// Coefficients above this magnitude count as selected.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// Fits along a decreasing `lambdas` path, each fit warm-started from the previous one.
pub fn fit_path(
    train: &Dataset,
    tau: QuantileLevel,
    base: &PenaltySpec,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<FitResult>> {
    let mut out: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let spec = base.with_lambda(lambda)?;
        let o = match out.last() {
            Some(prev) => opts.warm_from(prev),
            None => opts.clone(),
        };
        out.push(fit(train, tau, &spec, &o)?);
    }
    Ok(out)
}

/// Penalty weights for one model at `(gamma1, gamma2)`.
fn model_weights(
    model: ModelKind,
    estimate: Option<&WeightEstimate>,
    groups: &GroupStructure,
    gamma1: f64,
    gamma2: f64,
    cap: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match (model, estimate) {
        (ModelKind::Lasso | ModelKind::Sgl, _) => Ok((vec![1.0; groups.p()], vec![1.0; groups.k()])),
        (ModelKind::AlSgl(_), Some(est)) => {
            let (w, _) = est.weights(groups, gamma1, 0.0, cap)?;
            Ok((w, vec![1.0; groups.k()]))
        }
        (ModelKind::Asgl(_), Some(est)) => est.weights(groups, gamma1, gamma2, cap),
        (_, None) => unreachable!("adaptive model without a weight estimate"),
    }
}

struct PathJob {
    model: ModelKind,
    alpha: f64,
    gamma1: f64,
    gamma2: f64,
}

struct PathOutcome {
    entries: Vec<GridEntry>,
    fits: Vec<FitResult>,
    w: Vec<f64>,
    v: Vec<f64>,
}

/// Evaluates every grid combination on `val` after fitting on `train`, and picks the
/// smallest validation error (ties resolved by [`Combination`] preference).
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    tau: QuantileLevel,
    groups: &GroupStructure,
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<GridSearchResult> {
    grid.validate()?;
    opts.validate()?;
    if groups.p() != train.p() {
        return Err(Error::dims("groups", train.p(), groups.p()));
    }
    if val.p() != train.p() {
        return Err(Error::dims("validation columns", train.p(), val.p()));
    }
    if val.n() == 0 {
        return Err(Error::invalid("dataset", "empty validation set"));
    }

    // one decomposition per scheme, shared by every gamma and by AL-SGL / ASGL
    let mut schemes: Vec<SchemeKind> = grid.models.iter().filter_map(|m| m.scheme()).collect();
    schemes.sort();
    schemes.dedup();
    let estimates: Vec<(SchemeKind, std::result::Result<WeightEstimate, String>)> = schemes
        .par_iter()
        .map(|&k| {
            let est = WeightEstimate::compute(k, train, tau, grid.variance_threshold_pct, opts)
                .map_err(|e| e.to_string());
            (k, est)
        })
        .collect();
    let estimate_for = |k: SchemeKind| estimates.iter().find(|(s, _)| *s == k).map(|(_, e)| e);

    let jobs: Vec<PathJob> = grid
        .models
        .iter()
        .flat_map(|&model| {
            grid.settings(model)
                .into_iter()
                .map(move |(alpha, gamma1, gamma2)| PathJob {
                    model,
                    alpha,
                    gamma1,
                    gamma2,
                })
        })
        .collect();

    let outcomes: Vec<PathOutcome> = jobs
        .par_iter()
        .map(|job| {
            let estimate = job.model.scheme().map(|k| estimate_for(k).expect("estimated above"));
            run_path(train, val, tau, groups, grid, opts, job, estimate)
        })
        .collect();

    let model_rank = |m: ModelKind| grid.models.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    let mut best: Option<(usize, usize)> = None;
    for (pi, out) in outcomes.iter().enumerate() {
        for (li, e) in out.entries.iter().enumerate() {
            let Some(err) = e.val_error else { continue };
            let better = match best {
                None => true,
                Some((bp, bl)) => {
                    let cur = &outcomes[bp].entries[bl];
                    match err.total_cmp(&cur.val_error.unwrap()) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            e.combination.preference(&cur.combination, model_rank) == Ordering::Less
                        }
                    }
                }
            };
            if better {
                best = Some((pi, li));
            }
        }
    }

    let Some((bp, bl)) = best else {
        let mut reasons: Vec<String> = outcomes
            .iter()
            .flat_map(|o| o.entries.iter())
            .filter_map(|e| e.error.clone())
            .collect();
        reasons.sort();
        reasons.dedup();
        let total: usize = outcomes.iter().map(|o| o.entries.len()).sum();
        return Err(Error::AllFitsFailed(format!("{total} combinations; {}", reasons.join("; "))));
    };
    let table: Vec<GridEntry> = outcomes.iter().flat_map(|o| o.entries.iter().cloned()).collect();
    let winner = &outcomes[bp];
    Ok(GridSearchResult {
        best: winner.entries[bl].combination,
        best_val_error: winner.entries[bl].val_error.unwrap(),
        best_fit: winner.fits[bl].clone(),
        best_w: winner.w.clone(),
        best_v: winner.v.clone(),
        table,
        test_error: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    train: &Dataset,
    val: &Dataset,
    tau: QuantileLevel,
    groups: &GroupStructure,
    grid: &Grid,
    opts: &SolverOptions,
    job: &PathJob,
    estimate: Option<&std::result::Result<WeightEstimate, String>>,
) -> PathOutcome {
    let failed = |lambdas: Vec<f64>, msg: String| PathOutcome {
        entries: lambdas
            .into_iter()
            .map(|lambda| GridEntry {
                combination: Combination {
                    model: job.model,
                    lambda,
                    alpha: job.alpha,
                    gamma1: job.gamma1,
                    gamma2: job.gamma2,
                },
                val_error: None,
                converged: false,
                kkt_residual: f64::NAN,
                iterations: 0,
                support_size: 0,
                error: Some(msg.clone()),
            })
            .collect(),
        fits: Vec::new(),
        w: Vec::new(),
        v: Vec::new(),
    };
    let placeholder = || grid.lambdas.values(1.0);
    let est = match estimate {
        Some(Err(msg)) => return failed(placeholder(), format!("{} weights: {msg}", job.model)),
        Some(Ok(e)) => Some(e),
        None => None,
    };
    let prepared = model_weights(job.model, est, groups, job.gamma1, job.gamma2, grid.weight_cap).and_then(|(w, v)| {
        let lmax = lambda_max(train, tau, groups, &w, &v, opts.intercept)?;
        // a zero lambda_max (perfect null fit) still needs a positive path
        let lambdas = grid.lambdas.values(if lmax > 0.0 { lmax } else { 1.0 });
        let base = PenaltySpec::new(lambdas[0], job.alpha, w.clone(), v.clone(), groups.clone())?;
        Ok((w, v, lambdas, base))
    });
    let (w, v, lambdas, base) = match prepared {
        Ok(p) => p,
        Err(e) => return failed(placeholder(), e.to_string()),
    };
    let fits = match fit_path(train, tau, &base, &lambdas, opts) {
        Ok(f) => f,
        Err(e) => return failed(lambdas, e.to_string()),
    };
    let entries = lambdas
        .iter()
        .zip(&fits)
        .map(|(&lambda, f)| {
            let val_error = if f.converged {
                quantile_error_with_intercept(&f.beta_hat, f.intercept, val, tau).ok()
            } else {
                None
            };
            GridEntry {
                combination: Combination {
                    model: job.model,
                    lambda,
                    alpha: job.alpha,
                    gamma1: job.gamma1,
                    gamma2: job.gamma2,
                },
                val_error,
                converged: f.converged,
                kkt_residual: f.kkt_residual,
                iterations: f.iterations,
                support_size: f.support(DEFAULT_ZERO_TOL).len(),
                error: (!f.converged).then(|| "solver did not converge".to_string()),
            }
        })
        .collect();
    PathOutcome { entries, fits, w, v }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        for m in [
            ModelKind::Lasso,
            ModelKind::Sgl,
            ModelKind::AlSgl(SchemeKind::PcaD),
            ModelKind::Asgl(SchemeKind::Unpenalized),
        ] {
            assert_eq!(m.to_string().parse::<ModelKind>().unwrap(), m);
        }
        assert_eq!("asgl-pls_d".parse::<ModelKind>().unwrap(), ModelKind::Asgl(SchemeKind::PlsD));
        assert!("asgl-foo".parse::<ModelKind>().is_err());
        assert!("ridge".parse::<ModelKind>().is_err());
    }

    #[test]
    fn default_lambda_path() {
        let v = LambdaGrid::default().values(2.0);
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], 2.0);
        assert!((v[19] - 2e-3).abs() < 1e-15);
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn default_grid_is_valid() {
        let g = Grid::default();
        g.validate().unwrap();
        assert_eq!(g.alphas.len(), 10);
        assert!((g.alphas[9] - 0.95).abs() < 1e-12);
        let mut bad = g.clone();
        bad.lambdas = LambdaGrid::Values(vec![0.1, 0.2]);
        assert!(bad.validate().is_err());
        bad.lambdas = LambdaGrid::default();
        bad.alphas = vec![1.5];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn quantile_error_examples() {
        let x = nalgebra::DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        let d = Dataset::new(x, nalgebra::DVector::from_vec(vec![2.0, -2.0])).unwrap();
        assert_eq!(quantile_error(&[0.0], &d, QuantileLevel::MEDIAN).unwrap(), 1.0);
        assert_eq!(
            quantile_error(&[0.0], &d, QuantileLevel::MEDIAN).unwrap(),
            crate::loss::qr_risk(&[0.0], &d, QuantileLevel::MEDIAN).unwrap()
        );
    }

    #[test]
    fn tie_preference() {
        let c = |lambda, alpha, gamma1| Combination {
            model: ModelKind::Sgl,
            lambda,
            alpha,
            gamma1,
            gamma2: 0.0,
        };
        let rank = |_| 0;
        assert_eq!(c(2.0, 0.5, 0.0).preference(&c(1.0, 0.9, 0.0), rank), Ordering::Less);
        assert_eq!(c(1.0, 0.9, 0.0).preference(&c(1.0, 0.5, 0.0), rank), Ordering::Less);
        assert_eq!(c(1.0, 0.5, 0.5).preference(&c(1.0, 0.5, 1.0), rank), Ordering::Less);
    }
}
