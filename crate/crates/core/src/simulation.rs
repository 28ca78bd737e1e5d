//! Synthetic grouped-regression benchmarks and their evaluation metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupStructure, SplitSpec};
use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::select::{grid_search, Combination, Grid, LambdaGrid, ModelKind, DEFAULT_ZERO_TOL};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Sim1P225,
    Sim1P625,
    Sim2P225,
    Sim2P625,
    Sim3Sparse,
    Sim3Dense,
    Custom,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Sim1P225 => "sim1_p225",
            ScenarioName::Sim1P625 => "sim1_p625",
            ScenarioName::Sim2P225 => "sim2_p225",
            ScenarioName::Sim2P625 => "sim2_p625",
            ScenarioName::Sim3Sparse => "sim3_sparse",
            ScenarioName::Sim3Dense => "sim3_dense",
            ScenarioName::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ScenarioName::Sim1P225,
            ScenarioName::Sim1P625,
            ScenarioName::Sim2P225,
            ScenarioName::Sim2P625,
            ScenarioName::Sim3Sparse,
            ScenarioName::Sim3Dense,
            ScenarioName::Custom,
        ]
        .into_iter()
        .find(|n| n.as_str() == s)
        .ok_or_else(|| Error::invalid("scenario", format!("unknown scenario `{s}`")))
    }
}

/// `y = X beta + eps` with equicorrelated Gaussian blocks and Student-t noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: ScenarioName,
    pub k: usize,
    pub group_size: usize,
    pub beta_true: Vec<f64>,
    pub rho_within: f64,
    pub noise_df: f64,
    pub sizes: SplitSpec,
}

/// Groups `1..=active` get `(1, 2, ..., nonzero, 0, ..., 0)`, the rest are zero.
fn staircase(k: usize, size: usize, active: usize, nonzero: usize) -> Vec<f64> {
    let mut beta = vec![0.0; k * size];
    for l in 0..active {
        for i in 0..nonzero {
            beta[l * size + i] = (i + 1) as f64;
        }
    }
    beta
}

impl Scenario {
    pub fn preset(name: ScenarioName) -> Result<Self> {
        let high = |n_test| SplitSpec {
            n_train: 100,
            n_val: 100,
            n_test,
            seed: 0,
        };
        let low = SplitSpec {
            n_train: 200,
            n_val: 200,
            n_test: 5000,
            seed: 0,
        };
        let (k, size, active, nonzero, sizes) = match name {
            ScenarioName::Sim1P225 => (15, 15, 7, 8, high(5000)),
            ScenarioName::Sim1P625 => (25, 25, 7, 8, high(5000)),
            ScenarioName::Sim2P225 => (15, 15, 3, 15, high(5000)),
            ScenarioName::Sim2P625 => (25, 25, 3, 25, high(5000)),
            ScenarioName::Sim3Sparse => (10, 10, 5, 6, low),
            ScenarioName::Sim3Dense => (10, 10, 3, 10, low),
            ScenarioName::Custom => {
                return Err(Error::invalid("scenario", "`custom` has no preset; give k, group_size and beta_true"))
            }
        };
        Ok(Self {
            name,
            k,
            group_size: size,
            beta_true: staircase(k, size, active, nonzero),
            rho_within: 0.5,
            noise_df: 3.0,
            sizes,
        })
    }

    pub fn p(&self) -> usize {
        self.k * self.group_size
    }

    pub fn groups(&self) -> Result<GroupStructure> {
        GroupStructure::contiguous(self.k, self.group_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.group_size == 0 {
            return Err(Error::invalid("scenario", "k and group_size must be positive"));
        }
        if self.beta_true.len() != self.p() {
            return Err(Error::dims("beta_true", self.p(), self.beta_true.len()));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("beta_true", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.rho_within) {
            return Err(Error::invalid("rho_within", format!("must lie in [0, 1), got {}", self.rho_within)));
        }
        if !(self.noise_df > 0.0 && self.noise_df.is_finite()) {
            return Err(Error::invalid("noise_df", "must be positive"));
        }
        if self.sizes.n_train == 0 || self.sizes.n_val == 0 || self.sizes.n_test == 0 {
            return Err(Error::invalid("sizes", "train, validation and test sizes must be positive"));
        }
        Ok(())
    }
}

/// Draws `n_train + n_val + n_test` rows; identical seeds give bit-identical data.
pub fn generate(s: &Scenario, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    s.validate()?;
    let n = s.sizes.total();
    let (p, g) = (s.p(), s.group_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = DMatrix::from_fn(g, g, |i, j| if i == j { 1.0 } else { s.rho_within });
    let chol = cov.cholesky().expect("equicorrelation with rho < 1 is positive definite").unpack();
    let noise = StudentT::new(s.noise_df).map_err(|e| Error::invalid("noise_df", e.to_string()))?;

    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(g);
    for i in 0..n {
        for l in 0..s.k {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let block = &chol * &z;
            for (t, val) in block.iter().enumerate() {
                x[(i, l * g + t)] = *val;
            }
        }
    }
    let beta = DVector::from_column_slice(&s.beta_true);
    let mut y = &x * &beta;
    for v in y.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    Ok((Dataset::new(x, y)?, s.beta_true.clone()))
}

/// Generated data cut into consecutive train / validation / test rows (rows are i.i.d.).
pub fn generate_split(s: &Scenario, seed: u64) -> Result<(Dataset, Dataset, Dataset, Vec<f64>)> {
    let (d, beta) = generate(s, seed)?;
    let SplitSpec { n_train, n_val, .. } = s.sizes;
    let rows = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let total = s.sizes.total();
    Ok((
        d.select_rows(&rows(0, n_train)),
        d.select_rows(&rows(n_train, n_train + n_val)),
        d.select_rows(&rows(n_train + n_val, total)),
        beta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricsReport {
    pub dist: f64,
    pub et: f64,
    pub csr: f64,
    pub tpr: f64,
    pub tnr: f64,
}

/// Recovery metrics. A coefficient counts as selected when `|beta_hat_j| > zero_tol`.
/// TPR (TNR) is 1 when the truth has no nonzeros (zeros).
pub fn metrics(beta_hat: &[f64], beta_true: &[f64], et: f64, zero_tol: f64) -> Result<MetricsReport> {
    if beta_hat.len() != beta_true.len() {
        return Err(Error::dims("estimated coefficients", beta_true.len(), beta_hat.len()));
    }
    let p = beta_true.len();
    let (mut pos, mut neg, mut tp, mut tn) = (0usize, 0usize, 0usize, 0usize);
    let mut d2 = 0.0;
    for (&b, &t) in beta_hat.iter().zip(beta_true) {
        d2 += (b - t) * (b - t);
        let selected = b.abs() > zero_tol;
        if t != 0.0 {
            pos += 1;
            tp += usize::from(selected);
        } else {
            neg += 1;
            tn += usize::from(!selected);
        }
    }
    let rate = |hit: usize, total: usize| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
    Ok(MetricsReport {
        dist: d2.sqrt(),
        et,
        csr: rate(tp + tn, p),
        tpr: rate(tp, pos),
        tnr: rate(tn, neg),
    })
}

/// A model entry of an experiment, optionally overriding parts of the shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(from = "ModelEntry", into = "ModelEntry")]
#[schemars(with = "ModelEntry")]
pub struct ModelConfig {
    pub model: ModelKind,
    pub label: Option<String>,
    pub lambdas: Option<LambdaGrid>,
    pub alphas: Option<Vec<f64>>,
    pub gamma1s: Option<Vec<f64>>,
    pub gamma2s: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
enum ModelEntry {
    Name(ModelKind),
    Full {
        model: ModelKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambdas: Option<LambdaGrid>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alphas: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma1s: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma2s: Option<Vec<f64>>,
    },
}

impl From<ModelEntry> for ModelConfig {
    fn from(e: ModelEntry) -> Self {
        match e {
            ModelEntry::Name(model) => ModelConfig::new(model),
            ModelEntry::Full {
                model,
                label,
                lambdas,
                alphas,
                gamma1s,
                gamma2s,
            } => ModelConfig {
                model,
                label,
                lambdas,
                alphas,
                gamma1s,
                gamma2s,
            },
        }
    }
}

impl From<ModelConfig> for ModelEntry {
    fn from(c: ModelConfig) -> Self {
        ModelEntry::Full {
            model: c.model,
            label: c.label,
            lambdas: c.lambdas,
            alphas: c.alphas,
            gamma1s: c.gamma1s,
            gamma2s: c.gamma2s,
        }
    }
}

impl ModelConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            label: None,
            lambdas: None,
            alphas: None,
            gamma1s: None,
            gamma2s: None,
        }
    }

    /// The model fitted at `lambda_max` only (the all-zero fit).
    pub fn null(model: ModelKind) -> Self {
        Self {
            label: Some(format!("{model}-null")),
            lambdas: Some(LambdaGrid::Path {
                count: 1,
                min_ratio: 0.5,
            }),
            ..Self::new(model)
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.model.to_string())
    }

    pub fn grid(&self, base: &Grid) -> Grid {
        let mut g = base.for_model(self.model);
        if let Some(l) = &self.lambdas {
            g.lambdas = l.clone();
        }
        if let Some(a) = &self.alphas {
            g.alphas = a.clone();
        }
        if let Some(a) = &self.gamma1s {
            g.gamma1s = a.clone();
        }
        if let Some(a) = &self.gamma2s {
            g.gamma2s = a.clone();
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RepetitionRow {
    pub repetition: usize,
    pub seed: u64,
    pub model: String,
    pub metrics: MetricsReport,
    pub best: Combination,
    pub val_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MeanSd {
    /// NaN (written as JSON `null`) when there are no values.
    #[schemars(with = "Option<f64>")]
    pub mean: f64,
    #[schemars(with = "Option<f64>")]
    pub sd: f64,
}

impl MeanSd {
    /// Sample mean and standard deviation (denominator `n - 1`; 0 for one value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SummaryRow {
    pub model: String,
    pub completed: usize,
    pub failed: usize,
    pub dist: MeanSd,
    pub et: MeanSd,
    pub csr: MeanSd,
    pub tpr: MeanSd,
    pub tnr: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Failure {
    pub repetition: usize,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExperimentReport {
    pub scenario: ScenarioName,
    pub rows: Vec<RepetitionRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<Failure>,
}

impl ExperimentReport {
    pub fn summary_for(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.model == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub grid: Grid,
    pub solver: SolverOptions,
    pub zero_tol: f64,
    pub tau: QuantileLevel,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            solver: SolverOptions::default(),
            zero_tol: DEFAULT_ZERO_TOL,
            tau: QuantileLevel::MEDIAN,
        }
    }
}

/// Repetition `r` uses data seed `base_seed + r`, shared by every model.
pub fn run_experiment(
    s: &Scenario,
    models: &[ModelConfig],
    repetitions: usize,
    base_seed: u64,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions", "must be at least 1"));
    }
    if models.is_empty() {
        return Err(Error::invalid("models", "must not be empty"));
    }
    s.validate()?;
    opts.solver.validate()?;
    for m in models {
        m.grid(&opts.grid).validate()?;
    }
    let groups = s.groups()?;

    type RepOutcome = Vec<std::result::Result<RepetitionRow, Failure>>;
    let per_rep: Vec<RepOutcome> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r as u64);
            let data = generate_split(s, seed);
            models
                .iter()
                .map(|m| {
                    let fail = |e: Error| Failure {
                        repetition: r,
                        model: m.label(),
                        error: e.to_string(),
                    };
                    let (train, val, test, beta) = data.as_ref().map_err(|e| Failure {
                        repetition: r,
                        model: m.label(),
                        error: e.to_string(),
                    })?;
                    let mut res = grid_search(train, val, opts.tau, &groups, &m.grid(&opts.grid), &opts.solver)
                        .map_err(fail)?;
                    let et = res.evaluate_test(test, opts.tau).map_err(fail)?;
                    let metrics = metrics(&res.best_fit.beta_hat, beta, et, opts.zero_tol).map_err(fail)?;
                    Ok(RepetitionRow {
                        repetition: r,
                        seed,
                        model: m.label(),
                        metrics,
                        best: res.best,
                        val_error: res.best_val_error,
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in per_rep.into_iter().flatten() {
        match outcome {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    let summary = models
        .iter()
        .map(|m| {
            let label = m.label();
            let mine: Vec<&RepetitionRow> = rows.iter().filter(|r| r.model == label).collect();
            let col = |f: fn(&MetricsReport) -> f64| MeanSd::of(&mine.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
            SummaryRow {
                model: label.clone(),
                completed: mine.len(),
                failed: failures.iter().filter(|f| f.model == label).count(),
                dist: col(|m| m.dist),
                et: col(|m| m.et),
                csr: col(|m| m.csr),
                tpr: col(|m| m.tpr),
                tnr: col(|m| m.tnr),
            }
        })
        .collect();
    Ok(ExperimentReport {
        scenario: s.name,
        rows,
        summary,
        failures,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv(format!("{}: {e}", path.display()))
}

/// Writes `repetitions.csv` and `summary.csv` into `dir`.
pub fn write_report_csv(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let path = dir.join("repetitions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "repetition", "seed", "model", "dist", "Et", "CSR", "TPR", "TNR", "val_error", "lambda", "alpha", "gamma1",
        "gamma2",
    ])
    .map_err(csv_err(&path))?;
    for r in &report.rows {
        let m = &r.metrics;
        w.write_record([
            r.repetition.to_string(),
            r.seed.to_string(),
            r.model.clone(),
            m.dist.to_string(),
            m.et.to_string(),
            m.csr.to_string(),
            m.tpr.to_string(),
            m.tnr.to_string(),
            r.val_error.to_string(),
            r.best.lambda.to_string(),
            r.best.alpha.to_string(),
            r.best.gamma1.to_string(),
            r.best.gamma2.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "model", "completed", "failed", "dist_mean", "dist_sd", "Et_mean", "Et_sd", "CSR_mean", "CSR_sd", "TPR_mean",
        "TPR_sd", "TNR_mean", "TNR_sd",
    ])
    .map_err(csv_err(&path))?;
    for s in &report.summary {
        let mut rec = vec![s.model.clone(), s.completed.to_string(), s.failed.to_string()];
        for ms in [s.dist, s.et, s.csr, s.tpr, s.tnr] {
            rec.push(ms.mean.to_string());
            rec.push(ms.sd.to_string());
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;

    if !report.failures.is_empty() {
        let path = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["repetition", "model", "error"]).map_err(csv_err(&path))?;
        for f in &report.failures {
            w.write_record([f.repetition.to_string(), f.model.clone(), f.error.clone()])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;
    }
    Ok(())
}
