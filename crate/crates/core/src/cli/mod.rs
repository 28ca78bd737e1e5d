//! Batch front-end behind the `asgl` binary: loads a run configuration, executes one
//! subcommand and writes its artifacts under the output directory.

pub mod config;

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub use config::{Command, RunConfig};
use config::{DataConfig, GroupRule, GroupsConfig};

use crate::data::{load_csv, load_groups, split, standardize, Dataset, GroupStructure, ResponseTransform};
use crate::error::Error;
use crate::genomics::{filter_variables, pca_cluster, preprocess, stability_analysis, write_stability_csv, FilterTrace, StabilityOptions, StabilityReport};
use crate::loss::QuantileLevel;
use crate::penalty::PenaltySpec;
use crate::plot::box_plot_svg;
use crate::select::{grid_search, Combination};
use crate::simulation::{run_experiment, write_report_csv, ExperimentOptions, ExperimentReport};
use crate::solver::fit;
use crate::weights::{adaptive_weights, WeightScheme};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// The machine-readable error printed on stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub kind: String,
    /// Process exit code.
    pub code: i32,
    pub message: String,
    /// Offending configuration key, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Offending file, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError(pub ErrorBody);

impl CliError {
    pub fn code(&self) -> i32 {
        self.0.code
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorReport { error: self.0.clone() }).expect("error report serializes")
    }

    /// Failure while writing artifacts; always a runtime failure.
    fn write(e: Error) -> Self {
        let mut c = CliError::from(e);
        c.0.code = EXIT_RUNTIME;
        c.0.kind = "write".into();
        c
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code, field, path) = match &e {
            Error::DimensionMismatch { .. } => ("dimension_mismatch", EXIT_VALIDATION, None, None),
            Error::InvalidParameter { name, .. } => ("invalid_parameter", EXIT_VALIDATION, Some(name.clone()), None),
            Error::NonFinite { .. } => ("non_finite", EXIT_VALIDATION, None, None),
            Error::Parse { path, .. } => ("parse", EXIT_VALIDATION, None, Some(path.clone())),
            Error::Io { path, .. } => ("io", EXIT_VALIDATION, None, Some(path.clone())),
            Error::MissingResponse(_) => ("missing_response", EXIT_VALIDATION, Some("data.response".into()), None),
            Error::ConstantColumn(_) => ("constant_column", EXIT_VALIDATION, None, None),
            Error::SplitTooLarge { .. } => ("split_too_large", EXIT_VALIDATION, None, None),
            Error::Infeasible { .. } => ("infeasible", EXIT_VALIDATION, None, None),
            Error::Csv(_) => ("csv", EXIT_VALIDATION, None, None),
            Error::ZeroCovariance => ("zero_covariance", EXIT_RUNTIME, None, None),
            Error::NoSurvivors { .. } => ("no_survivors", EXIT_RUNTIME, None, None),
            Error::NotConverged { .. } => ("not_converged", EXIT_RUNTIME, None, None),
            Error::AllFitsFailed(_) => ("all_fits_failed", EXIT_RUNTIME, None, None),
        };
        CliError(ErrorBody {
            kind: kind.into(),
            code,
            message: e.to_string(),
            field,
            path,
        })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// One invocation: the subcommand, its config file and the command-line overrides.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// `key=value` assignments from `--set`.
    pub sets: Vec<String>,
    /// `key=value` assignments derived from the environment (see [`config::env_overrides`]).
    pub env: Vec<String>,
}

/// Files written by a successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Resolved configuration for `inv`; nothing is computed or written.
pub fn resolve(inv: &Invocation) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = config::load(&inv.config, &inv.env, &inv.sets)?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    if inv.threads.is_some() {
        cfg.threads = inv.threads;
    }
    let out = match (&inv.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_relative() => inv.config.parent().unwrap_or(Path::new(".")).join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => return Err(Error::invalid("out", "no output directory (set `out` or pass --out)").into()),
    };
    cfg.validate(inv.command)?;
    Ok((cfg, out))
}

pub fn run(inv: &Invocation) -> CliResult<Outcome> {
    let (cfg, out) = resolve(inv)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    std::fs::create_dir_all(&out).map_err(|source| CliError::write(Error::Io { path: out.clone(), source }))?;
    let mut files = Vec::new();
    pool.install(|| match inv.command {
        Command::Fit => cmd_fit(&cfg, &out, &mut files),
        Command::GridSearch => cmd_grid_search(&cfg, &out, &mut files),
        Command::Simulate => cmd_simulate(&cfg, &out, &mut files),
        Command::Preprocess => cmd_preprocess(&cfg, &out, &mut files),
        Command::Cluster => cmd_cluster(&cfg, &out, &mut files),
        Command::Stability => cmd_stability(&cfg, &out, &mut files),
    })?;
    Ok(Outcome { out, files })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| CliError::write(Error::Io { path: path.clone(), source }))?;
    files.push(path);
    Ok(())
}

fn write_csv(path: PathBuf, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let err = |e: csv::Error| CliError::write(Error::Csv(format!("{}: {e}", path.display())));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush()
        .map_err(|source| CliError::write(Error::Io { path: path.clone(), source }))?;
    files.push(path);
    Ok(())
}

fn tau(t: f64) -> CliResult<QuantileLevel> {
    Ok(QuantileLevel::new(t)?)
}

fn data_config(cfg: &RunConfig) -> &DataConfig {
    cfg.data.as_ref().expect("validated")
}

fn load_data(dc: &DataConfig) -> CliResult<Dataset> {
    Ok(load_csv(&dc.path, dc.has_header, &dc.response)?)
}

fn groups_for(dc: &DataConfig, d: &Dataset) -> CliResult<GroupStructure> {
    Ok(match &dc.groups {
        GroupsConfig::Rule(GroupRule::Singletons) => GroupStructure::singletons(d.p())?,
        GroupsConfig::Rule(GroupRule::Pca) => pca_cluster(d.x())?,
        GroupsConfig::File { file } => load_groups(file, d)?,
    })
}

fn maybe_standardize(dc: &DataConfig, d: Dataset) -> CliResult<Dataset> {
    if dc.standardize {
        Ok(standardize(&d, ResponseTransform::Keep)?.0)
    } else {
        Ok(d)
    }
}

fn feature_names(d: &Dataset) -> Vec<String> {
    (0..d.p()).map(|j| d.feature_name(j)).collect()
}

/// `feature,group` rows with 1-based groups, readable back as a group file.
fn group_rows(d: &Dataset, groups: &GroupStructure) -> Vec<Vec<String>> {
    groups
        .group_of()
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let feature = match d.feature_names() {
                Some(names) => names[j].clone(),
                None => (j + 1).to_string(),
            };
            vec![feature, (g + 1).to_string()]
        })
        .collect()
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FitReport {
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub weights: Option<WeightScheme>,
    pub features: Vec<String>,
    /// 1-based group of each feature.
    pub groups: Vec<usize>,
    pub beta_hat: Vec<f64>,
    pub intercept: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

fn cmd_fit(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let dc = data_config(cfg);
    let fc = cfg.fit.as_ref().expect("validated");
    let d = maybe_standardize(dc, load_data(dc)?)?;
    let groups = groups_for(dc, &d)?;
    let tau = tau(fc.tau)?;
    let (w, v) = match &fc.weights {
        Some(scheme) => adaptive_weights(&d, tau, &groups, scheme, &cfg.solver)?,
        None => (vec![1.0; groups.p()], vec![1.0; groups.k()]),
    };
    let spec = PenaltySpec::new(fc.lambda, fc.alpha, w.clone(), v.clone(), groups.clone())?;
    let res = fit(&d, tau, &spec, &cfg.solver)?;
    let report = FitReport {
        tau: fc.tau,
        lambda: fc.lambda,
        alpha: fc.alpha,
        weights: fc.weights.clone(),
        features: feature_names(&d),
        groups: groups.group_of().iter().map(|g| g + 1).collect(),
        beta_hat: res.beta_hat.clone(),
        intercept: res.intercept,
        objective: res.objective,
        kkt_residual: res.kkt_residual,
        iterations: res.iterations,
        converged: res.converged,
        w,
        v,
    };
    write_json(out.join("fit.json"), &report, files)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    if cfg.solver.intercept {
        rows.push(vec!["(intercept)".into(), String::new(), res.intercept.to_string()]);
    }
    for (j, b) in res.beta_hat.iter().enumerate() {
        rows.push(vec![d.feature_name(j), (groups.group_of()[j] + 1).to_string(), b.to_string()]);
    }
    write_csv(out.join("coefficients.csv"), &["feature", "group", "coefficient"], rows, files)?;
    if !res.converged {
        return Err(Error::NotConverged {
            what: "fit",
            kkt_residual: res.kkt_residual,
            iterations: res.iterations,
        }
        .into());
    }
    Ok(())
}

/// Contents of `best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BestReport {
    pub tau: f64,
    pub best: Combination,
    pub val_error: f64,
    pub test_error: Option<f64>,
    pub features: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub intercept: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub evaluated: usize,
    pub failed_fits: usize,
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_grid_search(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let dc = data_config(cfg);
    let gc = cfg.grid_search.as_ref().expect("validated");
    let d = load_data(dc)?;
    let (mut train, mut val, mut test) = split(&d, &gc.split.with_seed(cfg.seed))?;
    if dc.standardize {
        let (t, params) = standardize(&train, ResponseTransform::Keep)?;
        val = params.apply(&val)?;
        if test.n() > 0 {
            test = params.apply(&test)?;
        }
        train = t;
    }
    let groups = groups_for(dc, &train)?;
    let tau = tau(gc.tau)?;
    let mut res = grid_search(&train, &val, tau, &groups, &cfg.grid, &cfg.solver)?;
    if test.n() > 0 {
        res.evaluate_test(&test, tau)?;
    }
    let report = BestReport {
        tau: gc.tau,
        best: res.best,
        val_error: res.best_val_error,
        test_error: res.test_error,
        features: feature_names(&train),
        beta_hat: res.best_fit.beta_hat.clone(),
        intercept: res.best_fit.intercept,
        kkt_residual: res.best_fit.kkt_residual,
        iterations: res.best_fit.iterations,
        converged: res.best_fit.converged,
        w: res.best_w.clone(),
        v: res.best_v.clone(),
        evaluated: res.table.len(),
        failed_fits: res.failed_fits(),
    };
    write_json(out.join("best.json"), &report, files)?;
    let rows = res.table.iter().map(|e| {
        let c = &e.combination;
        vec![
            c.model.to_string(),
            c.lambda.to_string(),
            c.alpha.to_string(),
            c.gamma1.to_string(),
            c.gamma2.to_string(),
            opt_num(e.val_error),
            e.converged.to_string(),
            e.kkt_residual.to_string(),
            e.iterations.to_string(),
            e.support_size.to_string(),
            e.error.clone().unwrap_or_default(),
        ]
    });
    write_csv(
        out.join("table.csv"),
        &["model", "lambda", "alpha", "gamma1", "gamma2", "val_error", "converged", "kkt_residual", "iterations", "support_size", "error"],
        rows,
        files,
    )
}

fn cmd_simulate(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let sc = cfg.simulate.as_ref().expect("validated");
    let scenario = cfg.scenario()?;
    let opts = ExperimentOptions {
        grid: cfg.grid.clone(),
        solver: cfg.solver.clone(),
        zero_tol: sc.zero_tol,
        tau: tau(sc.tau)?,
    };
    let report = run_experiment(&scenario, &sc.models, sc.repetitions, cfg.seed, &opts)?;
    write_report_csv(&report, out).map_err(CliError::write)?;
    files.push(out.join("repetitions.csv"));
    files.push(out.join("summary.csv"));
    if !report.failures.is_empty() {
        files.push(out.join("failures.csv"));
    }
    write_json(out.join("report.json"), &report, files)?;
    if sc.plots {
        let series: Vec<(String, Vec<f64>)> = sc
            .models
            .iter()
            .map(|m| {
                let label = m.label();
                let et = report.rows.iter().filter(|r| r.model == label).map(|r| r.metrics.et).collect();
                (label, et)
            })
            .collect();
        let svg = box_plot_svg(&format!("{}: test error", scenario.name), "E_t", &series);
        let path = out.join("et_boxplot.svg");
        std::fs::write(&path, svg).map_err(|source| CliError::write(Error::Io { path: path.clone(), source }))?;
        files.push(path);
    }
    Ok(())
}

/// Contents of `filter_trace.json`: survivors of each filter stage (0-based column indices
/// of the input covariates) and their names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PreprocessReport {
    pub input_variables: usize,
    pub trace: FilterTrace,
    pub kept: Vec<String>,
}

fn cmd_preprocess(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let dc = data_config(cfg);
    let spec = cfg.preprocess_spec();
    let d = load_data(dc)?;
    let trace = filter_variables(&d, &spec)?;
    let (pre, kept) = preprocess(&d, &spec)?;
    let names: Vec<String> = kept.iter().map(|&j| d.feature_name(j)).collect();

    let path = out.join("preprocessed.csv");
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("y");
    let rows = (0..pre.n()).map(|i| {
        let mut r: Vec<String> = (0..pre.p()).map(|j| pre.x()[(i, j)].to_string()).collect();
        r.push(pre.y()[i].to_string());
        r
    });
    write_csv(path, &header, rows, files)?;
    let rows = kept.iter().zip(&names).map(|(j, n)| vec![(j + 1).to_string(), n.clone()]);
    write_csv(out.join("kept.csv"), &["column", "feature"], rows, files)?;
    let report = PreprocessReport {
        input_variables: d.p(),
        trace,
        kept: names,
    };
    write_json(out.join("filter_trace.json"), &report, files)
}

fn cmd_cluster(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let dc = data_config(cfg);
    let mut d = load_data(dc)?;
    if cfg.cluster.clone().unwrap_or_default().standardize {
        d = standardize(&d, ResponseTransform::Keep)?.0;
    }
    let groups = pca_cluster(d.x())?;
    write_csv(out.join("groups.csv"), &["feature", "group"], group_rows(&d, &groups), files)
}

fn cmd_stability(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let dc = data_config(cfg);
    let sc = cfg.stability.as_ref().expect("validated");
    let d = maybe_standardize(dc, load_data(dc)?)?;
    let groups = groups_for(dc, &d)?;
    let taus = sc.taus.iter().map(|&t| tau(t)).collect::<CliResult<Vec<_>>>()?;
    let opts = StabilityOptions {
        grid: cfg.grid.clone(),
        solver: cfg.solver.clone(),
        zero_tol: sc.zero_tol,
        threshold: sc.threshold,
    };
    let report: StabilityReport =
        stability_analysis(&d, &groups, &taus, &sc.models, sc.repetitions, sc.split.with_seed(cfg.seed), cfg.seed, &opts)?;
    write_stability_csv(&report, out).map_err(CliError::write)?;
    files.push(out.join("probabilities.csv"));
    files.push(out.join("threshold_counts.csv"));
    write_json(out.join("stability.json"), &report, files)
}

/// Names accepted by [`schema`].
pub const SCHEMAS: [&str; 7] = ["config", "fit", "best", "report", "filter_trace", "stability", "error"];

/// JSON Schema of the config file or of an emitted JSON artifact.
pub fn schema(name: &str) -> Option<serde_json::Value> {
    let s = match name {
        "config" => schemars::schema_for!(RunConfig),
        "fit" => schemars::schema_for!(FitReport),
        "best" => schemars::schema_for!(BestReport),
        "report" => schemars::schema_for!(ExperimentReport),
        "filter_trace" => schemars::schema_for!(PreprocessReport),
        "stability" => schemars::schema_for!(StabilityReport),
        "error" => schemars::schema_for!(ErrorReport),
        _ => return None,
    };
    Some(s.to_value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::from(Error::invalid("fit.alpha", "bad")).code(), EXIT_VALIDATION);
        assert_eq!(CliError::from(Error::AllFitsFailed("x".into())).code(), EXIT_RUNTIME);
        let e = CliError::from(Error::Io {
            path: "a.csv".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["path"], "a.csv");
        assert_eq!(v["error"]["code"], 2);
    }

    #[test]
    fn every_schema_is_available() {
        for name in SCHEMAS {
            assert!(schema(name).is_some(), "{name}");
        }
        assert!(schema("nope").is_none());
    }
}
