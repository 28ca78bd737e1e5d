//! Expression-data workflow: probe filtering, PCA variable clustering and selection
//! stability over repeated splits and quantile levels.

use std::path::Path;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{split, standardize, Dataset, GroupStructure, ResponseTransform, SplitSpec};
use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::reduction::pca;
use crate::select::{grid_search, Grid, DEFAULT_ZERO_TOL};
use crate::simulation::{MeanSd, ModelConfig};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSpec {
    /// A variable is expressed when its maximum exceeds this percentile of all values.
    pub expression_percentile: f64,
    pub fold_variation_min: f64,
    /// Values are logarithms in `log_base`: the fold rule becomes `max - min >= log(fold)`.
    /// Otherwise `max / min >= fold` on positive values.
    pub log_scale: bool,
    pub log_base: f64,
    pub abs_correlation_min: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            expression_percentile: 25.0,
            fold_variation_min: 2.0,
            log_scale: true,
            log_base: 2.0,
            abs_correlation_min: 0.5,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.expression_percentile > 0.0 && self.expression_percentile < 100.0) {
            return Err(Error::invalid("expression_percentile", "must lie in (0, 100)"));
        }
        if !(self.fold_variation_min >= 1.0 && self.fold_variation_min.is_finite()) {
            return Err(Error::invalid("fold_variation_min", "must be >= 1"));
        }
        if self.log_scale && !(self.log_base > 1.0 && self.log_base.is_finite()) {
            return Err(Error::invalid("log_base", "must be > 1"));
        }
        if !(0.0..1.0).contains(&self.abs_correlation_min) {
            return Err(Error::invalid("abs_correlation_min", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Pearson correlation; 0 when either side is constant.
pub fn correlation(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = a.clone().count() as f64;
    let ma = a.clone().sum::<f64>() / n;
    let mb = b.clone().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Indices of the covariates passing each filter in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FilterTrace {
    pub expressed: Vec<usize>,
    pub variable: Vec<usize>,
    pub correlated: Vec<usize>,
}

/// Expressed -> variable -> correlated with the response, in that order.
pub fn filter_variables(d: &Dataset, spec: &PreprocessSpec) -> Result<FilterTrace> {
    spec.validate()?;
    let x = d.x();
    let cutoff = percentile(x.as_slice(), spec.expression_percentile);
    let expressed: Vec<usize> = (0..d.p())
        .filter(|&j| x.column(j).max() > cutoff)
        .collect();
    if expressed.is_empty() {
        return Err(Error::NoSurvivors { stage: "expression" });
    }

    let mut variable = Vec::new();
    for &j in &expressed {
        let col = x.column(j);
        let (lo, hi) = (col.min(), col.max());
        let keep = if spec.log_scale {
            hi - lo >= spec.fold_variation_min.log(spec.log_base)
        } else {
            if lo <= 0.0 {
                return Err(Error::invalid(
                    "fold_variation_min",
                    format!("ratio rule needs positive values; `{}` has {lo}", d.feature_name(j)),
                ));
            }
            hi / lo >= spec.fold_variation_min
        };
        // constant columns never count as variable, even at fold 1
        if keep && hi > lo {
            variable.push(j);
        }
    }
    if variable.is_empty() {
        return Err(Error::NoSurvivors { stage: "variation" });
    }

    let y = d.y();
    let correlated: Vec<usize> = variable
        .iter()
        .copied()
        .filter(|&j| correlation(x.column(j).iter().copied(), y.iter().copied()).abs() > spec.abs_correlation_min)
        .collect();
    if correlated.is_empty() {
        return Err(Error::NoSurvivors { stage: "correlation" });
    }
    Ok(FilterTrace {
        expressed,
        variable,
        correlated,
    })
}

/// Filters, then standardizes covariates and response. Returns the survivors' indices.
pub fn preprocess(d: &Dataset, spec: &PreprocessSpec) -> Result<(Dataset, Vec<usize>)> {
    let trace = filter_variables(d, spec)?;
    let kept = trace.correlated;
    let (std, _) = standardize(&d.select_columns(&kept), ResponseTransform::Standardize)?;
    Ok((std, kept))
}

/// Assigns each variable to the principal component (with nonzero variance) where its
/// loading is largest in magnitude; unused components are dropped.
pub fn pca_cluster(x: &nalgebra::DMatrix<f64>) -> Result<GroupStructure> {
    let m = pca(x)?;
    let q = m.loadings();
    // constant data has no informative component; fall back to the first
    let usable = m.effective_rank().max(1);
    let raw: Vec<usize> = (0..x.ncols())
        .map(|j| {
            let mut best = 0;
            for i in 1..usable {
                if q[(j, i)].abs() > q[(j, best)].abs() {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let compact = raw
        .iter()
        .map(|c| used.binary_search(c).expect("present"))
        .collect();
    GroupStructure::new(compact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StabilityEntry {
    pub model: String,
    pub tau: f64,
    pub completed: usize,
    pub failed: usize,
    pub counts: Vec<usize>,
    /// `counts / completed`.
    pub probability: Vec<f64>,
    /// Variables with probability strictly above the threshold.
    pub above_threshold: Vec<usize>,
    pub test_error: MeanSd,
    pub selected: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Intersection {
    pub model: String,
    pub variables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StabilityReport {
    pub variables: Vec<String>,
    pub taus: Vec<f64>,
    pub repetitions: usize,
    pub threshold: f64,
    pub entries: Vec<StabilityEntry>,
    /// Per model, the variables above the threshold at every quantile level.
    pub intersections: Vec<Intersection>,
    pub failures: Vec<String>,
}

impl StabilityReport {
    pub fn entry(&self, model: &str, tau: f64) -> Option<&StabilityEntry> {
        self.entries.iter().find(|e| e.model == model && e.tau == tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    pub grid: Grid,
    pub solver: SolverOptions,
    pub zero_tol: f64,
    pub threshold: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            solver: SolverOptions::default(),
            zero_tol: DEFAULT_ZERO_TOL,
            threshold: 0.5,
        }
    }
}

struct Trial {
    support: Vec<usize>,
    test_error: Option<f64>,
}

/// Repetition `r` splits with seed `base_seed + r` and reruns the full grid search for every
/// model and quantile level.
#[allow(clippy::too_many_arguments)]
pub fn stability_analysis(
    d: &Dataset,
    groups: &GroupStructure,
    taus: &[QuantileLevel],
    models: &[ModelConfig],
    repetitions: usize,
    split_spec: SplitSpec,
    base_seed: u64,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions", "must be at least 1"));
    }
    if taus.is_empty() {
        return Err(Error::invalid("taus", "must not be empty"));
    }
    if models.is_empty() {
        return Err(Error::invalid("models", "must not be empty"));
    }
    if groups.p() != d.p() {
        return Err(Error::dims("groups", d.p(), groups.p()));
    }
    if split_spec.total() > d.n() {
        return Err(Error::SplitTooLarge {
            requested: split_spec.total(),
            available: d.n(),
        });
    }
    for m in models {
        m.grid(&opts.grid).validate()?;
    }

    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..taus.len()).map(move |t| (m, t)))
        .collect();
    // trials[r][cell]
    let trials: Vec<Vec<std::result::Result<Trial, String>>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let spec = SplitSpec {
                seed: base_seed.wrapping_add(r as u64),
                ..split_spec
            };
            let parts = split(d, &spec);
            cells
                .iter()
                .map(|&(m, t)| {
                    let (train, val, test) = parts.as_ref().map_err(|e| e.to_string())?;
                    let model = &models[m];
                    let res = grid_search(train, val, taus[t], groups, &model.grid(&opts.grid), &opts.solver)
                        .map_err(|e| format!("repetition {r}, {}, tau {}: {e}", model.label(), taus[t].value()))?;
                    let test_error = if test.n() > 0 {
                        Some(res.best_fit.quantile_error(test, taus[t]).map_err(|e| e.to_string())?)
                    } else {
                        None
                    };
                    Ok(Trial {
                        support: res.best_fit.support(opts.zero_tol),
                        test_error,
                    })
                })
                .collect()
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (c, &(m, t)) in cells.iter().enumerate() {
        let mut counts = vec![0usize; d.p()];
        let (mut completed, mut failed) = (0, 0);
        let mut errors = Vec::new();
        let mut sizes = Vec::new();
        for rep in &trials {
            match &rep[c] {
                Ok(trial) => {
                    completed += 1;
                    for &j in &trial.support {
                        counts[j] += 1;
                    }
                    errors.extend(trial.test_error);
                    sizes.push(trial.support.len() as f64);
                }
                Err(msg) => {
                    failed += 1;
                    failures.push(msg.clone());
                }
            }
        }
        let probability: Vec<f64> = counts
            .iter()
            .map(|&k| if completed == 0 { 0.0 } else { k as f64 / completed as f64 })
            .collect();
        let above_threshold = (0..d.p()).filter(|&j| probability[j] > opts.threshold).collect();
        entries.push(StabilityEntry {
            model: models[m].label(),
            tau: taus[t].value(),
            completed,
            failed,
            counts,
            probability,
            above_threshold,
            test_error: MeanSd::of(&errors),
            selected: MeanSd::of(&sizes),
        });
    }
    let intersections = models
        .iter()
        .map(|m| {
            let label = m.label();
            let mine: Vec<&StabilityEntry> = entries.iter().filter(|e| e.model == label).collect();
            let variables = mine[0]
                .above_threshold
                .iter()
                .copied()
                .filter(|j| mine.iter().all(|e| e.above_threshold.contains(j)))
                .collect();
            Intersection { model: label, variables }
        })
        .collect();
    Ok(StabilityReport {
        variables: (0..d.p()).map(|j| d.feature_name(j)).collect(),
        taus: taus.iter().map(|t| t.value()).collect(),
        repetitions,
        threshold: opts.threshold,
        entries,
        intersections,
        failures,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv(format!("{}: {e}", path.display()))
}

/// `probabilities.csv` (one row per model and tau, one column per variable) and
/// `threshold_counts.csv` (variables above the threshold per tau, plus the intersection).
pub fn write_stability_csv(report: &StabilityReport, dir: &Path) -> Result<()> {
    let path = dir.join("probabilities.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut header = vec!["model".to_string(), "tau".to_string()];
    header.extend(report.variables.iter().cloned());
    w.write_record(&header).map_err(csv_err(&path))?;
    for e in &report.entries {
        let mut rec = vec![e.model.clone(), e.tau.to_string()];
        rec.extend(e.probability.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;

    let path = dir.join("threshold_counts.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut header = vec!["model".to_string()];
    header.extend(report.taus.iter().map(|t| format!("tau={t}")));
    header.push("all_taus".into());
    w.write_record(&header).map_err(csv_err(&path))?;
    for inter in &report.intersections {
        let mut rec = vec![inter.model.clone()];
        for &t in &report.taus {
            let n = report.entry(&inter.model, t).map_or(0, |e| e.above_threshold.len());
            rec.push(n.to_string());
        }
        rec.push(inter.variables.len().to_string());
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(())
}
