//! Datasets, group structures, standardization and train/validation/test splits.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates `x` (n × p) and response `y` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::with_names(x, y, None)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("n", "dataset must have at least one row"));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("p", "dataset must have at least one covariate"));
        }
        if x.nrows() != y.len() {
            return Err(Error::dims("response length", x.nrows(), y.len()));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(Error::dims("feature names", x.ncols(), names.len()));
            }
        }
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        what: "covariates",
                        row: i,
                        column: j,
                    });
                }
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "response",
                row: i,
                column: 0,
            });
        }
        Ok(Self {
            x,
            y,
            feature_names,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Name of covariate `j`, falling back to `x{j+1}`.
    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let x = self.x.select_columns(cols.iter());
        let feature_names = self
            .feature_names
            .as_ref()
            .map(|names| cols.iter().map(|&j| names[j].clone()).collect());
        Dataset {
            x,
            y: self.y.clone(),
            feature_names,
        }
    }
}

/// Partition of the `p` covariates into `K` groups.
///
/// Groups need not be contiguous; `group_of[j]` (zero-based) is authoritative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct GroupStructure {
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Builds a structure from zero-based group indices; every index in `0..K` must be used.
    pub fn new(group_of: Vec<usize>) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::invalid("groups", "at least one variable is required"));
        }
        let k = group_of.iter().copied().max().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); k];
        for (j, &g) in group_of.iter().enumerate() {
            members[g].push(j);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::invalid(
                "groups",
                format!("group {} has no variables", empty + 1),
            ));
        }
        Ok(Self { group_of, members })
    }

    /// `k` consecutive groups of `size` variables each.
    pub fn contiguous(k: usize, size: usize) -> Result<Self> {
        if k == 0 || size == 0 {
            return Err(Error::invalid("groups", "group count and size must be positive"));
        }
        Self::new((0..k * size).map(|j| j / size).collect())
    }

    /// One group per variable.
    pub fn singletons(p: usize) -> Result<Self> {
        Self::new((0..p).collect())
    }

    pub fn p(&self) -> usize {
        self.group_of.len()
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn members(&self, l: usize) -> &[usize] {
        &self.members[l]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.members.iter().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

/// Row indices of a seeded three-way split.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    if spec.n_train == 0 {
        return Err(Error::invalid("n_train", "must be at least 1"));
    }
    if spec.total() > n {
        return Err(Error::SplitTooLarge {
            requested: spec.total(),
            available: n,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    perm.shuffle(&mut rng);
    let train = perm[..spec.n_train].to_vec();
    let val = perm[spec.n_train..spec.n_train + spec.n_val].to_vec();
    let test = perm[spec.n_train + spec.n_val..spec.total()].to_vec();
    Ok([train, val, test])
}

/// Row-disjoint train / validation / test subsets.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, val, test] = split_indices(d.n(), spec)?;
    Ok((d.select_rows(&train), d.select_rows(&val), d.select_rows(&test)))
}

/// How the response is transformed by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ResponseTransform {
    #[default]
    Keep,
    Center,
    Standardize,
}

/// Column means and scales estimated on one dataset, reusable on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl Standardization {
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.p() != self.x_mean.len() {
            return Err(Error::dims("standardization columns", self.x_mean.len(), d.p()));
        }
        let mut x = d.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let (m, s) = (self.x_mean[j], self.x_scale[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        let y = d.y.map(|v| (v - self.y_mean) / self.y_scale);
        Dataset::with_names(x, y, d.feature_names.clone())
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

/// Centers each covariate and scales it to unit sample standard deviation (denominator n − 1).
pub fn standardize(d: &Dataset, response: ResponseTransform) -> Result<(Dataset, Standardization)> {
    let n = d.n();
    if n < 2 {
        return Err(Error::invalid("n", "standardization needs at least two rows"));
    }
    let mut x_mean = Vec::with_capacity(d.p());
    let mut x_scale = Vec::with_capacity(d.p());
    for (j, col) in d.x.column_iter().enumerate() {
        let (m, s) = mean_sd(col.iter().copied(), n);
        let max_abs = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if s <= 1e-13 * max_abs || s == 0.0 {
            return Err(Error::ConstantColumn(d.feature_name(j)));
        }
        x_mean.push(m);
        x_scale.push(s);
    }
    let (ym, ys) = mean_sd(d.y.iter().copied(), n);
    let (y_mean, y_scale) = match response {
        ResponseTransform::Keep => (0.0, 1.0),
        ResponseTransform::Center => (ym, 1.0),
        ResponseTransform::Standardize => {
            if ys == 0.0 {
                return Err(Error::ConstantColumn("response".into()));
            }
            (ym, ys)
        }
    };
    let params = Standardization {
        x_mean,
        x_scale,
        y_mean,
        y_scale,
    };
    Ok((params.apply(d)?, params))
}

/// Which CSV column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum ResponseColumn {
    Index(usize),
    Name(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))
}

/// Reads a comma-separated numeric table. Row and column numbers in errors are 1-based
/// positions in the file.
pub fn load_csv(path: &Path, has_header: bool, response: &ResponseColumn) -> Result<Dataset> {
    let rows = csv_rows(path)?;
    let (header, body) = match (has_header, rows.split_first()) {
        (true, Some((h, rest))) => (Some(h.iter().map(str::to_string).collect::<Vec<_>>()), rest),
        (true, None) => (None, &rows[..]),
        (false, _) => (None, &rows[..]),
    };
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| body.first().map(|r| r.len()))
        .ok_or_else(|| Error::invalid("csv", format!("{} has no data rows", path.display())))?;
    let resp = match response {
        ResponseColumn::Index(i) if *i < width => *i,
        ResponseColumn::Index(i) => return Err(Error::MissingResponse(i.to_string())),
        ResponseColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::MissingResponse(name.clone()))?,
    };
    if width < 2 {
        return Err(Error::invalid(
            "p",
            "the file has no covariate columns besides the response",
        ));
    }
    if body.is_empty() {
        return Err(Error::invalid("csv", format!("{} has no data rows", path.display())));
    }
    let first_line = usize::from(has_header) + 1;
    let n = body.len();
    let p = width - 1;
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: first_line + i,
                column: rec.len().min(width) + 1,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut jx = 0;
        for (c, cell) in rec.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: first_line + i,
                column: c + 1,
                reason: format!("cannot parse `{cell}` as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: first_line + i,
                    column: c + 1,
                    reason: format!("non-finite value `{cell}`"),
                });
            }
            if c == resp {
                y[i] = value;
            } else {
                x[(i, jx)] = value;
                jx += 1;
            }
        }
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(c, _)| *c != resp)
            .map(|(_, name)| name)
            .collect()
    });
    Dataset::with_names(x, y, names)
}

/// Reads a two-column `(feature, group)` CSV. Features are matched by name when the dataset
/// carries names, otherwise by 1-based covariate position; groups are 1-based indices.
pub fn load_groups(path: &Path, d: &Dataset) -> Result<GroupStructure> {
    let rows = csv_rows(path)?;
    let mut group_of: Vec<Option<usize>> = vec![None; d.p()];
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 1;
        let parse_err = |column: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            column,
            reason,
        };
        if rec.len() != 2 {
            return Err(parse_err(1, format!("expected 2 fields, found {}", rec.len())));
        }
        let group: usize = match rec[1].parse() {
            Ok(g) => g,
            Err(_) if i == 0 => continue, // header row
            Err(_) => return Err(parse_err(2, format!("bad group index `{}`", &rec[1]))),
        };
        if group == 0 {
            return Err(parse_err(2, "group indices start at 1".into()));
        }
        let feature = &rec[0];
        let j = d
            .feature_names()
            .and_then(|names| names.iter().position(|n| n == feature))
            .or_else(|| {
                feature
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1 && k <= d.p())
                    .map(|k| k - 1)
            })
            .ok_or_else(|| parse_err(1, format!("unknown feature `{feature}`")))?;
        if group_of[j].replace(group - 1).is_some() {
            return Err(parse_err(1, format!("feature `{feature}` assigned twice")));
        }
    }
    let group_of = group_of
        .into_iter()
        .enumerate()
        .map(|(j, g)| {
            g.ok_or_else(|| {
                Error::invalid("groups", format!("feature `{}` has no group", d.feature_name(j)))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GroupStructure::new(group_of)
}
