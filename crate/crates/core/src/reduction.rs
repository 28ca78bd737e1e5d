//! PCA and PLS1 decompositions of a covariate matrix.
//!
//! Both center internally and resolve sign indeterminacy by making the largest-magnitude
//! entry of every loading (PCA) or weight (PLS) vector positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gram eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PcaModel {
    loadings: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    mean: DVector<f64>,
}

impl PcaModel {
    /// `p x r` matrix of orthonormal loading columns.
    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Component variances, nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of components with nonzero variance.
    pub fn effective_rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&e| e > 0.0).count()
    }

    /// Fraction of total variance per component (all zero for a constant matrix).
    pub fn explained_variance(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|e| e / total).collect()
    }

    /// Scores `Z = (X - mean) Q` of new rows.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::dims("columns", self.mean.len(), x.ncols()));
        }
        Ok(center_with(x, &self.mean) * &self.loadings)
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |j, _| x.column(j).mean())
}

fn center_with(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(mut v: nalgebra::DVectorViewMut<f64>) {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j].abs() > v[best].abs() {
            best = j;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Principal components of the column-centered `x`.
pub fn pca(x: &DMatrix<f64>) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::invalid("X", format!("PCA needs at least 2 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::invalid("X", "PCA needs at least one column"));
    }
    let mean = column_means(x);
    let centered = center_with(x, &mean);
    let r = n.min(p);
    // eigendecomposition of the smaller Gram matrix; nalgebra's SVD is not reliably
    // accurate on some small wide inputs
    let wide = p > n;
    let gram = if wide { &centered * centered.transpose() } else { centered.tr_mul(&centered) };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut loadings = DMatrix::zeros(p, r);
    let mut eigenvalues = Vec::with_capacity(r);
    let mut filled = 0;
    for &k in order.iter().take(r) {
        let ev = eig.eigenvalues[k];
        if ev <= RANK_TOL * top || ev <= 0.0 {
            break;
        }
        let v = if wide {
            let v = centered.tr_mul(&eig.eigenvectors.column(k));
            &v / v.norm()
        } else {
            eig.eigenvectors.column(k).clone_owned()
        };
        loadings.set_column(filled, &v);
        fix_sign(loadings.column_mut(filled));
        eigenvalues.push(ev / (n as f64 - 1.0));
        filled += 1;
    }
    // zero-variance directions: any orthonormal completion
    for axis in 0..p {
        if filled == r {
            break;
        }
        let mut v = DVector::zeros(p);
        v[axis] = 1.0;
        for _ in 0..2 {
            for c in 0..filled {
                let proj = loadings.column(c).dot(&v);
                v.axpy(-proj, &loadings.column(c), 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            loadings.set_column(filled, &(v / norm));
            fix_sign(loadings.column_mut(filled));
            eigenvalues.push(0.0);
            filled += 1;
        }
    }
    Ok(PcaModel {
        loadings,
        eigenvalues,
        mean,
    })
}

#[derive(Debug, Clone)]
pub struct PlsModel {
    rotations: DMatrix<f64>,
    weights: DMatrix<f64>,
    explained_x_variance: Vec<f64>,
}

impl PlsModel {
    /// `p x s` matrix `T` whose columns give uncorrelated scores `U = X_c T`.
    pub fn rotations(&self) -> &DMatrix<f64> {
        &self.rotations
    }

    /// Unit NIPALS weight vectors (the first is proportional to `X_c' y_c`).
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Fraction of `||X_c||_F^2` removed by each component's deflation.
    pub fn explained_x_variance(&self) -> &[f64] {
        &self.explained_x_variance
    }

    pub fn n_components(&self) -> usize {
        self.explained_x_variance.len()
    }
}

/// Univariate PLS by NIPALS with deflation of `X`.
///
/// Extraction stops after `max_components`, at `min(n, p)`, or once the residual
/// covariance `||E' f||` falls below `1e-10 ||X_c||_F ||y_c||`.
pub fn pls1(x: &DMatrix<f64>, y: &DVector<f64>, max_components: usize) -> Result<PlsModel> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::dims("response length", n, y.len()));
    }
    if max_components == 0 {
        return Err(Error::invalid("max_components", "must be at least 1"));
    }
    if n < 2 || p == 0 {
        return Err(Error::invalid("X", "PLS needs at least 2 rows and one column"));
    }
    let mut e = center_with(x, &column_means(x));
    let mut f = y.add_scalar(-y.mean());
    let total = e.norm_squared();
    let scale = total.sqrt() * f.norm();
    if scale == 0.0 {
        return Err(Error::ZeroCovariance);
    }

    let cap = max_components.min(n).min(p);
    let mut ws: Vec<DVector<f64>> = Vec::new();
    let mut ps: Vec<DVector<f64>> = Vec::new();
    let mut explained = Vec::new();
    for i in 0..cap {
        let mut w = e.tr_mul(&f);
        let norm = w.norm();
        if norm <= 1e-10 * scale {
            if i == 0 {
                return Err(Error::ZeroCovariance);
            }
            break;
        }
        w /= norm;
        fix_sign(w.column_mut(0));
        let t = &e * &w;
        let tt = t.norm_squared();
        if tt <= f64::EPSILON * total {
            break;
        }
        let load = e.tr_mul(&t) / tt;
        let q = f.dot(&t) / tt;
        e -= &t * load.transpose();
        f.axpy(-q, &t, 1.0);
        explained.push(tt * load.norm_squared() / total);
        ws.push(w);
        ps.push(load);
    }

    let s = ws.len();
    let w_mat = DMatrix::from_columns(&ws);
    let p_mat = DMatrix::from_columns(&ps);
    // R = W (P'W)^{-1}; P'W is upper triangular with unit diagonal
    let ptw = p_mat.tr_mul(&w_mat);
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| Error::invalid("X", "PLS loadings are degenerate"))?;
    let rotations = &w_mat * inv;
    debug_assert_eq!(rotations.ncols(), s);
    Ok(PlsModel {
        rotations,
        weights: w_mat,
        explained_x_variance: explained,
    })
}

/// Smallest `d` whose cumulative explained percentage reaches `threshold_pct`; all
/// components when the total falls short.
pub fn choose_components(explained: &[f64], threshold_pct: f64) -> Result<usize> {
    if explained.is_empty() {
        return Err(Error::invalid("explained", "no components"));
    }
    if !(threshold_pct > 0.0 && threshold_pct <= 100.0) {
        return Err(Error::invalid("variance_threshold_pct", format!("must lie in (0, 100], got {threshold_pct}")));
    }
    if let Some(bad) = explained.iter().find(|f| !(**f >= 0.0)) {
        return Err(Error::invalid("explained", format!("fractions must be >= 0, got {bad}")));
    }
    let mut cumulative = 0.0;
    for (i, f) in explained.iter().enumerate() {
        cumulative += f;
        // round-off guard so that 100% is reachable
        if 100.0 * cumulative >= threshold_pct - 1e-9 {
            return Ok(i + 1);
        }
    }
    Ok(explained.len())
}
