//! Penalized quantile regression solver.
//!
//! Minimizes `R(beta) + P(beta)` with ADMM on the splitting `X beta + r = y`, `beta = z`:
//!
//! * `beta` update: a ridge-type solve with the fixed matrix `I + X'X`, factored once;
//! * `r` update: elementwise [`prox_check`] with `sigma = 1 / (n rho)`;
//! * `z` update: [`prox_asgl`](crate::penalty::prox_asgl) with step `1 / rho`;
//! * scaled dual updates, with residual balancing of `rho`.
//!
//! Every `check_every` iterations the iterate is certified with [`kkt_residual`]. Because
//! quantile regression optima interpolate some observations exactly, ADMM iterates alone
//! rarely land on a tie to within round-off; at each check the solver therefore also tries
//! an active-set Newton polish (support and zero-residual set read off the ADMM iterate)
//! and accepts it when the polished point certifies.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupStructure};
use crate::error::{Error, Result};
use crate::loss::{check_loss, prox_check, QuantileLevel};
use crate::penalty::{penalty_unchecked, prox_asgl_into, PenaltySpec};

/// Over-relaxation factor of the ADMM iteration.
const RELAX: f64 = 1.6;

/// Residuals with `|r_i| <= TIE_TOL * max(1, max|y|)` are treated as exact ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol_kkt: f64,
    /// Initial ADMM penalty parameter, relative to the loss scale (the coupling term is
    /// weighted by `rho / n`).
    pub rho: f64,
    /// Residual balancing of `rho` at every check.
    pub adaptive_rho: bool,
    pub check_every: usize,
    /// Fit an unpenalized intercept.
    pub intercept: bool,
    /// Warm start (`p` coefficients, intercept excluded).
    #[serde(skip)]
    pub beta0: Option<Vec<f64>>,
    #[serde(skip)]
    pub intercept0: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol_kkt: 1e-5,
            rho: 1.0,
            adaptive_rho: true,
            check_every: 50,
            intercept: false,
            beta0: None,
            intercept0: 0.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        if !(self.tol_kkt > 0.0) {
            return Err(Error::invalid("tol_kkt", "must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho", "must be positive"));
        }
        if self.check_every == 0 {
            return Err(Error::invalid("check_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Copy of these options warm-started from a previous fit.
    pub fn warm_from(&self, previous: &FitResult) -> Self {
        Self {
            beta0: Some(previous.beta_hat.clone()),
            intercept0: previous.intercept,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Zero unless the fit used an intercept.
    pub intercept: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn residuals(&self, d: &Dataset) -> Result<DVector<f64>> {
        crate::loss::residuals(&self.beta_hat, self.intercept, d)
    }

    /// Mean check loss of this fit on `d`.
    pub fn quantile_error(&self, d: &Dataset, tau: QuantileLevel) -> Result<f64> {
        if d.n() == 0 {
            return Err(Error::invalid("dataset", "empty evaluation set"));
        }
        Ok(crate::loss::mean_check_loss(&self.residuals(d)?, tau))
    }

    /// Indices with `|beta_j| > zero_tol`.
    pub fn support(&self, zero_tol: f64) -> Vec<usize> {
        self.beta_hat
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > zero_tol)
            .map(|(j, _)| j)
            .collect()
    }
}

/// The design `A = [X | 1]` (the column of ones only with an intercept).
struct Design<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    intercept: bool,
}

impl<'a> Design<'a> {
    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn dim(&self) -> usize {
        self.p() + usize::from(self.intercept)
    }

    /// out = A theta
    fn apply(&self, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let p = self.p();
        out.gemv(1.0, self.x, &theta.rows(0, p), 0.0);
        if self.intercept {
            out.add_scalar_mut(theta[p]);
        }
    }

    /// out = A' v
    fn apply_t(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let p = self.p();
        out.rows_mut(0, p).gemv_tr(1.0, self.x, v, 0.0);
        if self.intercept {
            out[p] = v.sum();
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if j < self.p() {
            self.x[(i, j)]
        } else {
            1.0
        }
    }

    fn tie_tol(&self) -> f64 {
        TIE_TOL * self.y.amax().max(1.0)
    }
}

fn validate_inputs(d: &Dataset, spec: &PenaltySpec) -> Result<()> {
    if spec.p() != d.p() {
        return Err(Error::dims("penalty dimension", d.p(), spec.p()));
    }
    Ok(())
}

/// Per-coordinate interval of risk subgradients, given residuals `r`.
fn risk_subgradient_bounds(
    design: &Design,
    r: &DVector<f64>,
    tau: QuantileLevel,
) -> (DVector<f64>, DVector<f64>) {
    let n = design.n() as f64;
    let t = tau.value();
    let tol = design.tie_tol();
    let mut g = DVector::zeros(design.n());
    let mut ties = Vec::new();
    for (i, &ri) in r.iter().enumerate() {
        if ri.abs() <= tol {
            ties.push(i);
        } else {
            g[i] = if ri < 0.0 { t - 1.0 } else { t };
        }
    }
    let mut center = DVector::zeros(design.dim());
    design.apply_t(&g, &mut center);
    center /= -n;
    let mut lo = center.clone();
    let mut hi = center;
    for &i in &ties {
        for j in 0..design.dim() {
            let x = design.entry(i, j);
            let (a, b) = (-x * (t - 1.0) / n, -x * t / n);
            lo[j] += a.min(b);
            hi[j] += a.max(b);
        }
    }
    (lo, hi)
}

#[inline]
fn dist_to_interval(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        -hi
    } else {
        0.0
    }
}

/// Distance from zero to the subdifferential of the objective, coordinate-wise for the
/// loss and l1 parts, blockwise for zero groups.
fn kkt_from_residuals(
    design: &Design,
    theta: &DVector<f64>,
    r: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
) -> f64 {
    let (lo, hi) = risk_subgradient_bounds(design, r, tau);
    kkt_from_bounds(design, theta, &lo, &hi, spec)
}

/// As [`kkt_from_residuals`] but with one multiplier per tied residual shared by all
/// coordinates: `g_i` is the loss derivative sign for residuals beyond `tol` and
/// `candidate_i` clipped to `[tau - 1, tau]` for ties. With `tol` the tie tolerance this is
/// never smaller than the relaxed residual.
fn kkt_with_multipliers(
    design: &Design,
    theta: &DVector<f64>,
    r: &DVector<f64>,
    candidate: &DVector<f64>,
    tol: f64,
    tau: QuantileLevel,
    spec: &PenaltySpec,
) -> f64 {
    let t = tau.value();
    let g = DVector::from_fn(design.n(), |i, _| {
        if r[i] > tol {
            t
        } else if r[i] < -tol {
            t - 1.0
        } else {
            candidate[i].clamp(t - 1.0, t)
        }
    });
    let mut c = DVector::zeros(design.dim());
    design.apply_t(&g, &mut c);
    c /= -(design.n() as f64);
    kkt_from_bounds(design, theta, &c, &c, spec)
}

fn kkt_from_bounds(
    design: &Design,
    theta: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    spec: &PenaltySpec,
) -> f64 {
    let mut worst = 0.0f64;
    if design.intercept {
        let j = design.p();
        worst = worst.max(dist_to_interval(lo[j], hi[j]));
    }
    for (l, members) in spec.groups().iter().enumerate() {
        let c = spec.group_level(l);
        let norm = members.iter().map(|&j| theta[j] * theta[j]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for &j in members {
                let a = spec.l1_level(j);
                let b = theta[j];
                let d = if b != 0.0 {
                    let shift = a * b.signum() + c * b / norm;
                    dist_to_interval(lo[j] + shift, hi[j] + shift)
                } else {
                    dist_to_interval(lo[j] - a, hi[j] + a)
                };
                worst = worst.max(d);
            }
        } else if c > 0.0 {
            let e2: f64 = members
                .iter()
                .map(|&j| {
                    let a = spec.l1_level(j);
                    dist_to_interval(lo[j] - a, hi[j] + a).powi(2)
                })
                .sum();
            worst = worst.max((e2.sqrt() - c).max(0.0));
        } else {
            for &j in members {
                let a = spec.l1_level(j);
                worst = worst.max(dist_to_interval(lo[j] - a, hi[j] + a));
            }
        }
    }
    worst
}

fn objective_from_residuals(
    theta: &DVector<f64>,
    r: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
    p: usize,
) -> f64 {
    let risk = r.iter().map(|&u| check_loss(u, tau)).sum::<f64>() / r.len() as f64;
    risk + penalty_unchecked(&theta.as_slice()[..p], spec)
}

/// First-order optimality residual of `beta` (no intercept).
pub fn kkt_residual(beta: &[f64], d: &Dataset, tau: QuantileLevel, spec: &PenaltySpec) -> Result<f64> {
    kkt_residual_with_intercept(beta, None, d, tau, spec)
}

/// As [`kkt_residual`], for a model with an unpenalized intercept when `intercept` is `Some`.
pub fn kkt_residual_with_intercept(
    beta: &[f64],
    intercept: Option<f64>,
    d: &Dataset,
    tau: QuantileLevel,
    spec: &PenaltySpec,
) -> Result<f64> {
    validate_inputs(d, spec)?;
    if beta.len() != d.p() {
        return Err(Error::dims("coefficient vector", d.p(), beta.len()));
    }
    let design = Design {
        x: d.x(),
        y: d.y(),
        intercept: intercept.is_some(),
    };
    let mut theta = DVector::zeros(design.dim());
    theta.rows_mut(0, d.p()).copy_from_slice(beta);
    if let Some(b0) = intercept {
        theta[d.p()] = b0;
    }
    let r = crate::loss::residuals(beta, intercept.unwrap_or(0.0), d)?;
    Ok(kkt_from_residuals(&design, &theta, &r, tau, spec))
}

/// Objective `R(beta) + P(beta)`.
pub fn objective(beta: &[f64], intercept: f64, d: &Dataset, tau: QuantileLevel, spec: &PenaltySpec) -> Result<f64> {
    validate_inputs(d, spec)?;
    let r = crate::loss::residuals(beta, intercept, d)?;
    Ok(crate::loss::mean_check_loss(&r, tau) + penalty_unchecked(beta, spec))
}

/// Smallest `lambda` at which the all-zero coefficient vector certifies as optimal for
/// every `alpha` in [0, 1] under the given weights (for `alpha = 1` and unit weights this is
/// the usual lasso `lambda_max`). With an intercept the null model is the intercept-only fit.
pub fn lambda_max(
    d: &Dataset,
    tau: QuantileLevel,
    groups: &GroupStructure,
    w: &[f64],
    v: &[f64],
    intercept: bool,
) -> Result<f64> {
    if groups.p() != d.p() || w.len() != d.p() {
        return Err(Error::dims("weights", d.p(), w.len()));
    }
    if v.len() != groups.k() {
        return Err(Error::dims("group weights", groups.k(), v.len()));
    }
    let design = Design {
        x: d.x(),
        y: d.y(),
        intercept,
    };
    let offset = if intercept { empirical_quantile(d.y().as_slice(), tau) } else { 0.0 };
    let r = d.y().add_scalar(-offset);
    let (lo, hi) = risk_subgradient_bounds(&design, &r, tau);
    let dist: Vec<f64> = (0..d.p()).map(|j| dist_to_interval(lo[j], hi[j])).collect();
    let mut lam = 0.0f64;
    for (j, &g) in dist.iter().enumerate() {
        if w[j] > 0.0 {
            lam = lam.max(g / w[j]);
        }
    }
    for (l, members) in groups.iter().enumerate() {
        let scale = (members.len() as f64).sqrt() * v[l];
        if scale > 0.0 {
            let norm = members.iter().map(|&j| dist[j] * dist[j]).sum::<f64>().sqrt();
            lam = lam.max(norm / scale);
        }
    }
    Ok(lam)
}

/// A minimizer of the check loss over constants: the order statistic `y_(ceil(n tau))`.
pub fn empirical_quantile(values: &[f64], tau: QuantileLevel) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * tau.value()).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Minimizes `R(beta) + P(beta)` for the given penalty.
///
/// `converged` means the iterate was certified with a single multiplier vector for the
/// tied residuals, which implies `kkt_residual <= tol_kkt`.
pub fn fit(d: &Dataset, tau: QuantileLevel, spec: &PenaltySpec, opts: &SolverOptions) -> Result<FitResult> {
    validate_inputs(d, spec)?;
    opts.validate()?;
    let design = Design {
        x: d.x(),
        y: d.y(),
        intercept: opts.intercept,
    };
    let (n, p, dim) = (design.n(), design.p(), design.dim());
    let y = d.y();

    let mut theta = DVector::zeros(dim);
    if let Some(b0) = &opts.beta0 {
        if b0.len() != p {
            return Err(Error::dims("warm start", p, b0.len()));
        }
        theta.rows_mut(0, p).copy_from_slice(b0);
    }
    if opts.intercept {
        theta[p] = opts.intercept0;
    }

    let mut fitted = DVector::zeros(n);
    design.apply(&theta, &mut fitted);
    let start_r = y - &fitted;
    let mut best = Candidate::evaluate(&design, theta.clone(), tau, spec);
    if opts.beta0.is_some() || (opts.intercept && opts.intercept0 != 0.0) {
        // the zero vector is always a candidate
        let zero = Candidate::evaluate(&design, DVector::zeros(dim), tau, spec);
        if zero.objective < best.objective {
            best = zero;
        }
    }
    let start_objective = best.objective;

    // the start point may already be optimal
    let tie = design.tie_tol();
    let start_pattern = start_r.map(|v| if v.abs() <= tie { 0.0 } else { v });
    if best.kkt <= opts.tol_kkt {
        if let Some(done) = certify(&design, &theta, &start_pattern, tau, spec, opts.tol_kkt, start_objective) {
            return Ok(done.into_result(0, true, p, opts.intercept));
        }
    }

    let factor = Factor::new(&design);
    // the loss carries a 1/n factor; the coupling weight is taken relative to it
    let rho0 = opts.rho / n as f64;
    let mut rho = rho0;
    // beta carries the loss coupling, z the penalty; u and w are the scaled duals of
    // A beta + r = y and beta = z
    let mut beta;
    let mut z = theta;
    let mut r = start_r;
    let mut u = DVector::zeros(n);
    let mut w = DVector::zeros(dim);
    let mut r_prev = r.clone();
    let mut z_prev = z.clone();
    let mut work_n = DVector::zeros(n);
    let mut rhs = DVector::zeros(dim);
    let mut relaxed = DVector::zeros(dim);
    let mut last_pattern: Option<ActivePattern> = None;
    let mut tried: Vec<ActivePattern> = Vec::new();
    let mut checks_since_polish = 0usize;

    for iter in 1..=opts.max_iter {
        let sigma = 1.0 / (n as f64 * rho);
        // beta = (I + A'A)^{-1} (A'(y - r - u) + z - w)
        for i in 0..n {
            work_n[i] = y[i] - r[i] - u[i];
        }
        design.apply_t(&work_n, &mut rhs);
        rhs += &z;
        rhs -= &w;
        beta = factor.solve(&design, &rhs);
        design.apply(&beta, &mut fitted);
        // over-relaxation
        for i in 0..n {
            fitted[i] = RELAX * fitted[i] + (1.0 - RELAX) * (y[i] - r[i]);
        }
        relaxed.copy_from(&z);
        relaxed *= 1.0 - RELAX;
        relaxed.axpy(RELAX, &beta, 1.0);

        std::mem::swap(&mut r, &mut r_prev);
        for i in 0..n {
            r[i] = prox_check(y[i] - fitted[i] - u[i], sigma, tau);
        }
        std::mem::swap(&mut z, &mut z_prev);
        rhs.copy_from(&relaxed);
        rhs += &w;
        prox_asgl_into(&rhs.as_slice()[..p], spec, 1.0 / rho, &mut z.as_mut_slice()[..p]);
        if opts.intercept {
            z[p] = rhs[p];
        }
        for i in 0..n {
            u[i] += fitted[i] + r[i] - y[i];
        }
        w += &relaxed;
        w -= &z;

        if iter % opts.check_every != 0 && iter != opts.max_iter {
            continue;
        }

        let current = Candidate::evaluate(&design, z.clone(), tau, spec);
        if current.objective < best.objective {
            best = current;
        }
        // loss multipliers estimated from the scaled dual; ties are the residuals the
        // r update set exactly to zero
        let g = u.map(|ui| -(n as f64) * rho * ui);
        if kkt_with_multipliers(&design, &z, &r, &g, 0.0, tau, spec) <= 0.5 * opts.tol_kkt {
            if let Some(done) = snap(&design, &z, &r, &g, tau, spec, opts.tol_kkt, start_objective) {
                return Ok(done.into_result(iter, true, p, opts.intercept));
            }
        }

        let pattern = ActivePattern::read(&z, &r, p, opts.intercept);
        checks_since_polish += 1;
        let stable = last_pattern.as_ref() == Some(&pattern);
        if (stable || checks_since_polish >= 10) && !tried.contains(&pattern) {
            checks_since_polish = 0;
            if let Some(done) = certify(&design, &z, &r, tau, spec, opts.tol_kkt, start_objective) {
                return Ok(done.into_result(iter, true, p, opts.intercept));
            }
            if tried.len() >= 8 {
                tried.remove(0);
            }
            tried.push(pattern.clone());
        }
        last_pattern = Some(pattern);

        if opts.adaptive_rho {
            // residual balancing on primal [A beta + r - y; beta - z] and
            // dual rho (A' dr - dz)
            let primal = (fitted.clone() + &r - y).norm_squared() + (&relaxed - &z).norm_squared();
            work_n.copy_from(&r);
            work_n -= &r_prev;
            design.apply_t(&work_n, &mut rhs);
            rhs -= &z;
            rhs += &z_prev;
            let (primal, dual) = (primal.sqrt(), rho * rhs.norm());
            if primal > 10.0 * dual && rho < 1e4 * rho0 {
                rho *= 2.0;
                u /= 2.0;
                w /= 2.0;
            } else if dual > 10.0 * primal && rho > 1e-4 * rho0 {
                rho /= 2.0;
                u *= 2.0;
                w *= 2.0;
            }
        }
    }
    Ok(best.into_result(opts.max_iter, false, p, opts.intercept))
}

/// Applies `(I + A'A)^{-1}`, factored directly or through the `n x n` Woodbury form.
enum Factor {
    Direct(Cholesky<f64, Dyn>),
    Woodbury(Cholesky<f64, Dyn>),
}

impl Factor {
    fn new(design: &Design) -> Self {
        let a = if design.intercept {
            design.x.clone().insert_column(design.p(), 1.0)
        } else {
            design.x.clone()
        };
        let (gram, woodbury) = if design.dim() <= design.n() {
            (a.tr_mul(&a), false)
        } else {
            (&a * a.transpose(), true)
        };
        let m = DMatrix::identity(gram.nrows(), gram.ncols()) + gram;
        // identity plus a Gram matrix is positive definite
        let chol = Cholesky::new(m).expect("I + A'A is positive definite");
        if woodbury {
            Factor::Woodbury(chol)
        } else {
            Factor::Direct(chol)
        }
    }

    fn solve(&self, design: &Design, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Direct(c) => c.solve(v),
            Factor::Woodbury(c) => {
                // (I + A'A)^{-1} = I - A' (I + A A')^{-1} A
                let mut av = DVector::zeros(design.n());
                design.apply(v, &mut av);
                let inner = c.solve(&av);
                let mut back = DVector::zeros(design.dim());
                design.apply_t(&inner, &mut back);
                v - back
            }
        }
    }
}

/// A point with its objective and relaxed optimality residual.
struct Candidate {
    theta: DVector<f64>,
    objective: f64,
    kkt: f64,
}

impl Candidate {
    fn evaluate(design: &Design, theta: DVector<f64>, tau: QuantileLevel, spec: &PenaltySpec) -> Self {
        let mut fitted = DVector::zeros(design.n());
        design.apply(&theta, &mut fitted);
        let r = design.y - fitted;
        Self {
            objective: objective_from_residuals(&theta, &r, tau, spec, design.p()),
            kkt: kkt_from_residuals(design, &theta, &r, tau, spec),
            theta,
        }
    }

    fn into_result(self, iterations: usize, converged: bool, p: usize, intercept: bool) -> FitResult {
        FitResult {
            beta_hat: self.theta.as_slice()[..p].to_vec(),
            intercept: if intercept { self.theta[p] } else { 0.0 },
            objective: self.objective,
            kkt_residual: self.kkt,
            iterations,
            converged,
        }
    }
}

/// Polishes `theta` on the pattern of `pattern_r` and returns the result if it certifies
/// and does not increase the objective beyond `reference` (up to round-off).
///
/// A failed polish is followed by a few active-set corrections: coefficients that changed
/// sign leave the support, ties whose multiplier left `[tau - 1, tau]` are released,
/// residuals that changed sign become ties and, failing all of those, the zero coordinate
/// with the largest optimality violation enters the support.
fn certify(
    design: &Design,
    theta: &DVector<f64>,
    pattern_r: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
    tol: f64,
    reference: f64,
) -> Option<Candidate> {
    // ADMM leaves coordinates that belong at zero slightly nonzero, so a few supports
    // obtained by relative magnitude thresholds are tried
    let p = design.p();
    let top = theta.rows(0, p).amax();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for rel in [0.0, 1e-6, 1e-3] {
        let cut = rel * top;
        let mut start = theta.clone();
        for j in 0..p {
            if start[j].abs() <= cut {
                start[j] = 0.0;
            }
        }
        let mask: Vec<bool> = start.iter().map(|&b| b != 0.0).collect();
        if seen.contains(&mask) {
            continue;
        }
        seen.push(mask);
        let mut pattern = pattern_r.clone();
        let mut released = vec![false; design.n()];
        for _ in 0..ACTIVE_SET_ROUNDS {
            balance_ties(design, &start, &mut pattern, &released, spec);
            let Some((polished, g)) = polish(design, &start, &pattern, tau, spec) else {
                break;
            };
            let mut fitted = DVector::zeros(design.n());
            design.apply(&polished, &mut fitted);
            let r = design.y - fitted;
            if kkt_with_multipliers(design, &polished, &r, &g, design.tie_tol(), tau, spec) <= tol {
                let cand = Candidate::evaluate(design, polished, tau, spec);
                if cand.objective <= reference + 1e-10 * (1.0 + reference.abs()) {
                    return Some(cand);
                }
                break;
            }
            let before = pattern.clone();
            if !correct_active_set(design, &mut start, &polished, &mut pattern, &r, &g, tau, spec) {
                break;
            }
            for i in 0..design.n() {
                released[i] = before[i] == 0.0 && pattern[i] != 0.0;
            }
        }
    }
    None
}

const ACTIVE_SET_ROUNDS: usize = 8;

/// Adds the smallest residuals of `start` to the ties until there are as many ties as
/// directions along which the objective is linear on the current support (one per
/// coordinate without group curvature, one per curved group, the intercept).
fn balance_ties(
    design: &Design,
    start: &DVector<f64>,
    pattern: &mut DVector<f64>,
    released: &[bool],
    spec: &PenaltySpec,
) {
    let mut needed = usize::from(design.intercept);
    for (l, members) in spec.groups().iter().enumerate() {
        let active = members.iter().filter(|&&j| start[j] != 0.0).count();
        if active == 0 {
            continue;
        }
        needed += if spec.group_level(l) > 0.0 { 1 } else { active };
    }
    let have = pattern.iter().filter(|v| **v == 0.0).count();
    if have >= needed {
        return;
    }
    let mut fitted = DVector::zeros(design.n());
    design.apply(start, &mut fitted);
    let mut order: Vec<(f64, usize)> = (0..design.n())
        .filter(|&i| pattern[i] != 0.0 && !released[i])
        .map(|i| ((design.y[i] - fitted[i]).abs(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in order.iter().take(needed - have) {
        pattern[i] = 0.0;
    }
}

/// Updates `start` and `pattern` for another polish; false when nothing can change.
#[allow(clippy::too_many_arguments)]
fn correct_active_set(
    design: &Design,
    start: &mut DVector<f64>,
    polished: &DVector<f64>,
    pattern: &mut DVector<f64>,
    r: &DVector<f64>,
    g: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
) -> bool {
    let p = design.p();
    let t = tau.value();
    let tie = design.tie_tol();
    let mut changed = false;
    let mut next = polished.clone();
    for j in 0..p {
        if start[j] != 0.0 && polished[j].signum() != start[j].signum() {
            next[j] = 0.0;
            changed = true;
        }
    }
    for i in 0..design.n() {
        if pattern[i] == 0.0 {
            if g[i] > t + 1e-12 {
                pattern[i] = 1.0;
                changed = true;
            } else if g[i] < t - 1.0 - 1e-12 {
                pattern[i] = -1.0;
                changed = true;
            }
        } else if r[i].abs() > tie && r[i].signum() != pattern[i].signum() {
            pattern[i] = 0.0;
            changed = true;
        }
    }
    if !changed {
        // bring in the worst violator among the zero coordinates
        let gc = DVector::from_fn(design.n(), |i, _| {
            if pattern[i] == 0.0 {
                g[i].clamp(t - 1.0, t)
            } else if pattern[i] > 0.0 {
                t
            } else {
                t - 1.0
            }
        });
        let mut c = DVector::zeros(design.dim());
        design.apply_t(&gc, &mut c);
        c /= -(design.n() as f64);
        let mut worst: Option<(usize, f64)> = None;
        for (l, members) in spec.groups().iter().enumerate() {
            let group_zero = members.iter().all(|&j| next[j] == 0.0);
            let cl = spec.group_level(l);
            let block = if group_zero && cl > 0.0 {
                let e2: f64 = members
                    .iter()
                    .map(|&j| (c[j].abs() - spec.l1_level(j)).max(0.0).powi(2))
                    .sum();
                e2.sqrt() - cl
            } else {
                0.0
            };
            for &j in members {
                if next[j] != 0.0 {
                    continue;
                }
                let excess = c[j].abs() - spec.l1_level(j);
                let violation = if group_zero && cl > 0.0 {
                    if block > 0.0 { excess } else { 0.0 }
                } else {
                    excess
                };
                if violation > 0.0 && worst.is_none_or(|(_, v)| violation > v) {
                    worst = Some((j, violation));
                }
            }
        }
        let Some((j, _)) = worst else {
            return false;
        };
        let magnitude = 1e-6 * (1.0 + next.rows(0, p).amax());
        next[j] = -c[j].signum() * magnitude;
    }
    *start = next;
    true
}

/// Moves `theta` by the smallest change (on its support) that makes the residuals marked
/// zero in `pattern_r` exact ties, then certifies it with multipliers `g`.
#[allow(clippy::too_many_arguments)]
fn snap(
    design: &Design,
    theta: &DVector<f64>,
    pattern_r: &DVector<f64>,
    g: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
    tol: f64,
    reference: f64,
) -> Option<Candidate> {
    let support: Vec<usize> = (0..design.dim())
        .filter(|&j| j >= design.p() || theta[j] != 0.0)
        .collect();
    let zeros: Vec<usize> = (0..design.n()).filter(|&i| pattern_r[i] == 0.0).collect();
    let mut snapped = theta.clone();
    if !zeros.is_empty() && !support.is_empty() {
        let a = DMatrix::from_fn(zeros.len(), support.len(), |m, k| design.entry(zeros[m], support[k]));
        let gap = DVector::from_fn(zeros.len(), |m, _| {
            let i = zeros[m];
            design.y[i] - support.iter().map(|&j| design.entry(i, j) * theta[j]).sum::<f64>()
        });
        // minimum-norm correction
        let delta = a.svd(true, true).solve(&gap, 1e-12).ok()?;
        for (k, &j) in support.iter().enumerate() {
            if j < design.p() && (theta[j] + delta[k]).signum() != theta[j].signum() {
                return None;
            }
            snapped[j] += delta[k];
        }
    }
    let mut fitted = DVector::zeros(design.n());
    design.apply(&snapped, &mut fitted);
    let r = design.y - fitted;
    if kkt_with_multipliers(design, &snapped, &r, g, design.tie_tol(), tau, spec) > tol {
        return None;
    }
    let cand = Candidate::evaluate(design, snapped, tau, spec);
    (cand.kkt <= tol && cand.objective <= reference + 1e-10 * (1.0 + reference.abs())).then_some(cand)
}

/// Signs of the coefficients and of the ADMM residual variable.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ActivePattern {
    coef: Vec<i8>,
    resid: Vec<i8>,
}

impl ActivePattern {
    fn read(theta: &DVector<f64>, r: &DVector<f64>, p: usize, intercept: bool) -> Self {
        let sign = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
        let mut coef: Vec<i8> = theta.as_slice()[..p].iter().map(|&b| sign(b)).collect();
        if intercept {
            coef.push(2);
        }
        Self {
            coef,
            resid: r.iter().map(|&v| sign(v)).collect(),
        }
    }
}

/// Newton polish on an active set.
///
/// Unknowns are the nonzero coefficients `theta_S` and the multipliers `xi_Z` of the
/// residuals that are exactly zero in `pattern_r`:
///
/// ```text
/// -(1/n) (a_S + A_ZS' xi) + grad P(theta_S) = 0
///                          A_ZS theta_S      = y_Z
/// ```
///
/// where `a_S = sum_{i not in Z} A_iS (tau - 1{r_i < 0})`. Returns the polished point and
/// the multiplier candidates (zero outside `Z`); the caller certifies them.
fn polish(
    design: &Design,
    theta: &DVector<f64>,
    pattern_r: &DVector<f64>,
    tau: QuantileLevel,
    spec: &PenaltySpec,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = design.n();
    let p = design.p();
    let t = tau.value();
    let support: Vec<usize> = (0..design.dim())
        .filter(|&j| j >= p || theta[j] != 0.0)
        .collect();
    let zeros: Vec<usize> = (0..n).filter(|&i| pattern_r[i] == 0.0).collect();
    let (s, z) = (support.len(), zeros.len());
    if s + z > 800 {
        return None;
    }
    let mut g_full = DVector::zeros(n);
    if s + z == 0 {
        return Some((theta.clone(), g_full));
    }

    let mut g = DVector::zeros(n);
    for i in 0..n {
        if pattern_r[i] != 0.0 {
            g[i] = if pattern_r[i] < 0.0 { t - 1.0 } else { t };
        }
    }
    let mut a_full = DVector::zeros(design.dim());
    design.apply_t(&g, &mut a_full);
    let a: Vec<f64> = support.iter().map(|&j| a_full[j]).collect();

    // group of each supported coordinate (None for the intercept)
    let group_of: Vec<Option<usize>> = support
        .iter()
        .map(|&j| (j < p).then(|| spec.groups().group_of()[j]))
        .collect();
    let signs: Vec<f64> = support.iter().map(|&j| if j < p { theta[j].signum() } else { 0.0 }).collect();
    let mut ts: Vec<f64> = support.iter().map(|&j| theta[j]).collect();
    let mut xi = vec![0.0; z];
    // start the multipliers mid-interval
    xi.iter_mut().for_each(|v| *v = t - 0.5);
    let nf = n as f64;
    let scale = 1.0 + design.y.amax();

    let mut previous = f64::INFINITY;
    for _ in 0..30 {
        let mut gnorm = vec![0.0; spec.groups().k()];
        for (k, go) in group_of.iter().enumerate() {
            if let Some(l) = go {
                gnorm[*l] += ts[k] * ts[k];
            }
        }
        gnorm.iter_mut().for_each(|v| *v = v.sqrt());

        let mut f = DVector::zeros(s + z);
        for k in 0..s {
            let j = support[k];
            let mut val = -a[k] / nf;
            for (m, &i) in zeros.iter().enumerate() {
                val -= design.entry(i, j) * xi[m] / nf;
            }
            if let Some(l) = group_of[k] {
                val += spec.l1_level(j) * signs[k];
                if gnorm[l] > 0.0 {
                    val += spec.group_level(l) * ts[k] / gnorm[l];
                }
            }
            f[k] = val;
        }
        for (m, &i) in zeros.iter().enumerate() {
            let mut val = -design.y[i];
            for k in 0..s {
                val += design.entry(i, support[k]) * ts[k];
            }
            f[s + m] = val;
        }
        let size = f.amax();
        if size <= 1e-13 * scale || size >= 0.5 * previous {
            // converged, or stalled (inconsistent system or a sign change)
            break;
        }
        previous = size;

        let mut jac = DMatrix::zeros(s + z, s + z);
        for k in 0..s {
            if let Some(l) = group_of[k] {
                let c = spec.group_level(l);
                if c > 0.0 && gnorm[l] > 0.0 {
                    let nrm = gnorm[l];
                    for k2 in 0..s {
                        if group_of[k2] == Some(l) {
                            let delta = if k == k2 { 1.0 } else { 0.0 };
                            jac[(k, k2)] = c * (delta / nrm - ts[k] * ts[k2] / (nrm * nrm * nrm));
                        }
                    }
                }
            }
            for (m, &i) in zeros.iter().enumerate() {
                let x = design.entry(i, support[k]);
                jac[(k, s + m)] = -x / nf;
                jac[(s + m, k)] = x;
            }
        }
        let rhs = -f;
        let step = match jac.clone().lu().solve(&rhs) {
            Some(sol)
                if sol.iter().all(|v| v.is_finite())
                    && (&jac * &sol - &rhs).amax() <= 1e-9 * (1.0 + rhs.amax()) =>
            {
                sol
            }
            _ => jac.svd(true, true).solve(&rhs, 1e-12).ok()?,
        };
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        for k in 0..s {
            ts[k] += step[k];
        }
        for m in 0..z {
            xi[m] += step[s + m];
        }
    }

    let mut out = DVector::zeros(design.dim());
    for (k, &j) in support.iter().enumerate() {
        out[j] = ts[k];
    }
    for (m, &i) in zeros.iter().enumerate() {
        g_full[i] = xi[m];
    }
    Some((out, g_full))
}
