//! The adaptive sparse group lasso penalty and its proximal map.
//!
//! For groups `l = 1..K` with sizes `p_l`,
//!
//! ```text
//! P(beta) = alpha * lambda * sum_j w_j |beta_j|
//!         + (1 - alpha) * lambda * sum_l sqrt(p_l) v_l ||beta^l||_2
//! ```
//!
//! LASSO, group LASSO, SGL and the adaptive variants are all special cases of the
//! weights and mixing parameter.

use crate::data::GroupStructure;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    lambda: f64,
    alpha: f64,
    w: Vec<f64>,
    v: Vec<f64>,
    groups: GroupStructure,
}

impl PenaltySpec {
    pub fn new(
        lambda: f64,
        alpha: f64,
        w: Vec<f64>,
        v: Vec<f64>,
        groups: GroupStructure,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if w.len() != groups.p() {
            return Err(Error::dims("variable weights", groups.p(), w.len()));
        }
        if v.len() != groups.k() {
            return Err(Error::dims("group weights", groups.k(), v.len()));
        }
        if let Some(bad) = w.iter().chain(v.iter()).find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid("weights", format!("must be finite and >= 0, got {bad}")));
        }
        Ok(Self {
            lambda,
            alpha,
            w,
            v,
            groups,
        })
    }

    /// Unit-weight sparse group lasso.
    pub fn sgl(lambda: f64, alpha: f64, groups: GroupStructure) -> Result<Self> {
        let (p, k) = (groups.p(), groups.k());
        Self::new(lambda, alpha, vec![1.0; p], vec![1.0; k], groups)
    }

    pub fn lasso(lambda: f64, groups: GroupStructure) -> Result<Self> {
        Self::sgl(lambda, 1.0, groups)
    }

    pub fn group_lasso(lambda: f64, groups: GroupStructure) -> Result<Self> {
        Self::sgl(lambda, 0.0, groups)
    }

    /// No penalty at all (plain quantile regression).
    pub fn unpenalized(groups: GroupStructure) -> Result<Self> {
        Self::sgl(0.0, 1.0, groups)
    }

    /// Same weights and groups at a different `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.alpha, self.w.clone(), self.v.clone(), self.groups.clone())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn p(&self) -> usize {
        self.groups.p()
    }

    /// Per-coordinate l1 multiplier `alpha * lambda * w_j`.
    pub(crate) fn l1_level(&self, j: usize) -> f64 {
        self.alpha * self.lambda * self.w[j]
    }

    /// Per-group l2 multiplier `(1 - alpha) * lambda * sqrt(p_l) * v_l`.
    pub(crate) fn group_level(&self, l: usize) -> f64 {
        let size = self.groups.members(l).len() as f64;
        (1.0 - self.alpha) * self.lambda * size.sqrt() * self.v[l]
    }
}

/// Exact value of the penalty at `beta`.
pub fn penalty_value(beta: &[f64], spec: &PenaltySpec) -> Result<f64> {
    if beta.len() != spec.p() {
        return Err(Error::dims("coefficient vector", spec.p(), beta.len()));
    }
    Ok(penalty_unchecked(beta, spec))
}

pub(crate) fn penalty_unchecked(beta: &[f64], spec: &PenaltySpec) -> f64 {
    if spec.lambda == 0.0 {
        return 0.0;
    }
    let l1: f64 = beta
        .iter()
        .zip(&spec.w)
        .map(|(b, w)| w * b.abs())
        .sum();
    let group: f64 = spec
        .groups
        .iter()
        .enumerate()
        .map(|(l, members)| {
            let norm = members.iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt();
            (members.len() as f64).sqrt() * spec.v[l] * norm
        })
        .sum();
    spec.alpha * spec.lambda * l1 + (1.0 - spec.alpha) * spec.lambda * group
}

#[inline]
pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Proximal map of `step * P`, written into `out` (which may alias nothing else).
///
/// Elementwise soft-thresholding at `step * alpha * lambda * w_j` followed by block
/// shrinkage of each group at `step * (1 - alpha) * lambda * sqrt(p_l) * v_l`.
pub(crate) fn prox_asgl_into(v: &[f64], spec: &PenaltySpec, step: f64, out: &mut [f64]) {
    if spec.lambda == 0.0 {
        out.copy_from_slice(v);
        return;
    }
    for (l, members) in spec.groups.iter().enumerate() {
        let mut norm2 = 0.0;
        for &j in members {
            let s = soft_threshold(v[j], step * spec.l1_level(j));
            out[j] = s;
            norm2 += s * s;
        }
        let threshold = step * spec.group_level(l);
        if threshold == 0.0 {
            continue;
        }
        let norm = norm2.sqrt();
        if norm <= threshold {
            for &j in members {
                out[j] = 0.0;
            }
        } else {
            let scale = 1.0 - threshold / norm;
            for &j in members {
                out[j] *= scale;
            }
        }
    }
}

/// Proximal map of `step * P` at `v`.
pub fn prox_asgl(v: &[f64], spec: &PenaltySpec, step: f64) -> Result<Vec<f64>> {
    if v.len() != spec.p() {
        return Err(Error::dims("prox argument", spec.p(), v.len()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", format!("must be positive, got {step}")));
    }
    let mut out = vec![0.0; v.len()];
    prox_asgl_into(v, spec, step, &mut out);
    Ok(out)
}
