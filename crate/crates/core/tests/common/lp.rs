//! Reference solver for l1-penalized quantile regression written as a linear program
//!
//! ```text
//! min  sum_j a_j (b+_j + b-_j) + (1/n) sum_i (tau u_i + (1 - tau) v_i)
//! s.t. X (b+ - b-) + u - v = y,   all variables >= 0
//! ```
//!
//! solved with a dense tableau simplex under Bland's rule. Slow, but independent of the
//! library's solver.

use nalgebra::{DMatrix, DVector};

pub struct LpSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
}

pub fn l1_quantile_regression(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, a: &[f64]) -> LpSolution {
    let (n, p) = x.shape();
    let cols = 2 * p + 2 * n;
    let mut cost = vec![0.0; cols];
    for j in 0..p {
        cost[j] = a[j];
        cost[p + j] = a[j];
    }
    for i in 0..n {
        cost[2 * p + i] = tau / n as f64;
        cost[2 * p + n + i] = (1.0 - tau) / n as f64;
    }
    // rows flipped so that the right-hand side is nonnegative
    let mut t = DMatrix::zeros(n, cols + 1);
    let mut basis = vec![0usize; n];
    for i in 0..n {
        let s = if y[i] >= 0.0 { 1.0 } else { -1.0 };
        for j in 0..p {
            t[(i, j)] = s * x[(i, j)];
            t[(i, p + j)] = -s * x[(i, j)];
        }
        t[(i, 2 * p + i)] = s;
        t[(i, 2 * p + n + i)] = -s;
        t[(i, cols)] = s * y[i];
        basis[i] = if s > 0.0 { 2 * p + i } else { 2 * p + n + i };
    }

    loop {
        // reduced costs c_j - c_B' B^{-1} A_j; the tableau already holds B^{-1} A
        let mut entering = None;
        for j in 0..cols {
            if basis.contains(&j) {
                continue;
            }
            let mut reduced = cost[j];
            for i in 0..n {
                reduced -= cost[basis[i]] * t[(i, j)];
            }
            if reduced < -1e-12 {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..n {
            let coef = t[(i, e)];
            if coef > 1e-12 {
                let ratio = t[(i, cols)] / coef;
                let better = match leave {
                    None => true,
                    Some((k, best)) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (row, _) = leave.expect("objective is bounded below");
        let pivot = t[(row, e)];
        for j in 0..=cols {
            t[(row, j)] /= pivot;
        }
        for i in 0..n {
            if i != row {
                let f = t[(i, e)];
                if f != 0.0 {
                    for j in 0..=cols {
                        let v = t[(row, j)];
                        t[(i, j)] -= f * v;
                    }
                }
            }
        }
        basis[row] = e;
    }

    let mut values = vec![0.0; cols];
    for i in 0..n {
        values[basis[i]] = t[(i, cols)];
    }
    let beta: Vec<f64> = (0..p).map(|j| values[j] - values[p + j]).collect();
    let objective = cost.iter().zip(&values).map(|(c, v)| c * v).sum();
    LpSolution { beta, objective }
}
