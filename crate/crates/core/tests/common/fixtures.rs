//! Synthetic data with known structure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n x p` log-scale expression-like matrix (values around 8) and a response; the first
/// `planted` columns have population correlation `rho` with the response, the rest 0.
pub fn planted_expression(n: usize, p: usize, planted: usize, rho: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DVector::from_fn(n, |_, _| normal(&mut rng));
    let s = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            let e = normal(&mut rng);
            x[(i, j)] = 8.0 + if j < planted { rho * y[i] + s * e } else { e };
        }
    }
    (x, y)
}

/// `n x p` matrix from `factors` latent factors; column `j` loads on factor `j % factors`.
pub fn factor_matrix(n: usize, p: usize, factors: usize, noise: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = DMatrix::from_fn(n, factors, |_, _| normal(&mut rng));
    DMatrix::from_fn(n, p, |i, j| {
        let loading = 1.0 + (j / factors) as f64 % 3.0 * 0.5;
        loading * f[(i, j % factors)] + noise * normal(&mut rng)
    })
}

/// Groups by largest absolute eigenvector entry of the sample covariance, computed with a
/// dense symmetric eigensolver; components with zero variance are ignored and unused
/// components dropped.
pub fn covariance_argmax_groups(x: &DMatrix<f64>) -> Vec<usize> {
    let (n, p) = x.shape();
    let means = DVector::from_fn(p, |j, _| x.column(j).mean());
    let mut c = x.clone();
    for j in 0..p {
        c.column_mut(j).add_scalar_mut(-means[j]);
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let usable: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
    let raw: Vec<usize> = (0..p)
        .map(|j| {
            let mut best = 0;
            for (k, &i) in usable.iter().enumerate() {
                if eig.eigenvectors[(j, i)].abs() > eig.eigenvectors[(j, usable[best])].abs() {
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut used = raw.clone();
    used.sort_unstable();
    used.dedup();
    raw.iter().map(|c| used.binary_search(c).unwrap()).collect()
}
