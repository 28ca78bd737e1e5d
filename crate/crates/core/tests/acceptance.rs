//! Acceptance criteria, one PASS/FAIL line each. Criteria 4-6 run the desk-scale Monte Carlo
//! experiments and take tens of minutes on one core.

mod common;

use std::fs;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use asgl::genomics::pca_cluster;
use asgl::loss::prox_check;
use asgl::reduction::pca;
use asgl::select::{Grid, LambdaGrid};
use asgl::simulation::{generate, metrics, run_experiment, ExperimentOptions, ModelConfig, Scenario, ScenarioName};
use asgl::solver::objective;
use asgl::weights::{adaptive_weights, SchemeKind, WeightScheme};
use asgl::{fit, kkt_residual, lambda_max, prox_asgl, Dataset, GroupStructure, PenaltySpec, SolverOptions};
use common::fixtures::{covariance_argmax_groups, factor_matrix};
use common::{lp, q};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    failed: Vec<usize>,
}

impl Outcome {
    fn record(&mut self, criterion: usize, ok: bool, detail: String) {
        // written to the raw handle so the lines survive test output capture
        let mut out = std::io::stdout().lock();
        let status = if ok { "PASS" } else { "FAIL" };
        writeln!(out, "{status} criterion {criterion}: {detail}").unwrap();
        out.flush().unwrap();
        if !ok {
            self.failed.push(criterion);
        }
    }
}

/// Minimize a convex function of one or two variables on a grid, refining around the best
/// point until the spacing is 1e-4.
fn grid_argmin(f: impl Fn(&[f64]) -> f64, dim: usize, radius: f64) -> Vec<f64> {
    let mut center = vec![0.0; dim];
    let mut half = radius;
    let mut step = 0.05;
    loop {
        let m = (half / step).ceil() as i64;
        let mut best = (f64::INFINITY, center.clone());
        let mut point = center.clone();
        let offsets: Vec<f64> = (-m..=m).map(|k| k as f64 * step).collect();
        if dim == 1 {
            for &a in &offsets {
                point[0] = center[0] + a;
                let val = f(&point);
                if val < best.0 {
                    best = (val, point.clone());
                }
            }
        } else {
            for &a in &offsets {
                for &b in &offsets {
                    point[0] = center[0] + a;
                    point[1] = center[1] + b;
                    let val = f(&point);
                    if val < best.0 {
                        best = (val, point.clone());
                    }
                }
            }
        }
        center = best.1;
        if step <= 1e-4 {
            return center;
        }
        half = 5.0 * step;
        step /= 10.0;
    }
}

fn criterion_1(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v: f64 = rng.random_range(-3.0..3.0);
        let sigma: f64 = rng.random_range(0.01..2.0);
        let tau = q(rng.random_range(0.05..0.95));
        let oracle = grid_argmin(|u| sigma * asgl::check_loss(u[0], tau) + 0.5 * (u[0] - v).powi(2), 1, 5.0);
        worst = worst.max((prox_check(v, sigma, tau) - oracle[0]).abs());
    }
    for i in 0..1000 {
        let size = 1 + i % 2;
        let groups = GroupStructure::contiguous(1, size).unwrap();
        let lambda = rng.random_range(0.0..2.0);
        let alpha = if i % 7 == 0 { 0.0 } else if i % 7 == 1 { 1.0 } else { rng.random_range(0.0..1.0) };
        let w: Vec<f64> = (0..size).map(|_| rng.random_range(0.2..3.0)).collect();
        let gv = rng.random_range(0.2..3.0);
        let step = rng.random_range(0.1..2.0);
        let x: Vec<f64> = (0..size).map(|_| rng.random_range(-3.0..3.0)).collect();
        let spec = PenaltySpec::new(lambda, alpha, w.clone(), vec![gv], groups).unwrap();
        let penalty = |b: &[f64]| {
            let l1: f64 = b.iter().zip(&w).map(|(b, w)| w * b.abs()).sum();
            let l2 = b.iter().map(|b| b * b).sum::<f64>().sqrt();
            lambda * (alpha * l1 + (1.0 - alpha) * (size as f64).sqrt() * gv * l2)
        };
        let oracle = grid_argmin(
            |b| step * penalty(b) + 0.5 * b.iter().zip(&x).map(|(b, x)| (b - x).powi(2)).sum::<f64>(),
            size,
            3.5,
        );
        let got = prox_asgl(&x, &spec, step).unwrap();
        for (g, o) in got.iter().zip(&oracle) {
            worst = worst.max((g - o).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    out.record(
        1,
        worst <= 1e-3 && secs < 60.0,
        format!("2000 prox instances, max argument error {worst:.2e} (limit 1e-3), {secs:.1}s (limit 60s)"),
    );
}

fn random_groups(p: usize, rng: &mut ChaCha8Rng) -> GroupStructure {
    let mut group_of = Vec::with_capacity(p);
    let mut g = 0;
    while group_of.len() < p {
        let size = rng.random_range(1..=4usize).min(p - group_of.len());
        group_of.extend(std::iter::repeat_n(g, size));
        g += 1;
    }
    GroupStructure::new(group_of).unwrap()
}

fn random_instance(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { rng.random_range(-2.0..2.0) } else { 0.0 });
    let noise = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    Dataset::new(x.clone(), &x * beta + noise).unwrap()
}

fn criterion_2(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = SolverOptions::default();
    let mut worst_kkt: f64 = 0.0;
    let mut worst_obj: f64 = 0.0;
    let mut unconverged = 0;
    let mut lp_cases = 0;
    for i in 0..100 {
        let p = rng.random_range(2..=20usize);
        let n = rng.random_range((p + 5).max(10)..=50usize);
        let d = random_instance(n, p, &mut rng);
        let groups = random_groups(p, &mut rng);
        let tau = q(rng.random_range(0.1..0.9));
        let k = groups.k();
        let ones = (vec![1.0; p], vec![1.0; k]);
        let random_w = (
            (0..p).map(|_| rng.random_range(0.3..3.0)).collect::<Vec<_>>(),
            (0..k).map(|_| rng.random_range(0.3..3.0)).collect::<Vec<_>>(),
        );
        // lasso, group lasso, sgl, weighted lasso, asgl, unpenalized
        let (alpha, (w, v)) = match i % 6 {
            0 => (1.0, ones),
            1 => (0.0, ones),
            2 => (rng.random_range(0.05..0.95), ones),
            3 => (1.0, random_w),
            4 => (rng.random_range(0.05..0.95), random_w),
            _ => (1.0, ones),
        };
        let lambda = if i % 6 == 5 {
            0.0
        } else {
            rng.random_range(0.05..0.8) * lambda_max(&d, tau, &groups, &w, &v, false).unwrap()
        };
        let spec = PenaltySpec::new(lambda, alpha, w.clone(), v, groups).unwrap();
        let res = fit(&d, tau, &spec, &opts).unwrap();
        if !res.converged {
            unconverged += 1;
        }
        worst_kkt = worst_kkt.max(kkt_residual(&res.beta_hat, &d, tau, &spec).unwrap());
        if alpha == 1.0 {
            let a: Vec<f64> = w.iter().map(|w| lambda * w).collect();
            let reference = lp::l1_quantile_regression(d.x(), d.y(), tau.value(), &a);
            let at_lp = objective(&reference.beta, 0.0, &d, tau, &spec).unwrap();
            worst_obj = worst_obj.max((res.objective - at_lp).abs());
            lp_cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    out.record(
        2,
        unconverged == 0 && worst_kkt <= 1e-5 && worst_obj <= 1e-4 && secs < 300.0,
        format!(
            "100 fits, {unconverged} unconverged, max kkt {worst_kkt:.2e} (limit 1e-5), \
             max objective gap to LP {worst_obj:.2e} over {lp_cases} alpha=1 fits (limit 1e-4), {secs:.1}s (limit 300s)"
        ),
    );
}

fn criterion_3(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    let tau = q(0.5);
    let mut identical = true;
    let mut worst_lasso: f64 = 0.0;
    let mut balanced = true;
    for i in 0..10 {
        let d = random_instance(40, 12, &mut rng);
        let groups = GroupStructure::contiguous(4, 3).unwrap();
        let lmax = lambda_max(&d, tau, &groups, &[1.0; 12], &[1.0; 4], false).unwrap();
        let lambda = rng.random_range(0.05..0.5) * lmax;
        let alpha = rng.random_range(0.1..0.9);

        let sgl = fit(&d, tau, &PenaltySpec::sgl(lambda, alpha, groups.clone()).unwrap(), &opts).unwrap();
        let kinds = [SchemeKind::PcaD, SchemeKind::Pca1, SchemeKind::PlsD, SchemeKind::Pls1, SchemeKind::Unpenalized];
        let scheme = WeightScheme::new(kinds[i % kinds.len()], 0.0, 0.0);
        let (w, v) = adaptive_weights(&d, tau, &groups, &scheme, &opts).unwrap();
        let asgl = fit(&d, tau, &PenaltySpec::new(lambda, alpha, w, v, groups.clone()).unwrap(), &opts).unwrap();
        identical &= asgl.beta_hat == sgl.beta_hat && asgl.objective.to_bits() == sgl.objective.to_bits();

        let sgl1 = fit(&d, tau, &PenaltySpec::sgl(lambda, 1.0, groups.clone()).unwrap(), &opts).unwrap();
        let lasso = fit(&d, tau, &PenaltySpec::lasso(lambda, groups.clone()).unwrap(), &opts).unwrap();
        worst_lasso = worst_lasso.max((sgl1.objective - lasso.objective).abs());

        let t = q([0.25, 0.5, 0.7][i % 3]);
        let free = fit(
            &d,
            t,
            &PenaltySpec::unpenalized(groups).unwrap(),
            &SolverOptions {
                intercept: true,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        let r = free.residuals(&d).unwrap();
        let tol = 1e-7 * d.y().amax().max(1.0);
        let below = r.iter().filter(|&&e| e < -tol).count() as f64;
        let zero = r.iter().filter(|&&e| e.abs() <= tol).count() as f64;
        let target = t.value() * d.n() as f64;
        balanced &= free.converged && below <= target + 1e-9 && target <= below + zero + 1e-9;
    }
    out.record(
        3,
        identical && worst_lasso <= 1e-8 && balanced,
        format!(
            "ASGL(gamma=0) bit-identical to SGL: {identical}; max |SGL(alpha=1) - LASSO| objective {worst_lasso:.2e} \
             (limit 1e-8); lambda=0 residual-sign balance: {balanced}"
        ),
    );
}

fn desk_options() -> ExperimentOptions {
    ExperimentOptions {
        grid: Grid {
            lambdas: LambdaGrid::Path {
                count: 20,
                min_ratio: 1e-3,
            },
            alphas: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            gamma1s: vec![0.5, 1.0, 2.0],
            gamma2s: vec![0.5, 1.0, 2.0],
            ..Grid::default()
        },
        ..ExperimentOptions::default()
    }
}

fn models(names: &[&str]) -> Vec<ModelConfig> {
    names.iter().map(|m| ModelConfig::new(m.parse().unwrap())).collect()
}

fn et(report: &asgl::simulation::ExperimentReport, label: &str) -> f64 {
    report.summary_for(label).unwrap().et.mean
}

fn summary_line(report: &asgl::simulation::ExperimentReport) -> String {
    report
        .summary
        .iter()
        .map(|s| format!("{} Et={:.3} TPR={:.3} ({} ok)", s.model, s.et.mean, s.tpr.mean, s.completed))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criterion_4(out: &mut Outcome) {
    let s = Scenario::preset(ScenarioName::Sim1P225).unwrap();
    let r = run_experiment(&s, &models(&["lasso", "sgl", "asgl-pls_d"]), 10, 1000, &desk_options()).unwrap();
    let (lasso, sgl, pls) = (et(&r, "LASSO"), et(&r, "SGL"), et(&r, "ASGL-pls_d"));
    let gap = 1.0 - pls / lasso;
    out.record(
        4,
        r.failures.is_empty() && pls < sgl && sgl < lasso && gap >= 0.20,
        format!("sim1 p=225, 10 reps: {}; ASGL-pls_d is {:.1}% below LASSO (need >= 20%)", summary_line(&r), 100.0 * gap),
    );
}

fn criterion_5(out: &mut Outcome) {
    let s = Scenario::preset(ScenarioName::Sim2P225).unwrap();
    let adaptive = ["asgl-pca_d", "asgl-pls_d", "al-sgl-pca_d", "al-sgl-pls_d"];
    let mut names = vec!["sgl"];
    names.extend(adaptive);
    let r = run_experiment(&s, &models(&names), 10, 2000, &desk_options()).unwrap();
    let min_tpr = r
        .summary
        .iter()
        .filter(|s| s.model != "SGL")
        .map(|s| s.tpr.mean)
        .fold(f64::INFINITY, f64::min);
    out.record(
        5,
        r.failures.is_empty() && et(&r, "ASGL-pca_d") < et(&r, "SGL") && min_tpr >= 0.98,
        format!("sim2 p=225, 10 reps: {}; min adaptive TPR {min_tpr:.3} (need >= 0.98)", summary_line(&r)),
    );
}

fn criterion_6(out: &mut Outcome) {
    let s = Scenario::preset(ScenarioName::Sim3Sparse).unwrap();
    let r = run_experiment(&s, &models(&["lasso", "asgl-pls_d", "asgl-unpenalized"]), 10, 3000, &desk_options()).unwrap();
    let (lasso, pls, unpen) = (et(&r, "LASSO"), et(&r, "ASGL-pls_d"), et(&r, "ASGL-unpenalized"));
    let diff = (pls - unpen).abs();
    out.record(
        6,
        r.failures.is_empty() && diff <= 0.02 && pls < lasso && unpen < lasso,
        format!("sim3 sparse, 10 reps: {}; |pls_d - unpenalized| = {diff:.4} (limit 0.02)", summary_line(&r)),
    );
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_7(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut variance = true;
    for (n, p) in [(30, 12), (12, 30), (20, 20)] {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let model = pca(&x).unwrap();
        let total: f64 = (0..p)
            .map(|j| {
                let c = x.column(j);
                let m = c.mean();
                c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)
            })
            .sum();
        let sum: f64 = model.eigenvalues().iter().sum();
        variance &= (sum - total).abs() <= 1e-8 * total.max(1.0);
    }

    let s = Scenario {
        name: ScenarioName::Custom,
        k: 3,
        group_size: 3,
        beta_true: vec![1.0; 9],
        rho_within: 0.5,
        noise_df: 3.0,
        sizes: asgl::SplitSpec {
            n_train: 1000,
            n_val: 500,
            n_test: 500,
            seed: 0,
        },
    };
    let (d, _) = generate(&s, 11).unwrap();
    let band = 4.0 / (d.n() as f64).sqrt();
    let cols: Vec<Vec<f64>> = (0..9).map(|j| d.x().column(j).iter().copied().collect()).collect();
    let mut structure = true;
    for a in 0..9 {
        for b in a + 1..9 {
            let target = if a / 3 == b / 3 { 0.5 } else { 0.0 };
            structure &= (corr(&cols[a], &cols[b]) - target).abs() <= band;
        }
    }

    let m = metrics(&[0.5, 0.0, 1.0, 1.0], &[1.0, 0.0, 2.0, 0.0], 0.0, 1e-6).unwrap();
    let identities = (m.dist - 1.5).abs() < 1e-12 && m.tpr == 1.0 && m.tnr == 0.5 && m.csr == 0.75;

    let (d2, _) = generate(&s, 11).unwrap();
    let deterministic = d.x() == d2.x() && d.y() == d2.y();
    out.record(
        7,
        variance && structure && identities && deterministic,
        format!(
            "variance conservation {variance}, correlation structure {structure}, metric identities {identities}, \
             determinism {deterministic} (module suites run alongside in cargo test)"
        ),
    );
}

fn criterion_8(out: &mut Outcome) {
    let x = factor_matrix(120, 500, 10, 0.5, 8);
    let g = pca_cluster(&x).unwrap();
    let mut seen = vec![0usize; 500];
    for members in g.iter() {
        for &j in members {
            seen[j] += 1;
        }
    }
    let once = seen.iter().all(|&c| c == 1);
    let nonempty = g.iter().all(|m| !m.is_empty());
    let oracle = g.group_of() == covariance_argmax_groups(&x).as_slice();
    out.record(
        8,
        once && nonempty && g.k() <= 120 && oracle,
        format!(
            "120x500 ten-factor fixture: {} groups (limit 120), each variable once {once}, no empty groups {nonempty}, \
             matches covariance eigenvector oracle {oracle}",
            g.k()
        ),
    );
}

fn criterion_9(out: &mut Outcome) {
    let dir = tempfile::TempDir::new().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"seed = 42
[grid]
alphas = [0.25, 0.75]
gamma1s = [1.0]
gamma2s = [1.0]
lambdas = { count = 6, min_ratio = 0.01 }
[simulate]
scenario = "sim1_p225"
repetitions = 2
models = ["lasso", "sgl", "asgl-pca_d"]
"#,
    )
    .unwrap();
    let run = |name: &str| {
        Command::new(env!("CARGO_BIN_EXE_asgl"))
            .args(["simulate", "--config", "run.toml", "--out", name])
            .current_dir(dir.path())
            .output()
            .unwrap()
            .status
            .success()
    };
    let ran = run("a") && run("b");
    let mut differing = Vec::new();
    let mut files = 0;
    if ran {
        for entry in fs::read_dir(dir.path().join("a")).unwrap() {
            let name = entry.unwrap().file_name();
            files += 1;
            if fs::read(dir.path().join("a").join(&name)).ok() != fs::read(dir.path().join("b").join(&name)).ok() {
                differing.push(name.to_string_lossy().into_owned());
            }
        }
    }
    out.record(
        9,
        ran && files > 0 && differing.is_empty(),
        format!("two simulate runs with seed 42: {files} artifacts compared, differing {differing:?}"),
    );
}

#[test]
fn acceptance() {
    let mut out = Outcome { failed: Vec::new() };
    writeln!(std::io::stdout()).unwrap();
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    criterion_9(&mut out);
    criterion_4(&mut out);
    criterion_5(&mut out);
    criterion_6(&mut out);
    assert!(out.failed.is_empty(), "failed criteria: {:?}", out.failed);
}
