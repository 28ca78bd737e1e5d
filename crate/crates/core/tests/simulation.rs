use asgl::data::SplitSpec;
use asgl::select::{Grid, LambdaGrid, ModelKind};
use asgl::simulation::{generate, generate_split, metrics, run_experiment, ExperimentOptions, ModelConfig, Scenario, ScenarioName};
use asgl::weights::SchemeKind;

fn small(rho: f64, n: usize) -> Scenario {
    Scenario {
        name: ScenarioName::Custom,
        k: 3,
        group_size: 4,
        beta_true: vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5],
        rho_within: rho,
        noise_df: 3.0,
        sizes: SplitSpec {
            n_train: n / 2,
            n_val: n / 4,
            n_test: n / 4,
            seed: 0,
        },
    }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn check_correlations(s: &Scenario, seed: u64) {
    let (d, _) = generate(s, seed).unwrap();
    let n = d.n();
    let tol = 4.0 / (n as f64).sqrt();
    let cols: Vec<Vec<f64>> = (0..d.p()).map(|j| d.x().column(j).iter().copied().collect()).collect();
    for a in 0..d.p() {
        for b in a + 1..d.p() {
            let target = if a / s.group_size == b / s.group_size { s.rho_within } else { 0.0 };
            let r = corr(&cols[a], &cols[b]);
            assert!((r - target).abs() <= tol, "columns {a},{b}: {r} vs {target}");
        }
    }
}

#[test]
fn block_correlation_structure() {
    check_correlations(&small(0.5, 2000), 3);
}

#[test]
fn independent_columns_when_rho_is_zero() {
    check_correlations(&small(0.0, 2000), 4);
}

#[test]
fn paper_presets() {
    let s = Scenario::preset(ScenarioName::Sim1P225).unwrap();
    let nz: Vec<f64> = s.beta_true.iter().copied().filter(|b| *b != 0.0).collect();
    assert_eq!((s.p(), s.k, nz.len()), (225, 15, 56));
    assert!(s.beta_true[7 * 15..].iter().all(|b| *b == 0.0));
    assert!(nz.iter().all(|b| (1.0..=8.0).contains(b) && b.fract() == 0.0));

    let s = Scenario::preset(ScenarioName::Sim2P625).unwrap();
    assert_eq!(s.beta_true.iter().filter(|b| **b != 0.0).count(), 75);
    assert!(s.beta_true[..75].iter().all(|b| *b != 0.0));

    for name in [ScenarioName::Sim3Sparse, ScenarioName::Sim3Dense] {
        let s = Scenario::preset(name).unwrap();
        assert_eq!((s.p(), s.sizes.n_train), (100, 200));
    }
}

#[test]
fn generation_is_deterministic() {
    let s = small(0.5, 80);
    let (a, _) = generate(&s, 42).unwrap();
    let (b, _) = generate(&s, 42).unwrap();
    let (c, _) = generate(&s, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let (tr, va, te, _) = generate_split(&s, 42).unwrap();
    assert_eq!((tr.n(), va.n(), te.n()), (40, 20, 20));
    assert_eq!(tr.x().row(0), a.x().row(0));
    assert_eq!(te.x().row(19), a.x().row(79));
}

#[test]
fn metric_examples() {
    let m = metrics(&[0.5, 0.0, 1.0, 1.0], &[1.0, 0.0, 2.0, 0.0], 0.3, 1e-6).unwrap();
    assert!((m.dist - 1.5).abs() < 1e-15);
    assert_eq!((m.tpr, m.tnr, m.csr, m.et), (1.0, 0.5, 0.75, 0.3));
    let null = metrics(&[0.0; 5], &[1.0, 0.0, 2.0, 0.0, 0.0], 0.0, 1e-6).unwrap();
    assert_eq!((null.tpr, null.tnr, null.csr), (0.0, 1.0, 0.6));
    assert!(metrics(&[0.0; 2], &[0.0; 3], 0.0, 1e-6).is_err());
}

fn quick_opts() -> ExperimentOptions {
    ExperimentOptions {
        grid: Grid {
            lambdas: LambdaGrid::Path { count: 5, min_ratio: 0.01 },
            alphas: vec![0.5],
            gamma1s: vec![1.0],
            gamma2s: vec![1.0],
            ..Grid::default()
        },
        ..ExperimentOptions::default()
    }
}

#[test]
fn summaries_are_exact_means_and_models_share_data() {
    let s = small(0.5, 120);
    let models = vec![
        ModelConfig::new(ModelKind::Sgl),
        ModelConfig::new(ModelKind::Asgl(SchemeKind::Pca1)),
        ModelConfig::null(ModelKind::Lasso),
    ];
    let report = run_experiment(&s, &models, 3, 100, &quick_opts()).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows.len(), 9);
    for r in &report.rows {
        assert_eq!(r.seed, 100 + r.repetition as u64);
    }
    for m in &models {
        let label = m.label();
        let rows: Vec<_> = report.rows.iter().filter(|r| r.model == label).collect();
        let sum = report.summary_for(&label).unwrap();
        assert_eq!(sum.completed, 3);
        let mean = rows.iter().map(|r| r.metrics.et).sum::<f64>() / rows.len() as f64;
        assert_eq!(sum.et.mean, mean);
        let mean = rows.iter().map(|r| r.metrics.dist).sum::<f64>() / rows.len() as f64;
        assert_eq!(sum.dist.mean, mean);
    }
    let null = report.summary_for("LASSO-null").unwrap();
    assert_eq!((null.tpr.mean, null.tnr.mean), (0.0, 1.0));
}

#[test]
fn single_repetition_has_zero_sd() {
    let s = small(0.5, 120);
    let report = run_experiment(&s, &[ModelConfig::new(ModelKind::Lasso)], 1, 5, &quick_opts()).unwrap();
    let sum = &report.summary[0];
    let row = &report.rows[0];
    assert_eq!(sum.et.mean, row.metrics.et);
    assert_eq!(sum.tpr.mean, row.metrics.tpr);
    assert_eq!((sum.et.sd, sum.dist.sd, sum.csr.sd), (0.0, 0.0, 0.0));
}

#[test]
fn experiments_are_reproducible() {
    let s = small(0.5, 120);
    let models = [ModelConfig::new(ModelKind::AlSgl(SchemeKind::PlsD))];
    let a = run_experiment(&s, &models, 2, 9, &quick_opts()).unwrap();
    let b = run_experiment(&s, &models, 2, 9, &quick_opts()).unwrap();
    assert_eq!(a, b);
}
