mod common;

use asgl::genomics::{filter_variables, pca_cluster, preprocess, stability_analysis, PreprocessSpec, StabilityOptions};
use asgl::select::{Grid, LambdaGrid, ModelKind};
use asgl::simulation::ModelConfig;
use asgl::weights::SchemeKind;
use asgl::{Dataset, GroupStructure, SplitSpec};
use common::fixtures::{covariance_argmax_groups, factor_matrix, planted_expression};
use common::{q, random_dataset};

#[test]
fn planted_variables_are_exactly_the_correlated_survivors() {
    let (x, y) = planted_expression(120, 200, 50, 0.7, 1);
    let d = Dataset::new(x, y).unwrap();
    let trace = filter_variables(&d, &PreprocessSpec::default()).unwrap();
    assert_eq!(trace.variable.len(), 200);
    assert_eq!(trace.correlated, (0..50).collect::<Vec<_>>());

    // filters are order-stable: rerunning on the survivors keeps all of them
    let again = filter_variables(&d.select_columns(&trace.correlated), &PreprocessSpec::default()).unwrap();
    assert_eq!(again.correlated, (0..50).collect::<Vec<_>>());

    let (pre, kept) = preprocess(&d, &PreprocessSpec::default()).unwrap();
    assert_eq!(kept, trace.correlated);
    assert_eq!(pre.p(), 50);
    for j in 0..pre.p() {
        assert!(pre.x().column(j).mean().abs() < 1e-12);
    }
    assert!(pre.y().mean().abs() < 1e-12);
}

#[test]
fn constant_and_response_copies() {
    let (mut x, y) = planted_expression(60, 10, 0, 0.0, 2);
    x.column_mut(3).fill(9.0);
    x.column_mut(7).copy_from(&y.add_scalar(8.0));
    let d = Dataset::new(x, y).unwrap();
    let trace = filter_variables(&d, &PreprocessSpec::default()).unwrap();
    assert!(!trace.variable.contains(&3));
    assert!(trace.correlated.contains(&7));
}

#[test]
fn ten_factor_cluster_matches_covariance_oracle() {
    let x = factor_matrix(120, 500, 10, 0.5, 3);
    let g = pca_cluster(&x).unwrap();
    assert_eq!(g.p(), 500);
    assert!(g.k() <= 120);
    assert!(g.iter().all(|m| !m.is_empty()));
    assert_eq!(g.group_of(), covariance_argmax_groups(&x).as_slice());
}

fn quick_grid() -> Grid {
    Grid {
        lambdas: LambdaGrid::Path { count: 5, min_ratio: 0.05 },
        alphas: vec![0.5],
        gamma1s: vec![1.0],
        gamma2s: vec![1.0],
        ..Grid::default()
    }
}

fn split() -> SplitSpec {
    SplitSpec {
        n_train: 40,
        n_val: 20,
        n_test: 20,
        seed: 0,
    }
}

#[test]
fn one_repetition_gives_binary_probabilities() {
    let d = random_dataset(80, 9, 5);
    let groups = GroupStructure::contiguous(3, 3).unwrap();
    let models = [ModelConfig::new(ModelKind::Sgl), ModelConfig::new(ModelKind::Asgl(SchemeKind::PcaD))];
    let opts = StabilityOptions {
        grid: quick_grid(),
        ..StabilityOptions::default()
    };
    let r = stability_analysis(&d, &groups, &[q(0.3), q(0.7)], &models, 1, split(), 7, &opts).unwrap();
    assert_eq!(r.entries.len(), 4);
    for e in &r.entries {
        assert!(e.probability.iter().all(|&p| p == 0.0 || p == 1.0));
    }
}

#[test]
fn probabilities_are_exact_fractions_and_intersections_nest() {
    let d = random_dataset(80, 9, 6);
    let groups = GroupStructure::contiguous(3, 3).unwrap();
    let models = [ModelConfig::new(ModelKind::Lasso)];
    let opts = StabilityOptions {
        grid: quick_grid(),
        ..StabilityOptions::default()
    };
    let r = stability_analysis(&d, &groups, &[q(0.3), q(0.5)], &models, 4, split(), 1, &opts).unwrap();
    for e in &r.entries {
        assert_eq!(e.completed, 4);
        for (c, p) in e.counts.iter().zip(&e.probability) {
            assert_eq!(*p, *c as f64 / 4.0);
        }
    }
    for inter in &r.intersections {
        for e in r.entries.iter().filter(|e| e.model == inter.model) {
            assert!(inter.variables.iter().all(|j| e.above_threshold.contains(j)));
        }
    }
}

#[test]
fn null_model_selects_nothing() {
    let d = random_dataset(80, 9, 8);
    let groups = GroupStructure::contiguous(3, 3).unwrap();
    let models = [ModelConfig::null(ModelKind::Sgl)];
    let opts = StabilityOptions {
        grid: quick_grid(),
        ..StabilityOptions::default()
    };
    let r = stability_analysis(&d, &groups, &[q(0.5)], &models, 3, split(), 2, &opts).unwrap();
    assert!(r.entries[0].probability.iter().all(|&p| p == 0.0));
    assert!(r.intersections[0].variables.is_empty());
}
