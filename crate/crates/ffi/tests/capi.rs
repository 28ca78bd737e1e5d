use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use asgl_ffi::*;

fn toy() -> (Vec<f64>, Vec<f64>, usize, usize) {
    let (n, p) = (30, 4);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..p).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect();
        y.push(2.0 * row[0] - row[2] + ((i % 5) as f64 - 2.0) * 0.1);
        x.extend(row);
    }
    (x, y, n, p)
}

fn last_error() -> String {
    let p = asgl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_round_trip_matches_library() {
    let (x, y, n, p) = toy();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(asgl_dataset_new(x.as_ptr(), n, p, y.as_ptr(), &mut d), AsglStatus::Ok);
        assert_eq!((asgl_dataset_n(d), asgl_dataset_p(d)), (n, p));
        let mut g = ptr::null_mut();
        let group_of = [0usize, 0, 1, 1];
        assert_eq!(asgl_groups_new(group_of.as_ptr(), p, &mut g), AsglStatus::Ok);
        assert_eq!(asgl_groups_k(g), 2);

        let mut lmax = 0.0;
        assert_eq!(asgl_lambda_max(d, g, 0.5, ptr::null(), ptr::null(), false, &mut lmax), AsglStatus::Ok);
        assert!(lmax > 0.0);

        let opts = asgl_solver_options_default();
        let mut f = ptr::null_mut();
        assert_eq!(
            asgl_fit(d, g, 0.5, 0.1 * lmax, 0.5, ptr::null(), ptr::null(), &opts, &mut f),
            AsglStatus::Ok
        );
        assert!(asgl_fit_converged(f));
        assert!(asgl_fit_kkt_residual(f) <= 1e-5);
        let mut beta = vec![0.0; p];
        assert_eq!(asgl_fit_coefficients(f, beta.as_mut_ptr(), p), AsglStatus::Ok);

        let ds = asgl::Dataset::new(
            nalgebra::DMatrix::from_row_slice(n, p, &x),
            nalgebra::DVector::from_column_slice(&y),
        )
        .unwrap();
        let groups = asgl::GroupStructure::new(group_of.to_vec()).unwrap();
        let spec = asgl::PenaltySpec::sgl(0.1 * lmax, 0.5, groups).unwrap();
        let direct = asgl::fit(&ds, asgl::QuantileLevel::MEDIAN, &spec, &Default::default()).unwrap();
        assert_eq!(beta, direct.beta_hat);
        assert_eq!(asgl_fit_objective(f), direct.objective);

        // at lambda_max everything is zero
        let mut f0 = ptr::null_mut();
        assert_eq!(asgl_fit(d, g, 0.5, lmax, 0.5, ptr::null(), ptr::null(), ptr::null(), &mut f0), AsglStatus::Ok);
        assert_eq!(asgl_fit_coefficients(f0, beta.as_mut_ptr(), p), AsglStatus::Ok);
        assert!(beta.iter().all(|b| b.abs() < 1e-8));

        asgl_fit_free(f);
        asgl_fit_free(f0);
        asgl_groups_free(g);
        asgl_dataset_free(d);
    }
}

#[test]
fn adaptive_weights_fill_buffers() {
    let (x, y, n, p) = toy();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(asgl_dataset_new(x.as_ptr(), n, p, y.as_ptr(), &mut d), AsglStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(asgl_groups_singletons(p, &mut g), AsglStatus::Ok);
        let (mut w, mut v) = (vec![0.0; p], vec![0.0; p]);
        let s = asgl_adaptive_weights(d, g, 0.5, AsglScheme::Unpenalized, 1.0, 1.0, ptr::null(), w.as_mut_ptr(), p, v.as_mut_ptr(), p);
        assert_eq!(s, AsglStatus::Ok, "{}", last_error());
        assert!(w.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0));
        let s = asgl_adaptive_weights(d, g, 0.5, AsglScheme::Pca1, 1.0, 1.0, ptr::null(), w.as_mut_ptr(), p - 1, v.as_mut_ptr(), p);
        assert_eq!(s, AsglStatus::DimensionMismatch);
        asgl_groups_free(g);
        asgl_dataset_free(d);
    }
}

#[test]
fn errors_set_status_and_message() {
    let (x, y, n, p) = toy();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(asgl_dataset_new(ptr::null(), n, p, y.as_ptr(), &mut d), AsglStatus::NullPointer);
        assert!(last_error().contains("x"));
        assert_eq!(asgl_dataset_new(x.as_ptr(), n, p, y.as_ptr(), &mut d), AsglStatus::Ok);
        assert!(asgl_last_error_message().is_null());

        let mut g = ptr::null_mut();
        assert_eq!(asgl_groups_singletons(p, &mut g), AsglStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(asgl_fit(d, g, 1.5, 0.1, 0.5, ptr::null(), ptr::null(), ptr::null(), &mut f), AsglStatus::InvalidArgument);
        assert!(last_error().contains("tau"));
        assert_eq!(asgl_fit(d, g, 0.5, 0.1, 2.0, ptr::null(), ptr::null(), ptr::null(), &mut f), AsglStatus::InvalidArgument);
        assert!(f.is_null());

        let mut wrong = ptr::null_mut();
        assert_eq!(asgl_groups_singletons(p + 1, &mut wrong), AsglStatus::Ok);
        assert_eq!(asgl_fit(d, wrong, 0.5, 0.1, 0.5, ptr::null(), ptr::null(), ptr::null(), &mut f), AsglStatus::DimensionMismatch);

        let path = CString::new("/nonexistent/data.csv").unwrap();
        let mut d2 = ptr::null_mut();
        assert_eq!(asgl_dataset_load_csv(path.as_ptr(), true, ptr::null(), &mut d2), AsglStatus::Io);
        assert!(last_error().contains("/nonexistent/data.csv"));

        assert_eq!(asgl_fit_p(ptr::null()), 0);
        assert!(!asgl_fit_converged(ptr::null()));
        asgl_fit_free(ptr::null_mut());
        asgl_groups_free(wrong);
        asgl_groups_free(g);
        asgl_dataset_free(d);
    }
}

#[test]
fn pca_cluster_assigns_every_covariate() {
    let (x, y, n, p) = toy();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(asgl_dataset_new(x.as_ptr(), n, p, y.as_ptr(), &mut d), AsglStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(asgl_groups_pca_cluster(d, &mut g), AsglStatus::Ok);
        let mut a = vec![usize::MAX; p];
        assert_eq!(asgl_groups_assignment(g, a.as_mut_ptr(), p), AsglStatus::Ok);
        let k = asgl_groups_k(g);
        assert!(a.iter().all(|&j| j < k));
        asgl_groups_free(g);
        asgl_dataset_free(d);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(asgl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header compiles as C and as C++.
#[test]
fn header_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "asgl.h"
int use(void) {
    AsglSolverOptions o = asgl_solver_options_default();
    AsglDataset *d = 0;
    AsglStatus s = asgl_dataset_new(0, 0, 0, 0, &d);
    return (int)s + (int)o.max_iter + (int)ASGL_SCHEME_PLS_D;
}
"#,
    )
    .unwrap();
    for (compiler, extra) in [("cc", vec!["-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let out = Command::new(compiler)
            .args(&extra)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(dir.join("include"))
            .arg(&src)
            .output()
            .expect("C compiler available");
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
