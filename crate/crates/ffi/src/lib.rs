//! C ABI for the `asgl` library.
//!
//! Objects are opaque heap handles created by `asgl_*_new`-style functions and released with
//! the matching `asgl_*_free`. Every fallible call returns an [`AsglStatus`]; on failure the
//! message is available from [`asgl_last_error_message`] on the same thread.
//!
//! Matrices are passed row-major. Group indices are 0-based.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use asgl::data::{load_csv, ResponseColumn};
use asgl::genomics::pca_cluster;
use asgl::weights::{adaptive_weights, SchemeKind, WeightScheme};
use asgl::{Dataset, Error, FitResult, GroupStructure, PenaltySpec, QuantileLevel, SolverOptions};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsglStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    /// The computation ran but could not produce a result (e.g. weights that need a
    /// converged auxiliary fit).
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsglScheme {
    PcaD = 0,
    Pca1 = 1,
    PlsD = 2,
    Pls1 = 3,
    Unpenalized = 4,
}

impl From<AsglScheme> for SchemeKind {
    fn from(s: AsglScheme) -> Self {
        match s {
            AsglScheme::PcaD => SchemeKind::PcaD,
            AsglScheme::Pca1 => SchemeKind::Pca1,
            AsglScheme::PlsD => SchemeKind::PlsD,
            AsglScheme::Pls1 => SchemeKind::Pls1,
            AsglScheme::Unpenalized => SchemeKind::Unpenalized,
        }
    }
}

/// Solver settings; obtain defaults from [`asgl_solver_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AsglSolverOptions {
    pub max_iter: usize,
    pub tol_kkt: f64,
    pub rho: f64,
    pub adaptive_rho: bool,
    pub intercept: bool,
}

impl From<AsglSolverOptions> for SolverOptions {
    fn from(o: AsglSolverOptions) -> Self {
        SolverOptions {
            max_iter: o.max_iter,
            tol_kkt: o.tol_kkt,
            rho: o.rho,
            adaptive_rho: o.adaptive_rho,
            intercept: o.intercept,
            ..SolverOptions::default()
        }
    }
}

/// Opaque dataset handle.
pub struct AsglDataset(Dataset);

/// Opaque group structure handle.
pub struct AsglGroups(GroupStructure);

/// Opaque fit result handle.
pub struct AsglFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AsglStatus {
    match e {
        Error::DimensionMismatch { .. } => AsglStatus::DimensionMismatch,
        Error::Io { .. } => AsglStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::MissingResponse(_) => AsglStatus::Parse,
        Error::InvalidParameter { .. }
        | Error::NonFinite { .. }
        | Error::ConstantColumn(_)
        | Error::SplitTooLarge { .. }
        | Error::Infeasible { .. } => AsglStatus::InvalidArgument,
        Error::ZeroCovariance | Error::NoSurvivors { .. } | Error::NotConverged { .. } | Error::AllFitsFailed(_) => {
            AsglStatus::Runtime
        }
    }
}

struct Fail(AsglStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AsglStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, recording failures and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AsglStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AsglStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AsglStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn tau_of(tau: f64) -> Result<QuantileLevel, Fail> {
    Ok(QuantileLevel::new(tau)?)
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn asgl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn asgl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn asgl_solver_options_default() -> AsglSolverOptions {
    let d = SolverOptions::default();
    AsglSolverOptions {
        max_iter: d.max_iter,
        tol_kkt: d.tol_kkt,
        rho: d.rho,
        adaptive_rho: d.adaptive_rho,
        intercept: d.intercept,
    }
}

/// Copies an `n x p` row-major matrix and a length-`n` response.
#[no_mangle]
pub unsafe extern "C" fn asgl_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    out: *mut *mut AsglDataset,
) -> AsglStatus {
    guard(|| {
        let len = n.checked_mul(p).ok_or_else(|| Fail(AsglStatus::InvalidArgument, "n * p overflows".into()))?;
        let xs = slice(x, len, "x")?;
        let ys = slice(y, n, "y")?;
        let d = Dataset::new(DMatrix::from_row_slice(n, p, xs), DVector::from_column_slice(ys))?;
        put(out, AsglDataset(d))
    })
}

/// Loads a numeric CSV; `response` names the response column (null means `y`).
#[no_mangle]
pub unsafe extern "C" fn asgl_dataset_load_csv(
    path: *const c_char,
    has_header: bool,
    response: *const c_char,
    out: *mut *mut AsglDataset,
) -> AsglStatus {
    guard(|| {
        let path = CStr::from_ptr(deref(path, "path")?).to_string_lossy().into_owned();
        let response = if response.is_null() {
            "y".to_string()
        } else {
            CStr::from_ptr(response).to_string_lossy().into_owned()
        };
        let d = load_csv(Path::new(&path), has_header, &ResponseColumn::Name(response))?;
        put(out, AsglDataset(d))
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_dataset_n(d: *const AsglDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn asgl_dataset_p(d: *const AsglDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.p())
}

#[no_mangle]
pub unsafe extern "C" fn asgl_dataset_free(d: *mut AsglDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Groups from a 0-based group index per covariate; indices must cover `0..k`.
#[no_mangle]
pub unsafe extern "C" fn asgl_groups_new(group_of: *const usize, p: usize, out: *mut *mut AsglGroups) -> AsglStatus {
    guard(|| {
        let g = slice(group_of, p, "group_of")?;
        put(out, AsglGroups(GroupStructure::new(g.to_vec())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_groups_singletons(p: usize, out: *mut *mut AsglGroups) -> AsglStatus {
    guard(|| put(out, AsglGroups(GroupStructure::singletons(p)?)))
}

/// Groups each covariate by the principal component of largest absolute loading.
#[no_mangle]
pub unsafe extern "C" fn asgl_groups_pca_cluster(d: *const AsglDataset, out: *mut *mut AsglGroups) -> AsglStatus {
    guard(|| {
        let d = deref(d, "dataset")?;
        put(out, AsglGroups(pca_cluster(d.0.x())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_groups_k(g: *const AsglGroups) -> usize {
    g.as_ref().map_or(0, |g| g.0.k())
}

/// Writes the 0-based group of each covariate into `out` (length `p`).
#[no_mangle]
pub unsafe extern "C" fn asgl_groups_assignment(g: *const AsglGroups, out: *mut usize, len: usize) -> AsglStatus {
    guard(|| {
        let g = deref(g, "groups")?;
        if len != g.0.p() {
            return Err(Error::DimensionMismatch {
                what: "assignment buffer",
                expected: g.0.p(),
                got: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(g.0.group_of());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_groups_free(g: *mut AsglGroups) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Adaptive weights for `scheme`: writes `p` variable weights into `w_out` and `k` group
/// weights into `v_out` (`w_len` and `v_len` must equal `p` and `k`).
#[no_mangle]
pub unsafe extern "C" fn asgl_adaptive_weights(
    d: *const AsglDataset,
    g: *const AsglGroups,
    tau: f64,
    scheme: AsglScheme,
    gamma1: f64,
    gamma2: f64,
    opts: *const AsglSolverOptions,
    w_out: *mut f64,
    w_len: usize,
    v_out: *mut f64,
    v_len: usize,
) -> AsglStatus {
    guard(|| {
        let d = deref(d, "dataset")?;
        let g = deref(g, "groups")?;
        if w_len != g.0.p() || v_len != g.0.k() {
            return Err(Error::DimensionMismatch {
                what: "weight buffers",
                expected: g.0.p() + g.0.k(),
                got: w_len + v_len,
            }
            .into());
        }
        let opts: SolverOptions = opts.as_ref().copied().map_or_else(SolverOptions::default, Into::into);
        let scheme = WeightScheme::new(scheme.into(), gamma1, gamma2);
        let (w, v) = adaptive_weights(&d.0, tau_of(tau)?, &g.0, &scheme, &opts)?;
        if w_out.is_null() || v_out.is_null() {
            return Err(null("w_out/v_out"));
        }
        std::slice::from_raw_parts_mut(w_out, w.len()).copy_from_slice(&w);
        std::slice::from_raw_parts_mut(v_out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// Smallest lambda with an all-zero solution; null weights mean unit weights.
#[no_mangle]
pub unsafe extern "C" fn asgl_lambda_max(
    d: *const AsglDataset,
    g: *const AsglGroups,
    tau: f64,
    w: *const f64,
    v: *const f64,
    intercept: bool,
    out: *mut f64,
) -> AsglStatus {
    guard(|| {
        let d = deref(d, "dataset")?;
        let g = deref(g, "groups")?;
        let (w, v) = weights_or_unit(w, v, &g.0)?;
        let lam = asgl::lambda_max(&d.0, tau_of(tau)?, &g.0, &w, &v, intercept)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lam;
        Ok(())
    })
}

unsafe fn weights_or_unit(w: *const f64, v: *const f64, g: &GroupStructure) -> Result<(Vec<f64>, Vec<f64>), Fail> {
    let w = if w.is_null() { vec![1.0; g.p()] } else { slice(w, g.p(), "w")?.to_vec() };
    let v = if v.is_null() { vec![1.0; g.k()] } else { slice(v, g.k(), "v")?.to_vec() };
    Ok((w, v))
}

/// Fits the weighted sparse group lasso quantile regression. `w` (length `p`) and `v`
/// (length `k`) may be null for unit weights; `opts` may be null for defaults. A fit that
/// stops at the iteration limit still succeeds; check [`asgl_fit_converged`].
#[no_mangle]
pub unsafe extern "C" fn asgl_fit(
    d: *const AsglDataset,
    g: *const AsglGroups,
    tau: f64,
    lambda: f64,
    alpha: f64,
    w: *const f64,
    v: *const f64,
    opts: *const AsglSolverOptions,
    out: *mut *mut AsglFit,
) -> AsglStatus {
    guard(|| {
        let d = deref(d, "dataset")?;
        let g = deref(g, "groups")?;
        let (w, v) = weights_or_unit(w, v, &g.0)?;
        let spec = PenaltySpec::new(lambda, alpha, w, v, g.0.clone())?;
        let opts: SolverOptions = opts.as_ref().copied().map_or_else(SolverOptions::default, Into::into);
        let res = asgl::fit(&d.0, tau_of(tau)?, &spec, &opts)?;
        put(out, AsglFit(res))
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_p(f: *const AsglFit) -> usize {
    f.as_ref().map_or(0, |f| f.0.beta_hat.len())
}

/// Copies the `p` coefficients into `out`.
#[no_mangle]
pub unsafe extern "C" fn asgl_fit_coefficients(f: *const AsglFit, out: *mut f64, len: usize) -> AsglStatus {
    guard(|| {
        let f = deref(f, "fit")?;
        if len != f.0.beta_hat.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient buffer",
                expected: f.0.beta_hat.len(),
                got: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&f.0.beta_hat);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_intercept(f: *const AsglFit) -> f64 {
    f.as_ref().map_or(f64::NAN, |f| f.0.intercept)
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_objective(f: *const AsglFit) -> f64 {
    f.as_ref().map_or(f64::NAN, |f| f.0.objective)
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_kkt_residual(f: *const AsglFit) -> f64 {
    f.as_ref().map_or(f64::NAN, |f| f.0.kkt_residual)
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_iterations(f: *const AsglFit) -> usize {
    f.as_ref().map_or(0, |f| f.0.iterations)
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_converged(f: *const AsglFit) -> bool {
    f.as_ref().is_some_and(|f| f.0.converged)
}

#[no_mangle]
pub unsafe extern "C" fn asgl_fit_free(f: *mut AsglFit) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}
