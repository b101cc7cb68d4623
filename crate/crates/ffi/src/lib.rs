//! C ABI for `convres`.
//!
//! Problems and reports are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`ConvresStatus`]; the message of the last failure on the calling thread is
//! available from [`convres_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use convres::catalog;
use convres::problem::{parse_problem, serialize_problem, Problem};
use convres::restriction::{NormKind, Radius, UncertaintyModel};
use convres::scrs::{self, RetrievalMode, ScrsOptions, SolveReport, Termination};
use convres::Error;
use nalgebra::DVector;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvresStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    DimensionMismatch = 10,
    InvalidBasis = 11,
    SingularJacobian = 12,
    EmptyBox = 13,
    UnsupportedUncertaintyForm = 14,
    NegativeRadius = 15,
    InvalidUncertainty = 16,
    InfiniteMargin = 17,
    RetrievalFailed = 18,
    SubproblemFailed = 19,
    InvalidProgram = 20,
    InvalidOption = 21,
    ParseError = 22,
    ValidationError = 23,
    UnknownCatalog = 24,
    IoError = 25,
    Panic = 99,
}

impl From<&Error> for ConvresStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => ConvresStatus::DimensionMismatch,
            Error::InvalidBasis { .. } => ConvresStatus::InvalidBasis,
            Error::SingularJacobian { .. } => ConvresStatus::SingularJacobian,
            Error::EmptyBox { .. } => ConvresStatus::EmptyBox,
            Error::UnsupportedUncertaintyForm { .. } => ConvresStatus::UnsupportedUncertaintyForm,
            Error::NegativeRadius(_) => ConvresStatus::NegativeRadius,
            Error::InvalidUncertainty(_) => ConvresStatus::InvalidUncertainty,
            Error::InfiniteMargin => ConvresStatus::InfiniteMargin,
            Error::RetrievalFailed { .. } => ConvresStatus::RetrievalFailed,
            Error::Subproblem(_) => ConvresStatus::SubproblemFailed,
            Error::InvalidProgram(_) => ConvresStatus::InvalidProgram,
            Error::InvalidOption(_) => ConvresStatus::InvalidOption,
            Error::Parse { .. } => ConvresStatus::ParseError,
            Error::Validation(_) => ConvresStatus::ValidationError,
            Error::UnknownCatalog(_) => ConvresStatus::UnknownCatalog,
            Error::Io(_) => ConvresStatus::IoError,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvresNorm {
    /// Keep the norm stored in the problem.
    Problem = 0,
    Two = 1,
    /// Infinity norm with tabulated support coefficients.
    InfTable = 2,
    /// Infinity norm with the exact one-norm support.
    InfExact = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvresTermination {
    Converged = 0,
    MaxOuter = 1,
    SubproblemFailed = 2,
    RetrievalFailed = 3,
    SingularAtLimit = 4,
}

/// Solver settings. Start from [`convres_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvresOptions {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub max_outer: u32,
    /// Newton retrieval instead of the Picard chord.
    pub newton: bool,
    /// Additive uncertainty radius; negative keeps the problem's uncertainty.
    pub gamma: f64,
    pub norm: ConvresNorm,
}

/// Opaque problem handle.
pub struct ConvresProblem(Problem);

/// Opaque solve report handle.
pub struct ConvresReport(SolveReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> ConvresStatus {
    set_error(&e.to_string());
    ConvresStatus::from(&e)
}

fn guard(f: impl FnOnce() -> ConvresStatus) -> ConvresStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            ConvresStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, ConvresStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(ConvresStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        ConvresStatus::InvalidUtf8
    })
}

fn null_arg(what: &str) -> ConvresStatus {
    set_error(&format!("null {what}"));
    ConvresStatus::NullPointer
}

fn norm_kind(n: ConvresNorm) -> Option<NormKind> {
    match n {
        ConvresNorm::Problem => None,
        ConvresNorm::Two => Some(NormKind::Two),
        ConvresNorm::InfTable => Some(NormKind::InfTable),
        ConvresNorm::InfExact => Some(NormKind::InfExact),
    }
}

unsafe fn write_vec(v: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> ConvresStatus {
    if !written.is_null() {
        *written = v.len();
    }
    if len < v.len() {
        set_error(&format!("buffer holds {len} values, {} needed", v.len()));
        return ConvresStatus::BufferTooSmall;
    }
    if buf.is_null() {
        return null_arg("output buffer");
    }
    ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
    ConvresStatus::Ok
}

unsafe fn write_string(s: String, out: *mut *mut c_char) -> ConvresStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            ConvresStatus::Ok
        }
        Err(_) => fail(Error::Io("output contains a NUL byte".into())),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn convres_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn convres_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn convres_options_default() -> ConvresOptions {
    let d = ScrsOptions::default();
    ConvresOptions {
        eps1: d.eps1,
        eps2: d.eps2,
        eps3: d.eps3,
        max_outer: d.max_outer as u32,
        newton: false,
        gamma: -1.0,
        norm: ConvresNorm::Problem,
    }
}

/// Parse a problem from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_problem_from_toml(text: *const c_char, out: *mut *mut ConvresProblem) -> ConvresStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("output handle");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_problem(text) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ConvresProblem(p)));
                ConvresStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a built-in problem such as `park-poly` or `poly-chain(10,2)`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_problem_from_catalog(
    name: *const c_char,
    out: *mut *mut ConvresProblem,
) -> ConvresStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("output handle");
        }
        let name = match read_str(name) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match catalog::get(name) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ConvresProblem(p)));
                ConvresStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `problem` must come from a `convres_problem_from_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn convres_problem_free(problem: *mut ConvresProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// State, control, uncertainty and inequality counts.
///
/// # Safety
/// `problem` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn convres_problem_dims(
    problem: *const ConvresProblem,
    n: *mut usize,
    m: *mut usize,
    r: *mut usize,
    s: *mut usize,
) -> ConvresStatus {
    let Some(p) = problem.as_ref() else {
        return null_arg("problem");
    };
    let d = p.0.system.dims();
    for (ptr, v) in [(n, d.n), (m, d.m), (r, d.r), (s, d.s)] {
        if !ptr.is_null() {
            *ptr = v;
        }
    }
    ConvresStatus::Ok
}

/// Serialize a problem to TOML. Release the string with [`convres_string_free`].
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_problem_to_toml(problem: *const ConvresProblem, out: *mut *mut c_char) -> ConvresStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null_arg("problem");
        };
        if out.is_null() {
            return null_arg("output string");
        }
        match serialize_problem(&p.0) {
            Ok(s) => write_string(s, out),
            Err(e) => fail(e),
        }
    })
}

/// Run the sequential convex restriction. `options` may be NULL for defaults.
///
/// # Safety
/// `problem` must be a live handle, `options` NULL or valid, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_solve(
    problem: *const ConvresProblem,
    options: *const ConvresOptions,
    out: *mut *mut ConvresReport,
) -> ConvresStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null_arg("problem");
        };
        if out.is_null() {
            return null_arg("output handle");
        }
        let o = options.as_ref().copied().unwrap_or_else(|| convres_options_default());
        let mut p = p.0.clone();
        let norm = norm_kind(o.norm);
        if o.gamma >= 0.0 {
            let norm = norm.unwrap_or(match p.uncertainty {
                UncertaintyModel::Additive { norm, .. } => norm,
                _ => NormKind::Two,
            });
            p.uncertainty = UncertaintyModel::Additive {
                norm,
                radius: Radius::Fixed(o.gamma),
            };
        } else if let (Some(n), UncertaintyModel::Additive { radius, .. }) = (norm, &p.uncertainty) {
            p.uncertainty = UncertaintyModel::Additive { norm: n, radius: *radius };
        }
        let opts = ScrsOptions {
            eps1: o.eps1,
            eps2: o.eps2,
            eps3: o.eps3,
            max_outer: o.max_outer as usize,
            retrieval: if o.newton { RetrievalMode::Newton } else { RetrievalMode::Picard },
            ..ScrsOptions::default()
        };
        match scrs::run_scrs(&p.system, &p.nominal, &p.uncertainty, &p.objective, &opts) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(ConvresReport(r)));
                ConvresStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `report` must come from [`convres_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn convres_report_free(report: *mut ConvresReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_report_termination(report: *const ConvresReport) -> ConvresTermination {
    match (*report).0.termination {
        Termination::Converged => ConvresTermination::Converged,
        Termination::MaxOuter => ConvresTermination::MaxOuter,
        Termination::SubproblemFailed => ConvresTermination::SubproblemFailed,
        Termination::RetrievalFailed => ConvresTermination::RetrievalFailed,
        Termination::SingularAtLimit => ConvresTermination::SingularAtLimit,
    }
}

/// Outer iterations taken, not counting the start point.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_report_iterations(report: *const ConvresReport) -> usize {
    (*report).0.iterates.len() - 1
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_report_objective(report: *const ConvresReport) -> f64 {
    (*report).0.final_objective()
}

/// Copy the final control vector into `buf`. `written` receives the length
/// even when the buffer is too small.
///
/// # Safety
/// `report` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn convres_report_final_u(
    report: *const ConvresReport,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> ConvresStatus {
    let Some(r) = report.as_ref() else {
        return null_arg("report");
    };
    write_vec(&r.0.last().u, buf, len, written)
}

/// Copy the final state vector into `buf`.
///
/// # Safety
/// As for [`convres_report_final_u`].
#[no_mangle]
pub unsafe extern "C" fn convres_report_final_x(
    report: *const ConvresReport,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> ConvresStatus {
    let Some(r) = report.as_ref() else {
        return null_arg("report");
    };
    write_vec(&r.0.last().x, buf, len, written)
}

/// Full report as JSON. Release the string with [`convres_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_report_json(report: *const ConvresReport, out: *mut *mut c_char) -> ConvresStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return null_arg("report");
        };
        if out.is_null() {
            return null_arg("output string");
        }
        match serde_json::to_string(&r.0) {
            Ok(s) => write_string(s, out),
            Err(e) => fail(Error::Io(e.to_string())),
        }
    })
}

/// Largest certified radius at the problem's nominal point. Writes infinity
/// and returns `InfiniteMargin` when the uncertainty never enters.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_margin(
    problem: *const ConvresProblem,
    norm: ConvresNorm,
    out: *mut f64,
) -> ConvresStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null_arg("problem");
        };
        if out.is_null() {
            return null_arg("output value");
        }
        let norm = norm_kind(norm).unwrap_or(match p.0.uncertainty {
            UncertaintyModel::Additive { norm, .. } => norm,
            _ => NormKind::Two,
        });
        let solver = ScrsOptions::default().solver;
        match scrs::robustness_margin(&p.0.system, &p.0.nominal, norm, &solver) {
            Ok(g) => {
                *out = g;
                ConvresStatus::Ok
            }
            Err(Error::InfiniteMargin) => {
                *out = f64::INFINITY;
                fail(Error::InfiniteMargin)
            }
            Err(e) => fail(e),
        }
    })
}

/// Solve `f(x, u, w0) = 0` for `x` from the nominal state.
///
/// # Safety
/// `problem` must be a live handle, `u` hold `m` doubles and `x` hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn convres_retrieve(
    problem: *const ConvresProblem,
    u: *const f64,
    m: usize,
    x: *mut f64,
    n: usize,
) -> ConvresStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null_arg("problem");
        };
        if u.is_null() || x.is_null() {
            return null_arg("vector");
        }
        let d = p.0.system.dims();
        if m != d.m {
            return fail(Error::DimensionMismatch {
                context: "u".into(),
                expected: d.m,
                actual: m,
            });
        }
        if n != d.n {
            return fail(Error::DimensionMismatch {
                context: "x".into(),
                expected: d.n,
                actual: n,
            });
        }
        let u = DVector::from_column_slice(std::slice::from_raw_parts(u, m));
        let pt = &p.0.nominal;
        match scrs::retrieve_implicit(&p.0.system, &u, &pt.w0, &pt.x0, &ScrsOptions::default()) {
            Ok(r) => write_vec(r.x.as_slice(), x, n, ptr::null_mut()),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn convres_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
