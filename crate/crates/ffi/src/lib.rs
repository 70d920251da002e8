//! C interface: model handles for the limiting drift and diffusion, the
//! Lyapunov solver, and whole experiment runs from a JSON config.
//!
//! Every function returns an [`LhStatus`]; on failure a message is available
//! from [`lh_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use langevin_homog::cli_io::{self, Overrides};
use langevin_homog::gibbs::{self, assemble_limit_sde, GibbsError, LimitSDE, LimitWorkspace, RadialQuadrature};
use langevin_homog::linear_diag::{self, LinearModel};
use langevin_homog::model_spec::{ModelSource, ModelSpec};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON, unknown keys, bad expressions.
    InvalidInput = 3,
    /// Array length does not match the model dimension.
    Dimension = 4,
    /// Evaluation failed: non-finite values, lost definiteness, quadrature.
    Numerical = 5,
    Panic = 6,
}

/// Opaque model with its limiting SDE.
pub struct LhModel {
    spec: ModelSpec,
    limit: LimitSDE,
    ws: LimitWorkspace,
}

/// Opaque finished run.
pub struct LhRun {
    record: CString,
    exit_code: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: LhStatus, msg: impl Into<String>) -> LhStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`LhStatus::Panic`].
fn guard(f: impl FnOnce() -> LhStatus) -> LhStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LhStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, LhStatus> {
    if p.is_null() {
        return Err(fail(LhStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(LhStatus::InvalidUtf8, e.to_string()))
}

fn gibbs_status(e: GibbsError) -> LhStatus {
    fail(LhStatus::Numerical, e.to_string())
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn lh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a model from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lh_model_from_json(json: *const c_char, out: *mut *mut LhModel) -> LhStatus {
    guard(|| {
        if out.is_null() {
            return fail(LhStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let src: ModelSource = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(LhStatus::InvalidInput, e.to_string()),
        };
        let spec = match ModelSpec::from_source(&src) {
            Ok(s) => s,
            Err(e) => return fail(LhStatus::InvalidInput, e.to_string()),
        };
        let limit = assemble_limit_sde(&spec, &RadialQuadrature::default());
        let ws = limit.workspace();
        *out = Box::into_raw(Box::new(LhModel { spec, limit, ws }));
        LhStatus::Ok
    })
}

/// # Safety
/// `model` must come from [`lh_model_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lh_model_free(model: *mut LhModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of slow coordinates n; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_model_dim(model: *const LhModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.dim())
}

/// Number of Wiener components k; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_model_noise_dim(model: *const LhModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.wiener_dim())
}

/// Drift (length n) and diffusion (n×k, row-major) of the limiting SDE at
/// (t, q). `diffusion` may be NULL.
///
/// # Safety
/// `q` and `drift` must hold `n` doubles, `diffusion` n·k doubles if not NULL.
#[no_mangle]
pub unsafe extern "C" fn lh_limit_eval(
    model: *mut LhModel,
    t: f64,
    q: *const f64,
    n: usize,
    drift: *mut f64,
    diffusion: *mut f64,
) -> LhStatus {
    guard(|| {
        let Some(m) = model.as_mut() else {
            return fail(LhStatus::NullPointer, "model is null");
        };
        if q.is_null() || drift.is_null() {
            return fail(LhStatus::NullPointer, "q or drift is null");
        }
        if n != m.spec.dim() {
            return fail(LhStatus::Dimension, format!("model has n = {}, got {n}", m.spec.dim()));
        }
        let q = std::slice::from_raw_parts(q, n);
        if let Err(e) = m.limit.eval_into(t, q, &mut m.ws) {
            return gibbs_status(e);
        }
        std::slice::from_raw_parts_mut(drift, n).copy_from_slice(m.ws.drift.as_slice());
        if !diffusion.is_null() {
            let k = m.spec.wiener_dim();
            let out = std::slice::from_raw_parts_mut(diffusion, n * k);
            for i in 0..n {
                for j in 0..k {
                    out[i * k + j] = m.ws.diffusion[(i, j)];
                }
            }
        }
        LhStatus::Ok
    })
}

/// Noise-induced drift S at (t, q) into `out` (length n).
///
/// # Safety
/// `q` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn lh_noise_induced_drift(
    model: *const LhModel,
    t: f64,
    q: *const f64,
    n: usize,
    out: *mut f64,
) -> LhStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(LhStatus::NullPointer, "model is null");
        };
        if q.is_null() || out.is_null() {
            return fail(LhStatus::NullPointer, "q or out is null");
        }
        if n != m.spec.dim() {
            return fail(LhStatus::Dimension, format!("model has n = {}, got {n}", m.spec.dim()));
        }
        match gibbs::noise_induced_drift(&m.spec, t, std::slice::from_raw_parts(q, n)) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(out, n).copy_from_slice(s.as_slice());
                LhStatus::Ok
            }
            Err(e) => gibbs_status(e),
        }
    })
}

/// Solves γM + Mγᵀ = Σ for n×n row-major inputs. `residual` may be NULL.
///
/// # Safety
/// `gamma`, `sigma` and `m` must hold n² doubles.
#[no_mangle]
pub unsafe extern "C" fn lh_lyapunov_solve(
    gamma: *const f64,
    sigma: *const f64,
    n: usize,
    m: *mut f64,
    residual: *mut f64,
) -> LhStatus {
    guard(|| {
        if gamma.is_null() || sigma.is_null() || m.is_null() {
            return fail(LhStatus::NullPointer, "gamma, sigma or m is null");
        }
        if n == 0 {
            return fail(LhStatus::Dimension, "n must be positive");
        }
        let g = DMatrix::from_row_slice(n, n, std::slice::from_raw_parts(gamma, n * n));
        let s = DMatrix::from_row_slice(n, n, std::slice::from_raw_parts(sigma, n * n));
        let model = match LinearModel::new(g, s) {
            Ok(x) => x,
            Err(e) => return fail(LhStatus::InvalidInput, e.to_string()),
        };
        let l = match linear_diag::solve_lyapunov(&model) {
            Ok(x) => x,
            Err(e) => return fail(LhStatus::Numerical, e.to_string()),
        };
        let out = std::slice::from_raw_parts_mut(m, n * n);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = l.m[(i, j)];
            }
        }
        if !residual.is_null() {
            *residual = l.residual;
        }
        LhStatus::Ok
    })
}

/// Parses and runs a full experiment config, writing its files. `out_dir`
/// may be NULL to use the config's own. A run that completes with failed
/// bands or a module error still returns `Ok`; inspect the exit code.
///
/// # Safety
/// `config_json` (and `out_dir` if not NULL) must be NUL-terminated; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lh_run_config(
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut LhRun,
) -> LhStatus {
    guard(|| {
        if out.is_null() {
            return fail(LhStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(config_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let mut ov = Overrides::default();
        if !out_dir.is_null() {
            match read_str(out_dir) {
                Ok(d) => ov.out = Some(d.into()),
                Err(s) => return s,
            }
        }
        let plan = match cli_io::parse_config_str(text, &ov) {
            Ok(p) => p,
            Err(e) => return fail(LhStatus::InvalidInput, e.to_string()),
        };
        let outcome = cli_io::run(&plan);
        let json = serde_json::to_string(&outcome.record).unwrap_or_default();
        let record = CString::new(json.replace('\0', " ")).unwrap_or_default();
        *out = Box::into_raw(Box::new(LhRun { record, exit_code: outcome.exit_code() }));
        LhStatus::Ok
    })
}

/// 0 pass, 2 band failure, 1 error; -1 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_run_exit_code(run: *const LhRun) -> i32 {
    run.as_ref().map_or(-1, |r| r.exit_code)
}

/// The run record as JSON, owned by the handle.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_run_record_json(run: *const LhRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.record.as_ptr())
}

/// # Safety
/// `run` must come from [`lh_run_config`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lh_run_free(run: *mut LhRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
