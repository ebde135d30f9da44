//! C ABI over `bernoulli-lora`.
//!
//! Every function returns a [`BloraStatus`]. On failure the message is kept
//! per thread and can be read with [`blora_last_error_message`]. Matrices
//! cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bernoulli_lora::config::ExperimentConfig;
use bernoulli_lora::experiment;
use bernoulli_lora::optimizer::{self, Outcome, Trace};
use bernoulli_lora::problems::{Dataset, L1Config, Problem, QuadraticConfig, RegWeight};
use bernoulli_lora::sketch::Side;
use bernoulli_lora::theory::{self, Theorem, TheoryParams};
use bernoulli_lora::{Error, ParamMatrix};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BloraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    MissingConstant = 3,
    Shape = 4,
    Numerical = 5,
    Io = 6,
    Parse = 7,
    Utf8 = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BloraOutcome {
    Completed = 0,
    Converged = 1,
    Diverged = 2,
}

/// Opaque objective.
pub struct BloraProblem(Problem);

/// Opaque optimizer trace.
pub struct BloraTrace(Trace);

/// One trace row. `side` is 0 for left, 1 for right.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct BloraTraceRow {
    pub iter: u64,
    pub f: f64,
    pub grad_sq_norm: f64,
    pub estimator_gap: f64,
    pub lyapunov: f64,
    pub stepsize: f64,
    pub comm_scalars: f64,
    pub side: u8,
}

/// Constants for the stepsize rules. NaN marks a missing value.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BloraTheoryParams {
    pub l: f64,
    pub mu: f64,
    pub l0: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub alpha: f64,
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub sigma_sq: f64,
    pub omega: f64,
    pub beta: f64,
    pub clients: f64,
    pub q: f64,
    pub b: f64,
    pub horizon: f64,
    pub delta0: f64,
    pub gap0: f64,
    pub delta_star: f64,
    pub r0: f64,
}

impl BloraTheoryParams {
    fn to_core(self) -> Result<TheoryParams, Error> {
        let mut p = TheoryParams::default();
        let pairs = [
            ("L", self.l),
            ("mu", self.mu),
            ("L0", self.l0),
            ("lambda_min", self.lambda_min),
            ("lambda_max", self.lambda_max),
            ("alpha", self.alpha),
            ("A1", self.a1),
            ("B1", self.b1),
            ("C1", self.c1),
            ("sigma_sq", self.sigma_sq),
            ("omega", self.omega),
            ("beta", self.beta),
            ("M", self.clients),
            ("q", self.q),
            ("b", self.b),
            ("T", self.horizon),
            ("delta0", self.delta0),
            ("gap0", self.gap0),
            ("delta_star", self.delta_star),
            ("R0", self.r0),
        ];
        for (k, v) in pairs {
            if !v.is_nan() {
                p.set(k, v)?;
            }
        }
        Ok(p)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(BloraStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig { .. } => BloraStatus::InvalidConfig,
            Error::MissingConstant(_) => BloraStatus::MissingConstant,
            Error::Shape { .. } => BloraStatus::Shape,
            Error::Numerical(_) => BloraStatus::Numerical,
            Error::Io { .. } => BloraStatus::Io,
            Error::Parse { .. } => BloraStatus::Parse,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BloraStatus::NullPointer, format!("`{what}` is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BloraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BloraStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BloraStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn problem_ref<'a>(p: *const BloraProblem) -> Result<&'a Problem, Failure> {
    p.as_ref().map(|b| &b.0).ok_or_else(|| null("problem"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(BloraStatus::Utf8, format!("`{what}` is not UTF-8: {e}")))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(BloraStatus::OutOfRange, "dimension overflow".into()))
}

unsafe fn emit_problem(p: Problem, out: *mut *mut BloraProblem) {
    *out = Box::into_raw(Box::new(BloraProblem(p)));
}

/// Parameter matrix from a row-major buffer of `len` values.
unsafe fn param(p: &Problem, w: *const f64, len: usize) -> Result<ParamMatrix, Failure> {
    let (m, n) = p.shape();
    if len != m * n {
        return Err(Failure(
            BloraStatus::Shape,
            format!("expected {m}x{n} = {} values, got {len}", m * n),
        ));
    }
    Ok(DMatrix::from_row_slice(m, n, slice(w, len, "w")?))
}

/// Copies the thread's last error message into `buf` as a NUL-terminated
/// string, truncating to `cap - 1` bytes. Returns the full message length
/// in bytes, so a caller can size the buffer with a first call where
/// `cap == 0`.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null when `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn blora_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && cap > 0 {
            let k = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn blora_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Planted quadratic `1/2 ||C vec(W) - d||^2` on `rows x cols` parameters
/// with curvature spread over `[mu, l]`. `samples == 0` picks `rows * cols`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_quadratic_random(
    rows: usize,
    cols: usize,
    samples: usize,
    mu: f64,
    l: f64,
    seed: u64,
    out: *mut *mut BloraProblem,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = Problem::quadratic_random(&QuadraticConfig {
            shape: (rows, cols),
            rows: (samples > 0).then_some(samples),
            mu,
            l,
            seed,
        })?;
        emit_problem(p, out);
        Ok(())
    })
}

/// Quadratic `1/2 ||C vec(W) - d||^2` with `C` given row-major as
/// `samples x (rows * cols)` and `d` of length `samples`.
///
/// # Safety
/// `c` must hold `samples * rows * cols` values, `d` must hold `samples`
/// values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_quadratic(
    c: *const f64,
    d: *const f64,
    samples: usize,
    rows: usize,
    cols: usize,
    out: *mut *mut BloraProblem,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dim = checked_len(rows, cols)?;
        let c = DMatrix::from_row_slice(samples, dim, slice(c, checked_len(samples, dim)?, "c")?);
        let d = DVector::from_column_slice(slice(d, samples, "d")?);
        emit_problem(Problem::quadratic(&c, d, (rows, cols))?, out);
        Ok(())
    })
}

/// Regularized least squares on `features` (row-major, `samples x
/// rows * cols`) and `target`. A NaN `reg_weight` selects the spectral
/// norm of the design.
///
/// # Safety
/// `features` must hold `samples * rows * cols` values, `target` must hold
/// `samples` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_linreg(
    features: *const f64,
    target: *const f64,
    samples: usize,
    rows: usize,
    cols: usize,
    reg_weight: f64,
    out: *mut *mut BloraProblem,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dim = checked_len(rows, cols)?;
        let data = Dataset {
            features: DMatrix::from_row_slice(samples, dim, slice(features, checked_len(samples, dim)?, "features")?),
            target: DVector::from_column_slice(slice(target, samples, "target")?),
            seed: 0,
        };
        let reg = if reg_weight.is_nan() {
            RegWeight::Spectral
        } else {
            RegWeight::Value(reg_weight)
        };
        let mut p = Problem::linreg(&data, (rows, cols), reg)?;
        p.estimate_optimum(&DMatrix::zeros(rows, cols));
        emit_problem(p, out);
        Ok(())
    })
}

/// Absolute-loss regression `(1/samples) sum |D vec(W) - b|` with `D` row-major,
/// `samples x (rows * cols)`.
///
/// # Safety
/// `d` must hold `samples * rows * cols` values, `b` must hold `samples`
/// values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_l1(
    d: *const f64,
    b: *const f64,
    samples: usize,
    rows: usize,
    cols: usize,
    out: *mut *mut BloraProblem,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dim = checked_len(rows, cols)?;
        let d = DMatrix::from_row_slice(samples, dim, slice(d, checked_len(samples, dim)?, "d")?);
        let b = DVector::from_column_slice(slice(b, samples, "b")?);
        emit_problem(Problem::l1(&d, b, (rows, cols))?, out);
        Ok(())
    })
}

/// Absolute-loss regression with a planted minimizer, so `f* = 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_l1_random(
    rows: usize,
    cols: usize,
    samples: usize,
    seed: u64,
    out: *mut *mut BloraProblem,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = Problem::l1_random(&L1Config {
            shape: (rows, cols),
            rows: samples,
            seed,
        })?;
        emit_problem(p, out);
        Ok(())
    })
}

/// # Safety
/// `p` must come from a `blora_problem_*` constructor and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_free(p: *mut BloraProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live problem; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_shape(
    p: *const BloraProblem,
    rows: *mut usize,
    cols: *mut usize,
) -> BloraStatus {
    guard(|| {
        let p = problem_ref(p)?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        (*rows, *cols) = p.shape();
        Ok(())
    })
}

/// # Safety
/// `p` must be a live problem, `w` must hold `len` values and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_eval(
    p: *const BloraProblem,
    w: *const f64,
    len: usize,
    out: *mut f64,
) -> BloraStatus {
    guard(|| {
        let p = problem_ref(p)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = p.eval(&param(p, w, len)?);
        Ok(())
    })
}

/// Gradient (a subgradient for the absolute loss), written row-major.
///
/// # Safety
/// `p` must be a live problem; `w` and `grad` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_grad(
    p: *const BloraProblem,
    w: *const f64,
    len: usize,
    grad: *mut f64,
) -> BloraStatus {
    guard(|| {
        let p = problem_ref(p)?;
        let w = param(p, w, len)?;
        if grad.is_null() {
            return Err(null("grad"));
        }
        let g = p.grad(&w);
        let out = std::slice::from_raw_parts_mut(grad, len);
        let n = g.ncols();
        for (k, v) in out.iter_mut().enumerate() {
            *v = g[(k / n, k % n)];
        }
        Ok(())
    })
}

/// Smoothness constant `L`; `MissingConstant` for the absolute loss.
///
/// # Safety
/// `p` must be a live problem and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_smoothness(p: *const BloraProblem, out: *mut f64) -> BloraStatus {
    guard(|| {
        let p = problem_ref(p)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = p.smoothness.ok_or_else(|| Error::MissingConstant("L".into()))?;
        Ok(())
    })
}

/// Optimal value `f*` when known or estimated.
///
/// # Safety
/// `p` must be a live problem and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_problem_optimum(p: *const BloraProblem, out: *mut f64) -> BloraStatus {
    guard(|| {
        let p = problem_ref(p)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = p.f_star().ok_or_else(|| Error::MissingConstant("f*".into()))?;
        Ok(())
    })
}

/// Parse a TOML experiment config, then run method `method_index` with
/// `seed`. Relative dataset paths resolve against the working directory.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_run_config(
    config: *const c_char,
    seed: u64,
    method_index: usize,
    out: *mut *mut BloraTrace,
) -> BloraStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::parse(text(config, "config")?, "<ffi>")?;
        cfg.validate()?;
        if method_index >= cfg.methods.len() {
            return Err(Failure(
                BloraStatus::OutOfRange,
                format!("method index {method_index} but the config has {}", cfg.methods.len()),
            ));
        }
        let prep = experiment::prepare(&cfg, None, None)?;
        let trace = optimizer::run(&prep.problem, &prep.clients, &prep.methods[method_index].spec, seed)?;
        *out = Box::into_raw(Box::new(BloraTrace(trace)));
        Ok(())
    })
}

/// Number of rows, or 0 for null.
///
/// # Safety
/// `t` must be a live trace or null.
#[no_mangle]
pub unsafe extern "C" fn blora_trace_len(t: *const BloraTrace) -> usize {
    t.as_ref().map_or(0, |t| t.0.rows.len())
}

/// # Safety
/// `t` must be a live trace and `row` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_trace_row(t: *const BloraTrace, index: usize, row: *mut BloraTraceRow) -> BloraStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trace"))?;
        if row.is_null() {
            return Err(null("row"));
        }
        let r =
            t.0.rows
                .get(index)
                .ok_or_else(|| Failure(BloraStatus::OutOfRange, format!("row {index} of {}", t.0.rows.len())))?;
        *row = BloraTraceRow {
            iter: r.iter as u64,
            f: r.f,
            grad_sq_norm: r.grad_sq_norm,
            estimator_gap: r.estimator_gap,
            lyapunov: r.lyapunov,
            stepsize: r.stepsize,
            comm_scalars: r.comm_scalars,
            side: match r.side {
                Side::Left => 0,
                Side::Right => 1,
            },
        };
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trace and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_trace_outcome(t: *const BloraTrace, out: *mut BloraOutcome) -> BloraStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trace"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match t.0.outcome {
            Outcome::Completed => BloraOutcome::Completed,
            Outcome::Converged => BloraOutcome::Converged,
            Outcome::Diverged { .. } => BloraOutcome::Diverged,
        };
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`blora_run_config`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn blora_trace_free(t: *mut BloraTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// All fields NaN.
#[no_mangle]
pub extern "C" fn blora_theory_params_empty() -> BloraTheoryParams {
    let n = f64::NAN;
    BloraTheoryParams {
        l: n,
        mu: n,
        l0: n,
        lambda_min: n,
        lambda_max: n,
        alpha: n,
        a1: n,
        b1: n,
        c1: n,
        sigma_sq: n,
        omega: n,
        beta: n,
        clients: n,
        q: n,
        b: n,
        horizon: n,
        delta0: n,
        gap0: n,
        delta_star: n,
        r0: n,
    }
}

/// Theoretical stepsize for `theorem` ("gd", "page-pl", "ef21", ...).
///
/// # Safety
/// `theorem` must be NUL-terminated, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn blora_stepsize(
    theorem: *const c_char,
    params: *const BloraTheoryParams,
    out: *mut f64,
) -> BloraStatus {
    guard(|| {
        let th: Theorem = text(theorem, "theorem")?.parse()?;
        let p = params.as_ref().ok_or_else(|| null("params"))?.to_core()?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = theory::stepsize(th, &p)?;
        Ok(())
    })
}
