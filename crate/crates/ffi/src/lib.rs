//! C interface to the task models, the DDP solver and network checkpoints.
//!
//! Objects are opaque handles created by `*_new`/`*_load` and released with
//! the matching `*_free`. Every fallible call returns a [`CslStatus`]; on
//! failure a description is kept per thread and can be read with
//! [`csl_last_error`]. Output arrays are caller-allocated, and their lengths
//! are checked against the problem dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cacto_sl::config::RunConfig;
use cacto_sl::ddp::{self, SolveStatus};
use cacto_sl::net::{self, checkpoint, MlpNetwork};
use cacto_sl::task::{TaskKind, TaskModel};
use cacto_sl::Error;
use nalgebra::DVector;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NonFinite = 4,
    Numerical = 5,
    Config = 6,
    Checkpoint = 7,
    Io = 8,
    /// An output array is shorter than the result.
    BufferTooSmall = 9,
    Panic = 10,
}

/// Outcome of a DDP solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CslSolveStatus {
    Converged = 0,
    MaxIterations = 1,
    NoDescent = 2,
    BackwardPassFailed = 3,
}

/// A benchmark task: dynamics, cost and horizon.
pub struct CslTask {
    model: TaskModel,
}

/// A dense network loaded from a checkpoint.
pub struct CslNetwork {
    net: MlpNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CslStatus, msg: impl Into<String>) -> CslStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> CslStatus {
    let status = match &e {
        Error::Dimension { .. } => CslStatus::Dimension,
        Error::NonFinite(_) => CslStatus::NonFinite,
        Error::InvalidArgument(_) => CslStatus::InvalidArgument,
        Error::Config { .. } => CslStatus::Config,
        Error::Numerical(_) => CslStatus::Numerical,
        Error::Checkpoint { .. } => CslStatus::Checkpoint,
        Error::Io { .. } => CslStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CslStatus>) -> CslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CslStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(CslStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, CslStatus>;
}

impl<T> OrStatus<T> for cacto_sl::Result<T> {
    fn or_status(self) -> Result<T, CslStatus> {
        self.map_err(from_error)
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, CslStatus> {
    p.as_ref()
        .ok_or_else(|| fail(CslStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], CslStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CslStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], CslStatus> {
    if len < need {
        return Err(fail(
            CslStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(CslStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CslStatus> {
    p.as_mut()
        .ok_or_else(|| fail(CslStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, CslStatus> {
    if p.is_null() {
        return Err(fail(CslStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CslStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn csl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Symmetric log squashing: `log(1 + x)` for `x >= 0`, `-log(1 - x)` otherwise.
#[no_mangle]
pub extern "C" fn csl_logsym(x: f64) -> f64 {
    net::logsym(x)
}

/// Creates a task with default parameters. `kind` is one of
/// `single_integrator`, `double_integrator`, `dubins`.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csl_task_new(kind: *const c_char, out: *mut *mut CslTask) -> CslStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let name = string(kind, "kind")?;
        let kind = TaskKind::from_name(name)
            .ok_or_else(|| fail(CslStatus::InvalidArgument, format!("unknown task kind {name:?}")))?;
        *out = Box::into_raw(Box::new(CslTask {
            model: TaskModel::new(kind),
        }));
        Ok(())
    })
}

/// Creates the task described by a run configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csl_task_from_config(path: *const c_char, out: *mut *mut CslTask) -> CslStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = string(path, "path")?;
        let cfg = RunConfig::load(Path::new(path)).or_status()?;
        *out = Box::into_raw(Box::new(CslTask { model: cfg.task }));
        Ok(())
    })
}

/// Releases a task; null is ignored.
///
/// # Safety
/// `task` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csl_task_free(task: *mut CslTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// State dimension `n`, or 0 for a null task.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_task_state_dim(task: *const CslTask) -> usize {
    task.as_ref().map_or(0, |t| t.model.n())
}

/// Control dimension `m`, or 0 for a null task.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_task_control_dim(task: *const CslTask) -> usize {
    task.as_ref().map_or(0, |t| t.model.m())
}

/// Horizon `T` in steps, or 0 for a null task.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_task_horizon(task: *const CslTask) -> usize {
    task.as_ref().map_or(0, |t| t.model.horizon)
}

/// Sets the horizon used by [`csl_ddp_solve`] defaults and input scaling.
///
/// # Safety
/// `task` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_task_set_horizon(task: *mut CslTask, horizon: usize) -> CslStatus {
    guard(|| {
        let t = task
            .as_mut()
            .ok_or_else(|| fail(CslStatus::NullPointer, "task is null"))?;
        if horizon == 0 {
            return Err(fail(CslStatus::InvalidArgument, "horizon must be positive"));
        }
        t.model.horizon = horizon;
        Ok(())
    })
}

/// One dynamics step; writes `n` values to `next`.
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn csl_task_step(
    task: *const CslTask,
    x: *const f64,
    x_len: usize,
    u: *const f64,
    u_len: usize,
    next: *mut f64,
    next_len: usize,
) -> CslStatus {
    guard(|| {
        let t = &obj(task, "task")?.model;
        let y = t.step(input(x, x_len, "x")?, input(u, u_len, "u")?).or_status()?;
        output(next, next_len, y.len(), "next")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Running cost `l(x, u)`.
///
/// # Safety
/// Arrays must hold the stated number of values; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn csl_task_running_cost(
    task: *const CslTask,
    x: *const f64,
    x_len: usize,
    u: *const f64,
    u_len: usize,
    cost: *mut f64,
) -> CslStatus {
    guard(|| {
        let t = &obj(task, "task")?.model;
        let c = t.running_cost(input(x, x_len, "x")?, input(u, u_len, "u")?).or_status()?;
        *out_ptr(cost, "cost")? = c;
        Ok(())
    })
}

/// Terminal cost `l_T(x)`.
///
/// # Safety
/// `x` must hold `x_len` values; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn csl_task_terminal_cost(
    task: *const CslTask,
    x: *const f64,
    x_len: usize,
    cost: *mut f64,
) -> CslStatus {
    guard(|| {
        let t = &obj(task, "task")?.model;
        let c = t.terminal_cost(input(x, x_len, "x")?).or_status()?;
        *out_ptr(cost, "cost")? = c;
        Ok(())
    })
}

/// Result arrays of [`csl_ddp_solve`], all caller-allocated. Lengths are in
/// values: `states` and `value_grads` need `(horizon + 1) * n`, `controls`
/// needs `horizon * m`. Any pointer may be null to skip that output.
#[repr(C)]
pub struct CslTrajectoryOut {
    pub states: *mut f64,
    pub states_len: usize,
    pub controls: *mut f64,
    pub controls_len: usize,
    pub value_grads: *mut f64,
    pub value_grads_len: usize,
    pub total_cost: f64,
    pub iterations: usize,
    pub status: CslSolveStatus,
}

unsafe fn fill(p: *mut f64, len: usize, rows: &[DVector<f64>], what: &str) -> Result<(), CslStatus> {
    if p.is_null() {
        return Ok(());
    }
    let need: usize = rows.iter().map(|r| r.len()).sum();
    let dst = output(p, len, need, what)?;
    for (chunk, r) in dst.chunks_mut(rows.first().map_or(1, |r| r.len().max(1))).zip(rows) {
        chunk.copy_from_slice(r.as_slice());
    }
    Ok(())
}

/// Solves from `x0` over `horizon` steps (0 means the task horizon) with
/// default solver settings. `warm_controls` holds `horizon * m` values or is
/// null for the rest warm start. A `BackwardPassFailed` solve still returns
/// `CSL_STATUS_OK`; check `out->status`.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn csl_ddp_solve(
    task: *const CslTask,
    x0: *const f64,
    x0_len: usize,
    horizon: usize,
    warm_controls: *const f64,
    out: *mut CslTrajectoryOut,
) -> CslStatus {
    guard(|| {
        let t = &obj(task, "task")?.model;
        let out = out_ptr(out, "out")?;
        let h = if horizon == 0 { t.horizon } else { horizon };
        let m = t.m();
        let warm = if warm_controls.is_null() {
            ddp::zero_controls(t, h)
        } else {
            input(warm_controls, h * m, "warm_controls")?
                .chunks(m)
                .map(DVector::from_column_slice)
                .collect()
        };
        let sol = ddp::solve(t, input(x0, x0_len, "x0")?, h, &warm, &Default::default()).or_status()?;
        let tr = &sol.trajectory;
        fill(out.states, out.states_len, &tr.states, "states")?;
        fill(out.controls, out.controls_len, &tr.controls, "controls")?;
        fill(out.value_grads, out.value_grads_len, &tr.value_grads, "value_grads")?;
        out.total_cost = tr.total_cost;
        out.iterations = sol.iterations;
        out.status = match sol.status {
            SolveStatus::Converged => CslSolveStatus::Converged,
            SolveStatus::MaxIterations => CslSolveStatus::MaxIterations,
            SolveStatus::NoDescent => CslSolveStatus::NoDescent,
            SolveStatus::BackwardPassFailed => CslSolveStatus::BackwardPassFailed,
        };
        Ok(())
    })
}

/// Loads a network checkpoint, verifying its checksum.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csl_network_load(path: *const c_char, out: *mut *mut CslNetwork) -> CslStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = string(path, "path")?;
        let net = checkpoint::load(Path::new(path)).or_status()?;
        *out = Box::into_raw(Box::new(CslNetwork { net }));
        Ok(())
    })
}

/// Releases a network; null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csl_network_free(net: *mut CslNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width, or 0 for a null network.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_network_input_dim(net: *const CslNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_dim())
}

/// Output width, or 0 for a null network.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csl_network_output_dim(net: *const CslNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.output_dim())
}

/// Evaluates the network on one (already normalized) input.
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn csl_network_forward(
    net: *const CslNetwork,
    input_ptr: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CslStatus {
    guard(|| {
        let n = &obj(net, "net")?.net;
        let y = n.forward(input(input_ptr, input_len, "input")?).or_status()?;
        output(out, out_len, y.len(), "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Jacobian of the output with respect to the input, row-major
/// `output_dim x input_dim`.
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn csl_network_input_gradient(
    net: *const CslNetwork,
    input_ptr: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CslStatus {
    guard(|| {
        let n = &obj(net, "net")?.net;
        let j = n.input_gradient(input(input_ptr, input_len, "input")?).or_status()?;
        let dst = output(out, out_len, j.len(), "out")?;
        for r in 0..j.nrows() {
            for c in 0..j.ncols() {
                dst[r * j.ncols() + c] = j[(r, c)];
            }
        }
        Ok(())
    })
}

/// Normalizes the augmented state `(x, t)` into network inputs (`n + 1`
/// values).
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn csl_task_normalize_input(
    task: *const CslTask,
    x: *const f64,
    x_len: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> CslStatus {
    guard(|| {
        let task = &obj(task, "task")?.model;
        let x = input(x, x_len, "x")?;
        if x.len() != task.n() {
            return Err(from_error(Error::Dimension {
                what: "state",
                expected: task.n(),
                got: x.len(),
            }));
        }
        let v = task.normalize_input(x, t);
        output(out, out_len, v.len(), "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Control chosen by an actor network at state `x` and step `t`, scaled to
/// the task's control bounds (`m` values).
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn csl_actor_control(
    actor: *const CslNetwork,
    task: *const CslTask,
    x: *const f64,
    x_len: usize,
    t: usize,
    u: *mut f64,
    u_len: usize,
) -> CslStatus {
    guard(|| {
        let a = &obj(actor, "actor")?.net;
        let task = &obj(task, "task")?.model;
        let c = net::actor_control(a, task, input(x, x_len, "x")?, t).or_status()?;
        output(u, u_len, c.len(), "u")?.copy_from_slice(c.as_slice());
        Ok(())
    })
}
