//! C ABI over `diffctl`.
//!
//! Every fallible function returns a [`DiffctlStatus`] and writes results
//! through out-pointers. On failure the message is kept per thread and can
//! be copied out with [`diffctl_last_error_message`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use diffctl::io::save_trace;
use diffctl::update::{amplitude_ratio, condition1_residual, ethereum_update, solve_shift};
use diffctl::{
    ArctanUpdate, Controller, ControllerSpec, DifficultyController, Error, FeatureConfig, HashRateScenario,
    IndicatorPolicy, MlpModel, NeuralIndicator, SimulationConfig, TPreviousDistribution, Trace, UpdateFunction,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffctlStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad parameter or configuration.
    Config = 2,
    /// Input data failed validation.
    Validation = 3,
    /// Integration, root finding or training failed.
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffctlDistributionKind {
    Exponential = 0,
    Erlang = 1,
}

/// Law of `T_previous`: `shape` blocks of mean `beta` seconds each
/// (`shape` is ignored for the exponential).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DiffctlDistribution {
    pub kind: DiffctlDistributionKind,
    pub shape: u32,
    pub beta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DiffctlRecord {
    pub height: u64,
    pub timestamp: f64,
    pub block_time: f64,
    pub difficulty: f64,
    pub scheduled_rate: f64,
    /// NaN when the indicator was not evaluated at this height.
    pub indicator: f64,
}

pub struct DiffctlController(Controller);
pub struct DiffctlModel(Arc<MlpModel>);
pub struct DiffctlTrace(Trace);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DiffctlStatus {
    match e {
        Error::Io { .. } => DiffctlStatus::Io,
        _ => match e.exit_code() {
            3 => DiffctlStatus::Validation,
            4 => DiffctlStatus::Numerical,
            _ => DiffctlStatus::Config,
        },
    }
}

fn guard(f: impl FnOnce() -> Result<(), DiffctlStatus>) -> DiffctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiffctlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            DiffctlStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, DiffctlStatus>;
}

impl<T> OrStatus<T> for diffctl::Result<T> {
    fn or_status(self) -> Result<T, DiffctlStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        })
    }
}

fn out<'a, T>(p: *mut T) -> Result<&'a mut T, DiffctlStatus> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| {
        set_error("null output pointer".into());
        DiffctlStatus::NullPointer
    })
}

fn handle<'a, T>(p: *const T) -> Result<&'a T, DiffctlStatus> {
    // SAFETY: handles come from this library and are not yet freed.
    unsafe { p.as_ref() }.ok_or_else(|| {
        set_error("null handle".into());
        DiffctlStatus::NullPointer
    })
}

fn distribution(d: &DiffctlDistribution) -> diffctl::Result<TPreviousDistribution> {
    match d.kind {
        DiffctlDistributionKind::Exponential => TPreviousDistribution::exponential(d.beta),
        DiffctlDistributionKind::Erlang => TPreviousDistribution::erlang(d.shape, d.beta),
    }
}

fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, DiffctlStatus> {
    if p.is_null() {
        set_error("null path".into());
        return Err(DiffctlStatus::NullPointer);
    }
    // SAFETY: non-null, NUL-terminated by contract.
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
        set_error("path is not UTF-8".into());
        DiffctlStatus::Config
    })?;
    Ok(Path::new(s))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len − 1` bytes). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Ethereum update value for one block time in seconds (`t > 0`).
///
/// # Safety
/// `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_ethereum_update(block_time: f64, out_value: *mut f64) -> DiffctlStatus {
    guard(|| {
        *out(out_value)? = ethereum_update(block_time).or_status()?;
        Ok(())
    })
}

/// `A(atan(B(t − C)) + D)`; fails unless `A, B > 0` and `sup |f| < 1`.
///
/// # Safety
/// `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_arctan_update(a: f64, b: f64, c: f64, d: f64, t: f64, out_value: *mut f64) -> DiffctlStatus {
    guard(|| {
        *out(out_value)? = ArctanUpdate::new(a, b, c, d).or_status()?.eval(t);
        Ok(())
    })
}

/// Density of `T_previous` at `t ≥ 0`.
///
/// # Safety
/// `dist` and `out_value` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_density(dist: *const DiffctlDistribution, t: f64, out_value: *mut f64) -> DiffctlStatus {
    guard(|| {
        let d = distribution(handle(dist)?).or_status()?;
        *out(out_value)? = d.density(t).or_status()?;
        Ok(())
    })
}

/// Solves `D` so the arctan update has zero mean under `dist`.
/// `out_residual` may be null.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_solve_shift(
    a: f64,
    b: f64,
    c: f64,
    dist: *const DiffctlDistribution,
    out_d: *mut f64,
    out_residual: *mut f64,
) -> DiffctlStatus {
    guard(|| {
        let d = distribution(handle(dist)?).or_status()?;
        let cal = solve_shift(a, b, c, &d).or_status()?;
        *out(out_d)? = cal.update.d;
        if !out_residual.is_null() {
            *out_residual = cal.check.residual;
        }
        Ok(())
    })
}

/// `E[f(T_previous)]` for the arctan update.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_arctan_residual(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    dist: *const DiffctlDistribution,
    out_residual: *mut f64,
) -> DiffctlStatus {
    guard(|| {
        let dist = distribution(handle(dist)?).or_status()?;
        let f = UpdateFunction::Arctan(ArctanUpdate::new(a, b, c, d).or_status()?);
        *out(out_residual)? = condition1_residual(&f, &dist).or_status()?.residual;
        Ok(())
    })
}

/// `sup f_Ethereum / sup f_arctan`.
///
/// # Safety
/// `out_ratio` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_amplitude_ratio(a: f64, b: f64, c: f64, d: f64, out_ratio: *mut f64) -> DiffctlStatus {
    guard(|| {
        let f = UpdateFunction::Arctan(ArctanUpdate::new(a, b, c, d).or_status()?);
        *out(out_ratio)? = amplitude_ratio(&UpdateFunction::Ethereum, &f).or_status()?;
        Ok(())
    })
}

fn boxed<T>(slot: *mut *mut T, value: T) -> Result<(), DiffctlStatus> {
    *out(slot)? = Box::into_raw(Box::new(value));
    Ok(())
}

fn new_controller(slot: *mut *mut DiffctlController, spec: diffctl::Result<ControllerSpec>) -> DiffctlStatus {
    guard(|| {
        let c = Controller::new(spec.or_status()?).or_status()?;
        boxed(slot, DiffctlController(c))
    })
}

/// Ethereum controller (`I = 1`, one-block `T_previous`).
///
/// # Safety
/// `out_controller` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_new_ethereum(out_controller: *mut *mut DiffctlController) -> DiffctlStatus {
    new_controller(out_controller, Ok(ControllerSpec::ethereum()))
}

/// Bitcoin controller retargeting every `epoch` blocks toward `spacing` seconds.
///
/// # Safety
/// `out_controller` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_new_bitcoin(
    epoch: u32,
    spacing: f64,
    out_controller: *mut *mut DiffctlController,
) -> DiffctlStatus {
    new_controller(out_controller, Ok(ControllerSpec::bitcoin(epoch as usize, spacing)))
}

/// Arctan controller. With a null `model` the indicator is 1; otherwise it
/// is the model's normal-change probability over features `(s, q, l)`,
/// evaluated every `every` blocks.
///
/// # Safety
/// `model` must be null or a live model handle; `out_controller` valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_new_arctan(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    model: *const DiffctlModel,
    s: usize,
    q: usize,
    l: usize,
    every: u64,
    out_controller: *mut *mut DiffctlController,
) -> DiffctlStatus {
    let spec = ArctanUpdate::new(a, b, c, d).map(|u| {
        let policy = match model.as_ref() {
            Some(m) => IndicatorPolicy::Neural(NeuralIndicator {
                model: m.0.clone(),
                features: FeatureConfig { s, q, l },
                every,
            }),
            None => IndicatorPolicy::ConstantOne,
        };
        ControllerSpec::arctan(u, policy)
    });
    new_controller(out_controller, spec)
}

/// Clears history and sets the current difficulty.
///
/// # Safety
/// `controller` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_reset(controller: *mut DiffctlController, difficulty: f64) -> DiffctlStatus {
    guard(|| {
        out(controller)?.0.reset(difficulty);
        Ok(())
    })
}

/// Feeds one block and returns the next difficulty. `out_indicator` (may be
/// null) receives NaN when no indicator was evaluated.
///
/// # Safety
/// `controller` must be a live handle; out-pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_observe(
    controller: *mut DiffctlController,
    height: u64,
    block_time: f64,
    out_difficulty: *mut f64,
    out_indicator: *mut f64,
) -> DiffctlStatus {
    guard(|| {
        let step = out(controller)?.0.observe(height, block_time).or_status()?;
        *out(out_difficulty)? = step.difficulty;
        if !out_indicator.is_null() {
            *out_indicator = step.indicator.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `controller` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn diffctl_controller_free(controller: *mut DiffctlController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Loads a classifier saved by `diffctl train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_model_load(path: *const c_char, out_model: *mut *mut DiffctlModel) -> DiffctlStatus {
    guard(|| {
        let m = MlpModel::load(path_arg(path)?).or_status()?;
        boxed(out_model, DiffctlModel(Arc::new(m)))
    })
}

/// Number of features the model expects.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn diffctl_model_inputs(model: *const DiffctlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.inputs())
}

/// Class probabilities (no change, normal, abnormal) for `n` raw variance
/// features.
///
/// # Safety
/// `features` must point to `n` doubles and `out_probs` to 3.
#[no_mangle]
pub unsafe extern "C" fn diffctl_model_classify(
    model: *const DiffctlModel,
    features: *const f64,
    n: usize,
    out_probs: *mut f64,
) -> DiffctlStatus {
    guard(|| {
        let m = handle(model)?;
        let x = handle(features)?;
        let probs = m.0.classify(std::slice::from_raw_parts(x, n)).or_status()?;
        let dst = out(out_probs)?;
        std::ptr::copy_nonoverlapping(probs.as_ptr(), dst, probs.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn diffctl_model_free(model: *mut DiffctlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs `controller` for `length` blocks at constant hash `rate` (hash/s).
///
/// # Safety
/// `controller` must be a live handle; `out_trace` valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_simulate_constant(
    controller: *mut DiffctlController,
    rate: f64,
    length: u64,
    seed: u64,
    propagation_delay: f64,
    initial_difficulty: f64,
    out_trace: *mut *mut DiffctlTrace,
) -> DiffctlStatus {
    guard(|| {
        let c = out(controller)?;
        let scenario = HashRateScenario::constant(rate, length);
        let config = SimulationConfig { propagation_delay, ..SimulationConfig::with_seed(seed) };
        let trace = diffctl::run_simulation(&scenario, &mut c.0, &config, initial_difficulty).or_status()?;
        boxed(out_trace, DiffctlTrace(trace))
    })
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn diffctl_trace_len(trace: *const DiffctlTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// Record `index` (0-based; heights start at 1).
///
/// # Safety
/// `trace` must be a live handle; `out_record` valid.
#[no_mangle]
pub unsafe extern "C" fn diffctl_trace_get(trace: *const DiffctlTrace, index: usize, out_record: *mut DiffctlRecord) -> DiffctlStatus {
    guard(|| {
        let t = &handle(trace)?.0;
        let Some(r) = t.records.get(index) else {
            set_error(format!("index {index} out of range for {} records", t.len()));
            return Err(DiffctlStatus::Config);
        };
        *out(out_record)? = DiffctlRecord {
            height: r.height,
            timestamp: r.timestamp,
            block_time: r.block_time,
            difficulty: r.difficulty,
            scheduled_rate: t.scheduled_rates[index],
            indicator: t.indicators[index].unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Mean block time of the trace (NaN when empty).
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn diffctl_trace_mean_block_time(trace: *const DiffctlTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.mean_block_time())
}

/// Writes the trace CSV.
///
/// # Safety
/// `trace` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn diffctl_trace_write_csv(trace: *const DiffctlTrace, path: *const c_char) -> DiffctlStatus {
    guard(|| save_trace(&handle(trace)?.0, path_arg(path)?).or_status())
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn diffctl_trace_free(trace: *mut DiffctlTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn diffctl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
