//! C ABI over `covers-core`.
//!
//! Every fallible function returns a [`CoversStatus`]; on failure the message
//! is kept per thread and can be copied out with [`covers_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use covers_core::env::{Env, EnvConfig, Observation, TaskGroup, TaskInstance, ACTION_DIM};
use covers_core::group::GroupSpec;
use covers_core::policy::PolicyBundle;
use covers_core::transport::{w1_distance, FeatureCloud};
use covers_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoversStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    EpisodeFinished = 5,
    Panic = 6,
}

/// An environment instance together with its latest observation.
pub struct CoversEnv {
    env: Env,
    obs: Observation,
    done: bool,
}

/// A policy bundle loaded from a checkpoint directory.
pub struct CoversPolicy {
    bundle: PolicyBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: CoversStatus, msg: impl Into<String>) -> CoversStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> CoversStatus {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) | Error::MissingMetrics(_) | Error::Json(_) => CoversStatus::Io,
        Error::NonFinite(_) => CoversStatus::Numeric,
        _ => CoversStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CoversStatus>) -> CoversStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CoversStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CoversStatus::Panic, msg)
        }
    }
}

fn core<T>(r: covers_core::Result<T>) -> Result<T, CoversStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), CoversStatus> {
    if p.is_null() {
        Err(fail(CoversStatus::NullPointer, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, CoversStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CoversStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn covers_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Exact 1-Wasserstein distance between `n` and `m` uniformly weighted
/// points of dimension `dim`, stored row-major.
///
/// # Safety
/// `x` must hold `n * dim` values, `y` `m * dim`, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn covers_w1_distance(
    x: *const f64,
    n: usize,
    y: *const f64,
    m: usize,
    dim: usize,
    out: *mut f64,
) -> CoversStatus {
    guard(|| {
        non_null(x, "x")?;
        non_null(y, "y")?;
        non_null(out, "out")?;
        let a = std::slice::from_raw_parts(x, n * dim).to_vec();
        let b = std::slice::from_raw_parts(y, m * dim).to_vec();
        let a = core(FeatureCloud::from_flat(n, dim, a))?;
        let b = core(FeatureCloud::from_flat(m, dim, b))?;
        *out = core(w1_distance(&a, &b))?.0;
        Ok(())
    })
}

/// Creates an environment for one orbit member of a task group with the
/// default configuration. `group` is `reach`, `press`, `close` or `slide`;
/// `element` names a D2 element (`e`, `m_x`, `m_y`, `r180`).
///
/// # Safety
/// `group` and `element` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn covers_env_new(
    group: *const c_char,
    element: *const c_char,
    seed: u64,
    out: *mut *mut CoversEnv,
) -> CoversStatus {
    guard(|| {
        non_null(out, "out")?;
        let group = core(TaskGroup::parse(string(group, "group")?))?;
        let g = core(GroupSpec::d2().element_by_name(string(element, "element")?))?;
        let config = EnvConfig::default();
        let task = core(TaskInstance::new(group, g, config.grid))?;
        let mut env = core(Env::new(config, task))?;
        let obs = core(env.reset(&task, seed))?;
        *out = Box::into_raw(Box::new(CoversEnv { env, obs, done: false }));
        Ok(())
    })
}

/// Starts a new episode of the same task.
///
/// # Safety
/// `env` must come from [`covers_env_new`].
#[no_mangle]
pub unsafe extern "C" fn covers_env_reset(env: *mut CoversEnv, seed: u64) -> CoversStatus {
    guard(|| {
        non_null(env, "env")?;
        let e = &mut *env;
        let task = *e.env.task();
        e.obs = core(e.env.reset(&task, seed))?;
        e.done = false;
        Ok(())
    })
}

/// Applies a 4-channel action. `reward`, `done` and `success` may be null.
///
/// # Safety
/// `env` must come from [`covers_env_new`]; `action` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn covers_env_step(
    env: *mut CoversEnv,
    action: *const f64,
    reward: *mut f64,
    done: *mut bool,
    success: *mut bool,
) -> CoversStatus {
    guard(|| {
        non_null(env, "env")?;
        non_null(action, "action")?;
        let e = &mut *env;
        if e.done {
            return Err(fail(CoversStatus::EpisodeFinished, "episode is over; reset first"));
        }
        let mut a = [0.0; ACTION_DIM];
        a.copy_from_slice(std::slice::from_raw_parts(action, ACTION_DIM));
        let r = core(e.env.step(&a))?;
        e.obs = r.obs;
        e.done = r.done;
        if !reward.is_null() {
            *reward = r.reward;
        }
        if !done.is_null() {
            *done = r.done;
        }
        if !success.is_null() {
            *success = r.info.success;
        }
        Ok(())
    })
}

/// Writes the normalized `(x, y, z, gripper)` proprioceptive state.
///
/// # Safety
/// `env` must come from [`covers_env_new`]; `out` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn covers_env_state(env: *const CoversEnv, out: *mut f64) -> CoversStatus {
    guard(|| {
        non_null(env, "env")?;
        non_null(out, "out")?;
        ptr::copy_nonoverlapping((*env).obs.state.as_ptr(), out, 4);
        Ok(())
    })
}

/// Number of values in the current image (`planes * grid * grid`).
///
/// # Safety
/// `env` must be null or come from [`covers_env_new`].
#[no_mangle]
pub unsafe extern "C" fn covers_env_image_len(env: *const CoversEnv) -> usize {
    env.as_ref().map_or(0, |e| e.obs.image.len())
}

/// Copies the current image planes into `out`.
///
/// # Safety
/// `env` must come from [`covers_env_new`]; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn covers_env_image(env: *const CoversEnv, out: *mut f64, len: usize) -> CoversStatus {
    guard(|| {
        non_null(env, "env")?;
        non_null(out, "out")?;
        let img = &(*env).obs.image;
        if len < img.len() {
            return Err(fail(
                CoversStatus::InvalidArgument,
                format!("buffer holds {len} values, image needs {}", img.len()),
            ));
        }
        ptr::copy_nonoverlapping(img.as_ptr(), out, img.len());
        Ok(())
    })
}

/// # Safety
/// `env` must be null or come from [`covers_env_new`], and not be used after.
#[no_mangle]
pub unsafe extern "C" fn covers_env_free(env: *mut CoversEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Loads a policy checkpoint directory written by `covers run`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn covers_policy_load(dir: *const c_char, out: *mut *mut CoversPolicy) -> CoversStatus {
    guard(|| {
        non_null(out, "out")?;
        let bundle = core(PolicyBundle::load(Path::new(string(dir, "dir")?)))?;
        *out = Box::into_raw(Box::new(CoversPolicy { bundle }));
        Ok(())
    })
}

/// Deterministic action `tanh(mean)` for the environment's current
/// observation.
///
/// # Safety
/// Handles must be live; `out` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn covers_policy_act(
    policy: *const CoversPolicy,
    env: *const CoversEnv,
    out: *mut f64,
) -> CoversStatus {
    guard(|| {
        non_null(policy, "policy")?;
        non_null(env, "env")?;
        non_null(out, "out")?;
        let a = core((*policy).bundle.mean_action(&(*env).obs))?;
        ptr::copy_nonoverlapping(a.as_ptr(), out, ACTION_DIM);
        Ok(())
    })
}

/// State value of the environment's current observation.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn covers_policy_value(
    policy: *const CoversPolicy,
    env: *const CoversEnv,
    out: *mut f64,
) -> CoversStatus {
    guard(|| {
        non_null(policy, "policy")?;
        non_null(env, "env")?;
        non_null(out, "out")?;
        *out = core((*policy).bundle.value(&(*env).obs))?;
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or come from [`covers_policy_load`], and not be
/// used after.
#[no_mangle]
pub unsafe extern "C" fn covers_policy_free(policy: *mut CoversPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
