//! C ABI for the streamkv engine.
//!
//! Objects cross the boundary as opaque handles created by `skv_*_new` /
//! `skv_config_*` and released by the matching `*_free`. Every fallible call
//! returns an [`SkvStatus`]; on failure [`skv_last_error`] describes the most
//! recent error on the calling thread. Strings returned to the caller are
//! owned by the caller and must be released with [`skv_string_free`].
//!
//! The generated header is `include/streamkv.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Instant;

use streamkv::clces::{compute_ranks, enhance_scores, RankWindow};
use streamkv::harness::{RunReport, StreamFingerprint};
use streamkv::pipeline::{Pipeline, StreamState};
use streamkv::scoresrc::{Regime, ToyModel};
use streamkv::{Error, PipelineConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    InvalidConfig = 2,
    TraceFormat = 3,
    Runtime = 4,
    /// Malformed argument such as invalid UTF-8 or an out-of-range index.
    InvalidArgument = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Input layout of the built-in toy model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkvRegime {
    Plain = 0,
    Structured = 1,
}

impl From<SkvRegime> for Regime {
    fn from(r: SkvRegime) -> Self {
        match r {
            SkvRegime::Plain => Regime::Plain,
            SkvRegime::Structured => Regime::Structured,
        }
    }
}

/// Opaque pipeline configuration.
pub struct SkvConfig {
    inner: PipelineConfig,
}

/// Opaque simulator: the toy model feeding a compression pipeline.
pub struct SkvSimulator {
    cfg: PipelineConfig,
    pipeline: Pipeline,
    state: StreamState,
    model: ToyModel,
    fingerprint: StreamFingerprint,
    started: Instant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SkvStatus {
    match e.exit_code() {
        2 => SkvStatus::InvalidConfig,
        3 => SkvStatus::TraceFormat,
        _ => SkvStatus::Runtime,
    }
}

struct Fail(SkvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SkvStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SkvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SkvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside streamkv".into());
            SkvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SkvStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or null when the last
/// call succeeded. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn skv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn skv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_config_default(out: *mut *mut SkvConfig) -> SkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(SkvConfig {
            inner: PipelineConfig::default(),
        }));
        Ok(())
    })
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_config_from_toml(
    toml: *const c_char,
    out: *mut *mut SkvConfig,
) -> SkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = PipelineConfig::from_toml_str(str_arg(toml, "toml")?)?;
        cfg.validate()?;
        *out = Box::into_raw(Box::new(SkvConfig { inner: cfg }));
        Ok(())
    })
}

/// Loads and validates a TOML configuration file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_config_load(
    path: *const c_char,
    out: *mut *mut SkvConfig,
) -> SkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = PipelineConfig::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SkvConfig { inner: cfg }));
        Ok(())
    })
}

/// Serializes a configuration to TOML. Free the result with [`skv_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_config_to_toml(
    cfg: *const SkvConfig,
    out: *mut *mut c_char,
) -> SkvStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(cfg.inner.to_toml_string()?);
        Ok(())
    })
}

/// Overrides the RNG seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skv_config_set_seed(cfg: *mut SkvConfig, seed: u64) -> SkvStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.inner.rng_seed = seed;
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn skv_config_free(cfg: *mut SkvConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Creates a simulator from a copy of `cfg`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_new(
    cfg: *const SkvConfig,
    regime: SkvRegime,
    out: *mut *mut SkvSimulator,
) -> SkvStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?.inner.clone();
        if out.is_null() {
            return Err(null("out"));
        }
        let pipeline = Pipeline::new(cfg.clone())?;
        let state = pipeline.initial_state();
        let model = ToyModel::new(&cfg, regime.into())?;
        *out = Box::into_raw(Box::new(SkvSimulator {
            cfg,
            pipeline,
            state,
            model,
            fingerprint: StreamFingerprint::new(),
            started: Instant::now(),
        }));
        Ok(())
    })
}

/// Generates and compresses `frames` more frames. Stops at the first error,
/// leaving the simulator at the last completed frame.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_step(sim: *mut SkvSimulator, frames: usize) -> SkvStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        for _ in 0..frames {
            let frame = sim.model.next_frame(&sim.state.caches)?;
            sim.pipeline.process_frame(&mut sim.state, &frame)?;
            sim.fingerprint.update(&frame);
        }
        Ok(())
    })
}

/// Frames processed so far, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_frames(sim: *const SkvSimulator) -> usize {
    sim.as_ref().map_or(0, |s| s.state.frame_counter)
}

/// Number of tokens currently cached at `layer`.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_cache_len(
    sim: *const SkvSimulator,
    layer: usize,
    out: *mut usize,
) -> SkvStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cache = sim.state.caches.get(layer).ok_or_else(|| {
            Fail(
                SkvStatus::InvalidArgument,
                format!("layer {layer} out of range (0..{})", sim.state.caches.len()),
            )
        })?;
        *out = cache.len();
        Ok(())
    })
}

/// Run report of the frames processed so far, as JSON. Free the result with
/// [`skv_string_free`].
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_report_json(
    sim: *const SkvSimulator,
    out: *mut *mut c_char,
) -> SkvStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = RunReport::build(
            &sim.cfg,
            &sim.state,
            sim.fingerprint.hex(),
            sim.started.elapsed().as_secs_f64(),
        );
        *out = into_c_string(report.to_json()?);
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `sim` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn skv_simulator_free(sim: *mut SkvSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Ascending ranks of `n` scores: the lowest gets 0, ties go to the lower index.
///
/// # Safety
/// `scores` and `ranks_out` must each point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn skv_compute_ranks(
    scores: *const f64,
    n: usize,
    ranks_out: *mut usize,
) -> SkvStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let out = out_slice(ranks_out, n, "ranks_out")?;
        out.copy_from_slice(&compute_ranks(scores)?);
        Ok(())
    })
}

/// Cross-layer consistency of `n` tokens from a `layers × n` row-major matrix
/// of normalized ranks, all of which form one window.
///
/// # Safety
/// `ranks` must point to `layers * n` elements and `cons_out` to `n`.
#[no_mangle]
pub unsafe extern "C" fn skv_consistency(
    ranks: *const f64,
    layers: usize,
    n: usize,
    cons_out: *mut f64,
) -> SkvStatus {
    guard(|| {
        if layers == 0 || n == 0 {
            return Err(Fail(SkvStatus::InvalidArgument, "empty rank window".into()));
        }
        let total = layers
            .checked_mul(n)
            .ok_or_else(|| Fail(SkvStatus::InvalidArgument, "window too large".into()))?;
        let ranks = slice_arg(ranks, total, "ranks")?;
        let out = out_slice(cons_out, n, "cons_out")?;
        let mut window = RankWindow::new(layers);
        for col in ranks.chunks(n) {
            window.push_layer(col.to_vec())?;
        }
        out.copy_from_slice(&window.consistency()?.consistency);
        Ok(())
    })
}

/// `raw · (1 + λ · cons)` for `n` tokens.
///
/// # Safety
/// `raw`, `cons` and `out` must each point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn skv_enhance(
    raw: *const f64,
    cons: *const f64,
    n: usize,
    lambda: f64,
    out: *mut f64,
) -> SkvStatus {
    guard(|| {
        let raw = slice_arg(raw, n, "raw")?;
        let cons = slice_arg(cons, n, "cons")?;
        let dst = out_slice(out, n, "out")?;
        dst.copy_from_slice(&enhance_scores(raw, cons, lambda)?);
        Ok(())
    })
}
