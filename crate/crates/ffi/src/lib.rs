//! C ABI over the `simsiam` library.
//!
//! Every fallible function returns a [`SimsiamStatus`]; on failure the
//! message is available from [`simsiam_last_error`] on the same thread.
//! Objects are opaque handles released with their `_free` function.
//! Strings returned as `char *` are released with [`simsiam_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use simsiam::autodiff::Tensor;
use simsiam::cli::{self, CliError, ExperimentConfig, RunSummary};
use simsiam::data::{parse_cifar10, Sample, CIFAR_PIXELS};
use simsiam::diagnostics::{knn_monitor, normalized_output_std, KnnConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimsiamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Data = 6,
    Train = 7,
    Panic = 8,
}

/// Parsed experiment config.
pub struct SimsiamConfig(ExperimentConfig);

/// Result of a finished run.
pub struct SimsiamSummary(RunSummary);

/// Decoded CIFAR-10 records.
pub struct SimsiamDataset(Vec<Sample>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(s).expect("NULs removed")));
}

fn fail(status: SimsiamStatus, msg: impl Into<String>) -> SimsiamStatus {
    set_error(msg);
    status
}

fn cli_status(e: &CliError) -> SimsiamStatus {
    match e {
        CliError::Config(_) | CliError::UnknownPreset(_) | CliError::UnknownSweep(_) => SimsiamStatus::Config,
        CliError::Io(_) => SimsiamStatus::Io,
        CliError::Data(_) => SimsiamStatus::Data,
        _ => SimsiamStatus::Train,
    }
}

/// Runs `f`, turning panics into [`SimsiamStatus::Panic`].
fn guard(f: impl FnOnce() -> SimsiamStatus) -> SimsiamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SimsiamStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SimsiamStatus> {
    if p.is_null() {
        return Err(fail(SimsiamStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SimsiamStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! nonnull {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(SimsiamStatus::NullPointer, concat!(stringify!($p), " is NULL"));
        })+
    };
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn simsiam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn simsiam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn simsiam_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML config. `preset` may be NULL.
///
/// # Safety
/// `text` and a non-NULL `preset` must be NUL-terminated; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_parse(
    text: *const c_char,
    preset: *const c_char,
    out: *mut *mut SimsiamConfig,
) -> SimsiamStatus {
    guard(|| {
        nonnull!(out);
        let text = tri!(str_arg(text, "text"));
        let preset = if preset.is_null() { None } else { Some(tri!(str_arg(preset, "preset"))) };
        match cli::parse_config_with(text, preset) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(SimsiamConfig(c)));
                SimsiamStatus::Ok
            }
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from [`simsiam_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_free(cfg: *mut SimsiamConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_set_seed(cfg: *mut SimsiamConfig, seed: u64) -> SimsiamStatus {
    nonnull!(cfg);
    (*cfg).0.seed = seed;
    SimsiamStatus::Ok
}

/// Caps the run length; 0 removes the cap.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_set_max_steps(cfg: *mut SimsiamConfig, steps: u64) -> SimsiamStatus {
    nonnull!(cfg);
    (*cfg).0.max_steps = (steps > 0).then_some(steps);
    SimsiamStatus::Ok
}

/// # Safety
/// `cfg` must be a live config handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_set_out_dir(cfg: *mut SimsiamConfig, dir: *const c_char) -> SimsiamStatus {
    nonnull!(cfg);
    let dir = tri!(str_arg(dir, "dir"));
    (*cfg).0.out_dir = Some(PathBuf::from(dir));
    SimsiamStatus::Ok
}

/// The resolved config as TOML; free with [`simsiam_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_config_to_toml(cfg: *const SimsiamConfig) -> *mut c_char {
    if cfg.is_null() {
        set_error("cfg is NULL");
        return ptr::null_mut();
    }
    CString::new((*cfg).0.to_toml()).map_or(ptr::null_mut(), CString::into_raw)
}

/// Runs the experiment, writing artifacts to the config's output directory.
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_run(cfg: *const SimsiamConfig, out: *mut *mut SimsiamSummary) -> SimsiamStatus {
    guard(|| {
        nonnull!(cfg, out);
        match cli::run(&(*cfg).0) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(SimsiamSummary(s)));
                SimsiamStatus::Ok
            }
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be NULL or a handle from [`simsiam_run`].
#[no_mangle]
pub unsafe extern "C" fn simsiam_summary_free(s: *mut SimsiamSummary) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Process exit status for the verdict: 0 healthy, 10 collapsed,
/// 11 diverged, 12 unstable. −1 for a NULL handle.
///
/// # Safety
/// `s` must be NULL or a live summary handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_summary_exit_code(s: *const SimsiamSummary) -> i32 {
    if s.is_null() {
        return -1;
    }
    cli::exit_code((*s).0.verdict.status)
}

/// Trailing-window mean loss and output std of the run.
///
/// # Safety
/// `s` must be a live summary handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_summary_trailing(s: *const SimsiamSummary, loss: *mut f64, output_std: *mut f64) -> SimsiamStatus {
    nonnull!(s, loss, output_std);
    *loss = (*s).0.verdict.evidence.trailing_loss;
    *output_std = (*s).0.verdict.evidence.trailing_std;
    SimsiamStatus::Ok
}

/// Final kNN accuracy, or NaN when the monitor did not run.
///
/// # Safety
/// `s` must be NULL or a live summary handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_summary_final_knn(s: *const SimsiamSummary) -> f64 {
    if s.is_null() {
        return f64::NAN;
    }
    (*s).0.final_knn.unwrap_or(f64::NAN)
}

unsafe fn matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Tensor, SimsiamStatus> {
    if data.is_null() {
        return Err(fail(SimsiamStatus::NullPointer, format!("{what} is NULL")));
    }
    let n = rows.checked_mul(cols).ok_or_else(|| fail(SimsiamStatus::InvalidArgument, "size overflow"))?;
    let v = std::slice::from_raw_parts(data, n).to_vec();
    Tensor::new(vec![rows, cols], v).map_err(|e| fail(SimsiamStatus::InvalidArgument, e.to_string()))
}

/// Mean per-channel std of the row-normalized `[n, d]` matrix `z`.
///
/// # Safety
/// `z` must point to `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_output_std(z: *const f64, n: usize, d: usize, out: *mut f64) -> SimsiamStatus {
    guard(|| {
        nonnull!(out);
        let z = tri!(matrix(z, n, d, "z"));
        match normalized_output_std(&z) {
            Ok(v) => {
                *out = v;
                SimsiamStatus::Ok
            }
            Err(e) => fail(SimsiamStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Weighted kNN accuracy of `query` rows against the labeled `bank` rows.
///
/// # Safety
/// `bank` holds `n_bank * d` doubles, `query` `n_query * d`, label arrays
/// one entry per row; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_knn_accuracy(
    bank: *const f64,
    bank_labels: *const u32,
    n_bank: usize,
    query: *const f64,
    query_labels: *const u32,
    n_query: usize,
    d: usize,
    k: usize,
    temperature: f64,
    out: *mut f64,
) -> SimsiamStatus {
    guard(|| {
        nonnull!(bank_labels, query_labels, out);
        let b = tri!(matrix(bank, n_bank, d, "bank"));
        let q = tri!(matrix(query, n_query, d, "query"));
        let labels = |p: *const u32, n: usize| std::slice::from_raw_parts(p, n).iter().map(|&l| l as usize).collect::<Vec<_>>();
        let cfg = KnnConfig { k, temperature };
        match knn_monitor(&b, &labels(bank_labels, n_bank), &q, &labels(query_labels, n_query), cfg) {
            Ok(v) => {
                *out = v;
                SimsiamStatus::Ok
            }
            Err(e) => fail(SimsiamStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Decodes CIFAR-10 binary records.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simsiam_cifar_parse(bytes: *const u8, len: usize, out: *mut *mut SimsiamDataset) -> SimsiamStatus {
    guard(|| {
        nonnull!(out);
        let data: &[u8] = if len == 0 {
            &[]
        } else {
            nonnull!(bytes);
            std::slice::from_raw_parts(bytes, len)
        };
        match parse_cifar10(data, 0) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(SimsiamDataset(s)));
                SimsiamStatus::Ok
            }
            Err(e) => fail(SimsiamStatus::Data, e.to_string()),
        }
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`simsiam_cifar_parse`].
#[no_mangle]
pub unsafe extern "C" fn simsiam_dataset_free(ds: *mut SimsiamDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of records, 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn simsiam_dataset_len(ds: *const SimsiamDataset) -> usize {
    if ds.is_null() {
        0
    } else {
        (*ds).0.len()
    }
}

/// Label of record `i` and its 3072 pixels in `[0, 1]`, planar RGB.
/// `pixels` may be NULL to fetch only the label.
///
/// # Safety
/// `ds` must be a live dataset handle, `label` writable, and a non-NULL
/// `pixels` must have room for 3072 doubles.
#[no_mangle]
pub unsafe extern "C" fn simsiam_dataset_record(
    ds: *const SimsiamDataset,
    i: usize,
    label: *mut u32,
    pixels: *mut f64,
) -> SimsiamStatus {
    nonnull!(ds, label);
    let Some(s) = (&(*ds).0).get(i) else {
        return fail(SimsiamStatus::InvalidArgument, format!("record {i} out of range"));
    };
    *label = s.label.map_or(u32::MAX, |l| l as u32);
    if !pixels.is_null() {
        std::slice::from_raw_parts_mut(pixels, CIFAR_PIXELS).copy_from_slice(s.payload.data());
    }
    SimsiamStatus::Ok
}
