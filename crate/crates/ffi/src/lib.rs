//! C ABI over the latentcf pipeline.
//!
//! Every fallible function returns an [`LcfStatus`]. On failure the message
//! is available from [`lcf_last_error_message`] on the same thread until the
//! next failing call. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use latentcf::autodiff::Tensor;
use latentcf::classifier::BlackBox;
use latentcf::datasets::{generate_nonlinear, generate_toy, Dataset};
use latentcf::harness::{self, ExperimentConfig, Models, RunPaths};
use latentcf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A generated or loaded dataset.
pub struct LcfDataset {
    inner: Dataset,
}

/// Dataset plus the three trained models of one run directory.
pub struct LcfPipeline {
    dataset: Dataset,
    models: Models,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(LcfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => LcfStatus::Io,
            _ => match e.exit_code() {
                1 => LcfStatus::Config,
                2 => LcfStatus::Data,
                _ => LcfStatus::Numeric,
            },
        };
        Fail(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LcfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LcfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LcfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            LcfStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lcf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lcf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Runs one pipeline stage: `gen-data`, `train`, `grid-search`, `evaluate`
/// or `loo-evaluate`. `config_path` may be NULL; `sets` holds `n_sets`
/// dotted `key=value` overrides.
///
/// # Safety
/// String arguments must be NUL-terminated; `sets` must point to `n_sets`
/// valid strings when `n_sets > 0`.
#[no_mangle]
pub unsafe extern "C" fn lcf_run(
    command: *const c_char,
    config_path: *const c_char,
    sets: *const *const c_char,
    n_sets: usize,
) -> LcfStatus {
    guard(|| {
        let command = str_arg(command, "command")?;
        let file = if config_path.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(config_path, "config_path")?))
        };
        let overrides = if n_sets == 0 {
            Vec::new()
        } else {
            slice_arg(sets, n_sets, "sets")?
                .iter()
                .map(|&s| str_arg(s, "set").map(str::to_string))
                .collect::<Result<Vec<_>, _>>()?
        };
        let cfg = ExperimentConfig::resolve(file.as_deref(), &overrides)?;
        let mut quiet = |_: &str| {};
        match command {
            "gen-data" => harness::cmd_gen_data(&cfg).map(drop),
            "train" => harness::cmd_train(&cfg, &mut quiet).map(drop),
            "grid-search" => harness::cmd_grid_search(&cfg, &mut quiet).map(drop),
            "evaluate" => harness::cmd_evaluate(&cfg, &mut quiet).map(drop),
            "loo-evaluate" => harness::cmd_loo_evaluate(&cfg, &mut quiet).map(drop),
            other => Err(Error::Config(format!("unknown command `{other}`"))),
        }?;
        Ok(())
    })
}

/// Generates `"toy"` or `"nonlinear"` data.
///
/// # Safety
/// `kind` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_generate(
    kind: *const c_char,
    n_samples: usize,
    seed: u64,
    out: *mut *mut LcfDataset,
) -> LcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = match str_arg(kind, "kind")? {
            "toy" => generate_toy(n_samples, seed)?,
            "nonlinear" => generate_nonlinear(n_samples, seed)?,
            other => return Err(Fail(LcfStatus::Config, format!("unknown dataset `{other}`"))),
        };
        *out = Box::into_raw(Box::new(LcfDataset { inner }));
        Ok(())
    })
}

/// Loads the dataset stored in a run directory.
///
/// # Safety
/// `run_dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_open(run_dir: *const c_char, out: *mut *mut LcfDataset) -> LcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = harness::load_dataset(&RunPaths::new(str_arg(run_dir, "run_dir")?))?;
        *out = Box::into_raw(Box::new(LcfDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_free(ds: *mut LcfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Row count, 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_n_rows(ds: *const LcfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_rows())
}

/// Feature count, 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_n_features(ds: *const LcfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_features())
}

/// Copies row `row` in raw units into `out[0..n_features]`.
///
/// # Safety
/// `ds` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_raw_row(
    ds: *const LcfDataset,
    row: usize,
    out: *mut f64,
    len: usize,
) -> LcfStatus {
    guard(|| {
        let d = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if row >= d.n_rows() {
            return Err(Fail(LcfStatus::Data, format!("row {row} of {}", d.n_rows())));
        }
        out_slice(out, len, d.n_features(), "out")?.copy_from_slice(d.raw_row(row));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_dataset_label(ds: *const LcfDataset, row: usize, label: *mut u8) -> LcfStatus {
    guard(|| {
        let d = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let y = *d
            .labels()
            .get(row)
            .ok_or_else(|| Fail(LcfStatus::Data, format!("row {row} of {}", d.n_rows())))?;
        *label.as_mut().ok_or_else(|| null("label"))? = y;
        Ok(())
    })
}

/// Loads the dataset and trained models of a run directory.
///
/// # Safety
/// `run_dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_pipeline_open(run_dir: *const c_char, out: *mut *mut LcfPipeline) -> LcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let paths = RunPaths::new(str_arg(run_dir, "run_dir")?);
        let dataset = harness::load_dataset(&paths)?;
        let models = harness::load_models(&paths, &dataset)?;
        *out = Box::into_raw(Box::new(LcfPipeline { dataset, models }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lcf_pipeline_free(p: *mut LcfPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Feature count, 0 for NULL.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_pipeline_n_features(p: *const LcfPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.dataset.n_features())
}

/// Black-box label of a raw-unit record.
///
/// # Safety
/// `p` must be a live handle; `record` must hold `len` doubles; `label`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_pipeline_predict(
    p: *const LcfPipeline,
    record: *const f64,
    len: usize,
    label: *mut u8,
) -> LcfStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        let x = slice_arg(record, len, "record")?;
        if len != p.dataset.n_features() {
            return Err(Fail(
                LcfStatus::Data,
                format!("record has {len} values, {} expected", p.dataset.n_features()),
            ));
        }
        let row = Tensor::row(p.dataset.standardizer().standardize(x)?)?;
        let y = p.models.classifier.predict(&row)?[0];
        *label.as_mut().ok_or_else(|| null("label"))? = y;
        Ok(())
    })
}

/// Counterfactual for a raw-unit record. `target` is 0 or 1, or negative to
/// flip the current prediction. Writes the counterfactual into
/// `out_cf[0..n_features]` and the black-box label of it into `out_label`.
///
/// # Safety
/// `p` must be a live handle; `record` must hold `len` doubles; `out_cf`
/// must hold `out_len` doubles; `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcf_pipeline_explain(
    p: *const LcfPipeline,
    record: *const f64,
    len: usize,
    target: i32,
    out_cf: *mut f64,
    out_len: usize,
    out_label: *mut u8,
) -> LcfStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        let x = slice_arg(record, len, "record")?;
        let target = match target {
            t if t < 0 => None,
            0 | 1 => Some(target as u8),
            t => return Err(Fail(LcfStatus::Config, format!("target {t} is not 0 or 1"))),
        };
        let dst = out_slice(out_cf, out_len, p.dataset.n_features(), "out_cf")?;
        let label = out_label.as_mut().ok_or_else(|| null("out_label"))?;
        let o = harness::explain_record(&p.models, &p.dataset, x, target)?;
        dst.copy_from_slice(&o.result.counterfactual);
        *label = o.result.predicted_cf_label;
        Ok(())
    })
}
