//! C ABI over `mihe-core`.
//!
//! Datasets and dictionaries cross the boundary as opaque handles that the
//! caller releases with the matching `_free` function. Every fallible call
//! returns a [`MiheStatus`]; on failure [`mihe_last_error`] describes the
//! problem for the calling thread.
//!
//! Matrices passed in are row-major with one spectrum per row. Matrices passed
//! out are column-major with one dictionary column after another.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mihe_core::data::{
    load_dataset, load_dictionary, save_dictionary, Bag, BagDataset, Dictionary, HyperParams,
    Label, NormPolicy,
};
use mihe_core::detect::{Detector, DEFAULT_RIDGE};
use mihe_core::eval::{auc_of, ScoreSet};
use mihe_core::mihe::{ista_settings, train};
use mihe_core::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiheStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    Numerical = 6,
    Panic = 7,
}

impl From<&Error> for MiheStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => MiheStatus::Io,
            Error::Parse { .. } => MiheStatus::Parse,
            Error::DimensionMismatch { .. } => MiheStatus::DimensionMismatch,
            Error::Invalid(_) => MiheStatus::InvalidArgument,
            Error::Numerical(_) => MiheStatus::Numerical,
        }
    }
}

/// Training settings. A `rho` of zero or less selects the automatic weight.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiheParams {
    pub p: f64,
    pub rho: f64,
    pub beta: f64,
    pub lambda: f64,
    pub n_targets: usize,
    pub n_backgrounds: usize,
    pub max_outer_iters: usize,
    pub step_size: f64,
    pub obj_tol: f64,
    pub ista_iters: usize,
    pub ista_tol: f64,
    pub nonnegative: bool,
    pub seed: u64,
}

impl From<&HyperParams> for MiheParams {
    fn from(h: &HyperParams) -> Self {
        MiheParams {
            p: h.p,
            rho: h.rho.unwrap_or(0.0),
            beta: h.beta,
            lambda: h.lambda,
            n_targets: h.n_targets,
            n_backgrounds: h.n_backgrounds,
            max_outer_iters: h.max_outer_iters,
            step_size: h.step_size,
            obj_tol: h.obj_tol,
            ista_iters: h.ista_iters,
            ista_tol: h.ista_tol,
            nonnegative: h.nonnegative,
            seed: h.seed,
        }
    }
}

impl From<&MiheParams> for HyperParams {
    fn from(c: &MiheParams) -> Self {
        HyperParams {
            p: c.p,
            rho: (c.rho > 0.0).then_some(c.rho),
            beta: c.beta,
            lambda: c.lambda,
            n_targets: c.n_targets,
            n_backgrounds: c.n_backgrounds,
            max_outer_iters: c.max_outer_iters,
            step_size: c.step_size,
            obj_tol: c.obj_tol,
            ista_iters: c.ista_iters,
            ista_tol: c.ista_tol,
            nonnegative: c.nonnegative,
            seed: c.seed,
        }
    }
}

/// Opaque collection of labeled bags.
pub struct MiheDataset {
    bags: Vec<Bag>,
}

/// Opaque target/background dictionary.
pub struct MiheDictionary {
    inner: Dictionary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(MiheStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MiheStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MiheStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MiheStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure for [`mihe_last_error`] and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MiheStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MiheStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MiheStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// `rows × cols` row-major buffer as a `cols × rows` matrix (one spectrum per column).
unsafe fn spectra_arg(
    data: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what} size overflows")))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(DMatrix::from_column_slice(cols, rows, slice))
}

/// Message for the most recent failed call on this thread; empty after a
/// success. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mihe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Writes the default training settings to `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `MiheParams`.
#[no_mangle]
pub unsafe extern "C" fn mihe_params_default(out: *mut MiheParams) -> MiheStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(MiheParams::from(&HyperParams::default()));
        Ok(())
    })
}

/// Creates an empty dataset.
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mihe_dataset_new(out: *mut *mut MiheDataset) -> MiheStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(Box::into_raw(Box::new(MiheDataset { bags: Vec::new() })));
        Ok(())
    })
}

/// Appends a bag of `n_instances` spectra with `n_bands` values each.
///
/// # Safety
/// `dataset` must come from this library; `id` must be a NUL-terminated
/// string; `data` must hold `n_instances * n_bands` values.
#[no_mangle]
pub unsafe extern "C" fn mihe_dataset_add_bag(
    dataset: *mut MiheDataset,
    id: *const c_char,
    positive: bool,
    data: *const f64,
    n_instances: usize,
    n_bands: usize,
) -> MiheStatus {
    guard(|| {
        let ds = dataset.as_mut().ok_or_else(|| null("dataset"))?;
        let id = path_arg(id, "id")?.to_string_lossy().into_owned();
        let instances = spectra_arg(data, n_instances, n_bands, "data")?;
        let label = if positive { Label::Positive } else { Label::Negative };
        if let Some(first) = ds.bags.first() {
            if first.dim() != n_bands {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: n_bands,
                    context: "bag bands".into(),
                }
                .into());
            }
        }
        ds.bags.push(Bag::new(id, label, instances)?);
        Ok(())
    })
}

/// Loads a dataset from a bag manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated path; `out` must point to writable
/// memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mihe_dataset_load(
    manifest: *const c_char,
    out: *mut *mut MiheDataset,
) -> MiheStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(manifest, "manifest")?;
        let ds = load_dataset(&path)?;
        out.write(Box::into_raw(Box::new(MiheDataset {
            bags: ds.bags().to_vec(),
        })));
        Ok(())
    })
}

/// Number of bags in `dataset`, or 0 for null.
///
/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mihe_dataset_bag_count(dataset: *const MiheDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.bags.len())
}

/// # Safety
/// `dataset` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mihe_dataset_free(dataset: *mut MiheDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a dictionary. `final_objective` may be null.
///
/// # Safety
/// Handles must come from this library; `params` must point to a valid
/// `MiheParams`; `out` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mihe_train(
    dataset: *const MiheDataset,
    params: *const MiheParams,
    out: *mut *mut MiheDictionary,
    final_objective: *mut f64,
) -> MiheStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let params = HyperParams::from(params.as_ref().ok_or_else(|| null("params"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        let data = BagDataset::new(ds.bags.clone())?;
        let state = train(&data, &params, None)?;
        if !final_objective.is_null() {
            final_objective.write(state.final_objective());
        }
        out.write(Box::into_raw(Box::new(MiheDictionary {
            inner: state.dictionary,
        })));
        Ok(())
    })
}

/// Loads a dictionary or model file; columns must be unit norm.
///
/// # Safety
/// `path` must be a NUL-terminated path; `out` must point to writable memory
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_load(
    path: *const c_char,
    out: *mut *mut MiheDictionary,
) -> MiheStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let inner = load_dictionary(&path, NormPolicy::Strict)?;
        out.write(Box::into_raw(Box::new(MiheDictionary { inner })));
        Ok(())
    })
}

/// # Safety
/// `dict` must come from this library; `path` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_save(
    dict: *const MiheDictionary,
    path: *const c_char,
) -> MiheStatus {
    guard(|| {
        let dict = dict.as_ref().ok_or_else(|| null("dict"))?;
        let path = path_arg(path, "path")?;
        save_dictionary(&dict.inner, &path, NormPolicy::Strict)?;
        Ok(())
    })
}

/// Band count and target/background column counts. Any output may be null.
///
/// # Safety
/// `dict` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_shape(
    dict: *const MiheDictionary,
    bands: *mut usize,
    targets: *mut usize,
    backgrounds: *mut usize,
) -> MiheStatus {
    guard(|| {
        let d = &dict.as_ref().ok_or_else(|| null("dict"))?.inner;
        for (ptr, v) in [(bands, d.dim()), (targets, d.n_targets()), (backgrounds, d.n_backgrounds())] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}

/// Copies the target columns (`bands × targets`, column-major) into `out`,
/// which must hold exactly `len` values.
///
/// # Safety
/// `dict` must come from this library; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_targets(
    dict: *const MiheDictionary,
    out: *mut f64,
    len: usize,
) -> MiheStatus {
    copy_columns(dict, out, len, |d| d.targets())
}

/// Copies the background columns (`bands × backgrounds`, column-major).
///
/// # Safety
/// As for [`mihe_dictionary_targets`].
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_backgrounds(
    dict: *const MiheDictionary,
    out: *mut f64,
    len: usize,
) -> MiheStatus {
    copy_columns(dict, out, len, |d| d.backgrounds())
}

unsafe fn copy_columns(
    dict: *const MiheDictionary,
    out: *mut f64,
    len: usize,
    pick: impl Fn(&Dictionary) -> &DMatrix<f64>,
) -> MiheStatus {
    guard(|| {
        let m = pick(&dict.as_ref().ok_or_else(|| null("dict"))?.inner);
        if out.is_null() {
            return Err(null("out"));
        }
        if len != m.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", m.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// # Safety
/// `dict` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mihe_dictionary_free(dict: *mut MiheDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

unsafe fn score_into(
    detector: &Detector,
    data: *const f64,
    n: usize,
    bands: usize,
    out: *mut f64,
) -> Result<(), Failure> {
    if detector.dim() != bands {
        return Err(Error::DimensionMismatch {
            expected: detector.dim(),
            found: bands,
            context: "instance bands".into(),
        }
        .into());
    }
    if out.is_null() {
        return Err(null("out"));
    }
    let x = spectra_arg(data, n, bands, "data")?;
    let scores = detector.score_matrix(&x)?;
    std::slice::from_raw_parts_mut(out, n).copy_from_slice(&scores);
    Ok(())
}

/// ACE scores of `n` spectra against the target columns, with background
/// statistics estimated from `n_background` spectra.
///
/// # Safety
/// `dict` must come from this library; `background` must hold
/// `n_background * bands` values, `data` `n * bands` values and `out` `n`.
#[no_mangle]
pub unsafe extern "C" fn mihe_score_ace(
    dict: *const MiheDictionary,
    background: *const f64,
    n_background: usize,
    data: *const f64,
    n: usize,
    bands: usize,
    out: *mut f64,
) -> MiheStatus {
    guard(|| {
        let dict = &dict.as_ref().ok_or_else(|| null("dict"))?.inner;
        let bg = spectra_arg(background, n_background, bands, "background")?;
        let detector = Detector::ace(dict, &bg, DEFAULT_RIDGE)?;
        score_into(&detector, data, n, bands, out)
    })
}

/// Hybrid-detector scores; sparse coding uses `lambda`, `ista_iters`,
/// `ista_tol` and `nonnegative` from `params`.
///
/// # Safety
/// `dict` must come from this library; `params` must be valid; `data` must
/// hold `n * bands` values and `out` `n`.
#[no_mangle]
pub unsafe extern "C" fn mihe_score_hd(
    dict: *const MiheDictionary,
    params: *const MiheParams,
    data: *const f64,
    n: usize,
    bands: usize,
    out: *mut f64,
) -> MiheStatus {
    guard(|| {
        let dict = &dict.as_ref().ok_or_else(|| null("dict"))?.inner;
        let params = HyperParams::from(params.as_ref().ok_or_else(|| null("params"))?);
        let detector = Detector::hybrid(dict, ista_settings(&params))?;
        score_into(&detector, data, n, bands, out)
    })
}

/// Area under the ROC curve of `n` scores with nonzero `labels` marking
/// targets.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mihe_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> MiheStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null("scores, labels or out"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&v| v != 0).collect();
        out.write(auc_of(&ScoreSet::from_labeled(s, &l)?)?);
        Ok(())
    })
}
