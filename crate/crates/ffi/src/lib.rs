//! C ABI over the prunebench model, pruning and metric APIs.
//!
//! Every fallible function returns a [`PbStatus`]; on failure a message is
//! available from [`pb_last_error`] on the same thread. Models are opaque
//! `PbModel` handles owned by the caller and released with
//! [`pb_model_free`]. Only 32-bit models are exposed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use prunebench::metrics::EfficiencyReport;
use prunebench::prune::{self, ScoreMap};
use prunebench::{seed, train, ArchId, Error, ModelGraph, SeedLineage, Tensor};

/// Opaque model handle.
pub struct PbModel {
    inner: ModelGraph<f32>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    CorruptCheckpoint = 5,
    DtypeMismatch = 6,
    InfeasibleCompression = 7,
    UnknownArch = 8,
    State = 9,
    Panic = 10,
    Other = 11,
}

/// Size and compute accounting of a model, see `pb_model_efficiency`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PbEfficiency {
    pub params_total: u64,
    pub params_nnz: u64,
    pub madds_dense: u64,
    pub madds_pruned: u64,
    pub compression_ratio: f64,
    pub theoretical_speedup: f64,
    pub fraction_pruned: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => PbStatus::Dimension,
            Error::InvalidArgument(_) | Error::Config(_) | Error::EmptySelection(_) => PbStatus::InvalidArgument,
            Error::Io { .. } | Error::Format { .. } => PbStatus::Io,
            Error::CorruptCheckpoint { .. } => PbStatus::CorruptCheckpoint,
            Error::DtypeMismatch { .. } => PbStatus::DtypeMismatch,
            Error::InfeasibleCompression(_) => PbStatus::InfeasibleCompression,
            Error::UnknownArch(_) => PbStatus::UnknownArch,
            Error::State(_) => PbStatus::State,
            _ => PbStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PbStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PbStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const PbModel) -> Result<&'a PbModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(m: *mut PbModel) -> Result<&'a mut PbModel, Failure> {
    m.as_mut().ok_or_else(|| null("model"))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null("output pointer"))
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build `arch` (`mlp_300_100`, `lenet_conv`, `cifar_tinyconv`) with
/// Glorot-uniform weights drawn from `seed`.
///
/// # Safety
/// `arch` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_build(arch: *const c_char, class_count: usize, seed: u64, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let arch: ArchId = str_arg(arch, "arch")?.parse()?;
        let mut inner = ModelGraph::<f32>::build(arch, class_count)?;
        train::init_weights(&mut inner, &mut SeedLineage::new(seed, 0).stream(seed::INIT));
        *out = Box::into_raw(Box::new(PbModel { inner }));
        Ok(())
    })
}

/// Load a 32-bit checkpoint directory.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_load(dir: *const c_char, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let dir = str_arg(dir, "dir")?;
        let inner = prunebench::model::load::<f32>(Path::new(dir))?;
        *out = Box::into_raw(Box::new(PbModel { inner }));
        Ok(())
    })
}

/// Write the model (weights, biases and masks) as a checkpoint directory.
///
/// # Safety
/// `model` must come from this library; `dir` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn pb_model_save(model: *const PbModel, dir: *const c_char) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dir = str_arg(dir, "dir")?;
        prunebench::model::save(&m.inner, Path::new(dir), None)?;
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of weights (biases excluded).
///
/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_model_param_count(model: *const PbModel, out: *mut u64) -> PbStatus {
    guard(|| {
        *out_ptr(out)? = model_ref(model)?.inner.param_count() as u64;
        Ok(())
    })
}

/// Number of unmasked weights.
///
/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_model_nnz(model: *const PbModel, out: *mut u64) -> PbStatus {
    guard(|| {
        *out_ptr(out)? = model_ref(model)?.inner.nnz() as u64;
        Ok(())
    })
}

/// Elements per input example and number of classes.
///
/// # Safety
/// `model` must come from this library; both outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_model_dims(model: *const PbModel, input_len: *mut usize, class_count: *mut usize) -> PbStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        *out_ptr(input_len)? = m.input_shape.iter().product();
        *out_ptr(class_count)? = m.class_count;
        Ok(())
    })
}

/// Logits for `batch` examples. `input` holds `batch * input_len` floats,
/// `logits` receives `batch * class_count` floats.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pb_model_forward(
    model: *const PbModel,
    input: *const f32,
    input_len: usize,
    batch: usize,
    logits: *mut f32,
    logits_len: usize,
) -> PbStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        if input.is_null() || logits.is_null() {
            return Err(null("buffer"));
        }
        let per: usize = m.input_shape.iter().product();
        if batch == 0 || input_len != batch * per || logits_len != batch * m.class_count {
            return Err(Failure(
                PbStatus::Dimension,
                format!(
                    "batch {batch} needs {} inputs and {} logits, got {input_len} and {logits_len}",
                    batch * per,
                    batch * m.class_count
                ),
            ));
        }
        let data = std::slice::from_raw_parts(input, input_len).to_vec();
        let mut shape = vec![batch];
        shape.extend_from_slice(&m.input_shape);
        let y = m.predict(&Tensor::new(shape, data)?)?;
        std::slice::from_raw_parts_mut(logits, logits_len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Prune the lowest-|w| `fraction` of the candidate weights, ranked across
/// the whole network (`global`) or within each layer.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pb_prune_magnitude(model: *mut PbModel, fraction: f64, global: bool, exclude_classifier: bool) -> PbStatus {
    guard(|| {
        let m = &mut model_mut(model)?.inner;
        let scores = prune::score_magnitude(m, exclude_classifier);
        let update = if global {
            prune::select_global(&scores, fraction)?
        } else {
            prune::select_layerwise(&scores, fraction)?
        };
        prune::apply_masks(m, &scores, update)?;
        Ok(())
    })
}

/// Mask each unmasked candidate weight independently with probability
/// `fraction`, drawing from `seed`.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pb_prune_random(model: *mut PbModel, fraction: f64, seed: u64, exclude_classifier: bool) -> PbStatus {
    guard(|| {
        let m = &mut model_mut(model)?.inner;
        let scores: ScoreMap = prune::score_magnitude(m, exclude_classifier);
        let mut rng = SeedLineage::new(seed, 0).stream(seed::RANDOM_PRUNE);
        let update = prune::select_random(&scores, fraction, &mut rng)?;
        prune::apply_masks(m, &scores, update)?;
        Ok(())
    })
}

/// Compression ratio, theoretical speedup and the counts behind them.
///
/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_model_efficiency(model: *const PbModel, out: *mut PbEfficiency) -> PbStatus {
    guard(|| {
        let r = EfficiencyReport::of(&model_ref(model)?.inner)?;
        *out_ptr(out)? = PbEfficiency {
            params_total: r.params_total as u64,
            params_nnz: r.params_nnz as u64,
            madds_dense: r.madds_dense_model,
            madds_pruned: r.madds_pruned_model,
            compression_ratio: r.compression_ratio,
            theoretical_speedup: r.theoretical_speedup,
            fraction_pruned: r.fraction_pruned,
        };
        Ok(())
    })
}

/// Architecture id as a newly allocated string; release it with
/// [`pb_string_free`]. NULL for models without a registered architecture.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pb_model_arch(model: *const PbModel) -> *mut c_char {
    match model.as_ref().and_then(|m| m.inner.arch) {
        Some(a) => CString::new(a.as_str()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
