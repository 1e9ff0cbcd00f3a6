//! C ABI over `msrl-core`.
//!
//! Datasets and trained models cross the boundary as opaque handles that the
//! caller frees with the matching `*_free` function. Every fallible call
//! returns an [`MsrlStatus`]; on failure a human-readable message is available
//! from [`msrl_last_error`] on the same thread until the next failing call.
//! Panics never unwind into C: they are caught and reported as
//! `MSRL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use msrl_core::dataio::{load_dataset, FeatureView, MultiviewDataset};
use msrl_core::metrics::ClusteringScores;
use msrl_core::numerics::Matrix;
use msrl_core::trainer::{predict, train, Checkpoint, TrainConfig};
use msrl_core::MsrlError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Hyperparameters mirrored from the Rust training configuration.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsrlTrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub row_normalize: bool,
    pub delta_floor: f64,
}

impl From<MsrlTrainConfig> for TrainConfig {
    fn from(c: MsrlTrainConfig) -> Self {
        TrainConfig {
            alpha: c.alpha,
            beta: c.beta,
            lr: c.lr,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            dropout_rate: c.dropout_rate,
            row_normalize: c.row_normalize,
            delta_floor: c.delta_floor,
        }
    }
}

/// Opaque multiview dataset.
pub struct MsrlDataset {
    inner: MultiviewDataset,
}

/// Opaque trained model (a full checkpoint).
pub struct MsrlModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &MsrlError) -> MsrlStatus {
    match e {
        MsrlError::InvalidArgument(_) | MsrlError::ShapeMismatch { .. } => MsrlStatus::InvalidArgument,
        MsrlError::Io { .. } => MsrlStatus::Io,
        e if e.is_numerical() => MsrlStatus::Numerical,
        _ => MsrlStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MsrlStatus, String)>) -> MsrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsrlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsrlStatus::Panic
        }
    }
}

fn core_err(e: MsrlError) -> (MsrlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MsrlStatus, String) {
    (MsrlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (MsrlStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MsrlStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library defaults: alpha 5, beta 1, lr 1e-3, batch 500, 100 epochs, seed 0,
/// dropout 0.1, no column normalization, simplex floor 1e-8.
#[no_mangle]
pub extern "C" fn msrl_train_config_default() -> MsrlTrainConfig {
    let d = TrainConfig::default();
    MsrlTrainConfig {
        alpha: d.alpha,
        beta: d.beta,
        lr: d.lr,
        batch_size: d.batch_size,
        epochs: d.epochs,
        seed: d.seed,
        dropout_rate: d.dropout_rate,
        row_normalize: d.row_normalize,
        delta_floor: d.delta_floor,
    }
}

/// Loads the dataset described by a manifest JSON file.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msrl_dataset_load(manifest_path: *const c_char, out: *mut *mut MsrlDataset) -> MsrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(manifest_path)?;
        let inner = load_dataset(&path).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MsrlDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from in-memory row-major feature matrices: view `l` is
/// `num_samples × dims[l]` at `views[l]`. Data is copied.
///
/// # Safety
/// `views` and `dims` must hold `num_views` entries, and each `views[l]` must
/// point to `num_samples * dims[l]` doubles.
#[no_mangle]
pub unsafe extern "C" fn msrl_dataset_from_views(
    views: *const *const f64,
    dims: *const usize,
    num_views: usize,
    num_samples: usize,
    out: *mut *mut MsrlDataset,
) -> MsrlStatus {
    guard(|| {
        if out.is_null() || views.is_null() || dims.is_null() {
            return Err(null("views, dims or out"));
        }
        let views = std::slice::from_raw_parts(views, num_views);
        let dims = std::slice::from_raw_parts(dims, num_views);
        let mut fv = Vec::with_capacity(num_views);
        for (l, (&ptr, &dim)) in views.iter().zip(dims).enumerate() {
            if ptr.is_null() {
                return Err(null("view pointer"));
            }
            let len = num_samples
                .checked_mul(dim)
                .ok_or_else(|| (MsrlStatus::InvalidArgument, "view size overflows".to_string()))?;
            let data = std::slice::from_raw_parts(ptr, len).to_vec();
            fv.push(FeatureView {
                view_id: l,
                backbone: format!("view-{l}"),
                data: Matrix::from_vec(num_samples, dim, data).map_err(core_err)?,
            });
        }
        let inner = MultiviewDataset::new(fv, None, None).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MsrlDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msrl_dataset_num_samples(dataset: *const MsrlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msrl_dataset_num_views(dataset: *const MsrlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_views())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msrl_dataset_free(dataset: *mut MsrlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a model from scratch.
///
/// # Safety
/// `dataset` and `config` must be live pointers and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_train(
    dataset: *const MsrlDataset,
    clusters: usize,
    config: *const MsrlTrainConfig,
    out: *mut *mut MsrlModel,
) -> MsrlStatus {
    guard(|| {
        let (Some(d), Some(c)) = (dataset.as_ref(), config.as_ref()) else {
            return Err(null("dataset or config"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = train(&d.inner, clusters, &TrainConfig::from(*c)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MsrlModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msrl_model_clusters(model: *const MsrlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.clusters)
}

/// Evaluation-mode prediction in natural sample order. Writes `num_samples`
/// labels into `labels` and, when `consensus` is non-null, the row-major
/// `num_samples × clusters` consensus distributions.
///
/// # Safety
/// `labels` must hold `labels_len` entries; `consensus`, if non-null, must
/// hold `num_samples * clusters` doubles.
#[no_mangle]
pub unsafe extern "C" fn msrl_predict(
    model: *const MsrlModel,
    dataset: *const MsrlDataset,
    batch_size: usize,
    labels: *mut u32,
    labels_len: usize,
    consensus: *mut f64,
) -> MsrlStatus {
    guard(|| {
        let (Some(m), Some(d)) = (model.as_ref(), dataset.as_ref()) else {
            return Err(null("model or dataset"));
        };
        if labels.is_null() {
            return Err(null("labels"));
        }
        let n = d.inner.n();
        if labels_len < n {
            return Err((
                MsrlStatus::InvalidArgument,
                format!("label buffer holds {labels_len} entries, need {n}"),
            ));
        }
        let pred = predict(&m.inner, &d.inner, batch_size).map_err(core_err)?;
        let out = std::slice::from_raw_parts_mut(labels, n);
        for (o, &y) in out.iter_mut().zip(&pred.labels) {
            *o = y as u32;
        }
        if !consensus.is_null() {
            let p = pred.consensus.as_slice();
            std::slice::from_raw_parts_mut(consensus, p.len()).copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn msrl_model_save(model: *const MsrlModel, path: *const c_char) -> MsrlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.inner.save(&path_arg(path)?).map_err(core_err)
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_model_load(path: *const c_char, out: *mut *mut MsrlModel) -> MsrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Checkpoint::load(&path_arg(path)?).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MsrlModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msrl_model_free(model: *mut MsrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hungarian-matched accuracy, NMI and ARI of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` must hold `n` entries; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_metrics(
    pred: *const u32,
    truth: *const u32,
    n: usize,
    acc: *mut f64,
    nmi: *mut f64,
    ari: *mut f64,
) -> MsrlStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || acc.is_null() || nmi.is_null() || ari.is_null() {
            return Err(null("argument"));
        }
        let p: Vec<usize> = std::slice::from_raw_parts(pred, n).iter().map(|&x| x as usize).collect();
        let t: Vec<usize> = std::slice::from_raw_parts(truth, n).iter().map(|&x| x as usize).collect();
        let s = ClusteringScores::compute(&p, &t).map_err(core_err)?;
        *acc = s.acc;
        *nmi = s.nmi;
        *ari = s.ari;
        Ok(())
    })
}
