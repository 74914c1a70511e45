//! C ABI for the adversarial-training toolkit (header: `include/angular_at.h`).
//!
//! Conventions, shared by every entry point:
//! - Fallible calls return an `int32_t` status (`AAT_OK` = 0); results go
//!   through out-pointers that are written only on success.
//! - `aat_last_error` returns a thread-local, NUL-terminated message for the
//!   most recent failure on the calling thread; the pointer stays valid until
//!   the next failing call on that thread.
//! - Handles are opaque, created by `aat_*_load`/`aat_*_generate*`/
//!   `aat_model_train`, and released exactly once with the matching
//!   `aat_*_free`. A null handle in a getter reads as 0; anywhere else it is
//!   `AAT_ERR_NULL_ARGUMENT`.
//! - Panics never unwind across the boundary: they are caught and reported
//!   as `AAT_ERR_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use angular_at::attack::AttackSpec;
use angular_at::data::{gen_blobs, load_dataset, save_dataset};
use angular_at::error::Error;
use angular_at::eval::{natural_accuracy, robust_accuracy};
use angular_at::model::init_parameters;
use angular_at::storage::{load_checkpoint, save_checkpoint};
use angular_at::train::fit;
use angular_at::{Classifier, Dataset, ModelSpec, Objective, Tensor, TrainSpec};

pub const AAT_OK: i32 = 0;
pub const AAT_ERR_NULL_ARGUMENT: i32 = 1;
pub const AAT_ERR_INVALID: i32 = 2;
pub const AAT_ERR_IO: i32 = 3;
pub const AAT_ERR_NUMERIC: i32 = 4;
pub const AAT_ERR_FORMAT: i32 = 5;
pub const AAT_ERR_INTERNAL: i32 = 6;

/// Opaque classifier handle.
pub struct AatModel(Classifier);

/// Opaque dataset handle.
pub struct AatDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let owned = CString::new(message.replace('\0', "?")).expect("NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

/// Record the error and translate it to a status code (the same numbering the
/// CLI uses for exit codes).
fn fail(e: &Error) -> i32 {
    set_error(&e.to_string());
    e.exit_code()
}

fn fail_invalid(message: &str) -> i32 {
    set_error(message);
    AAT_ERR_INVALID
}

fn fail_null(what: &str) -> i32 {
    set_error(&format!("{what} must not be null"));
    AAT_ERR_NULL_ARGUMENT
}

/// Run `f`, converting a panic into `AAT_ERR_INTERNAL` instead of unwinding
/// into the caller.
fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic; see stderr for details");
            AAT_ERR_INTERNAL
        }
    }
}

/// Read a required UTF-8 C string argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail_invalid(&format!("{what} must be valid UTF-8")))
}

/// Write a freshly boxed handle through an out-pointer.
///
/// # Safety
/// `out` must be null or valid for writes.
unsafe fn deliver<T>(out: *mut *mut T, value: T, what: &str) -> i32 {
    if out.is_null() {
        return fail_null(what);
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    AAT_OK
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread (empty string
/// if none). Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn aat_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// --- datasets ---------------------------------------------------------------

/// Generate Gaussian blobs with class means on a circle.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_generate_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    out: *mut *mut AatDataset,
) -> i32 {
    guard(|| match gen_blobs(classes, dim, per_class, spread, seed) {
        Ok(ds) => unsafe { deliver(out, AatDataset(ds), "out") },
        Err(e) => fail(&e),
    })
}

/// Load a dataset written by `aat_dataset_save` or the CLI (`stem.features.aat`,
/// `stem.labels.aat`, `stem.manifest`).
///
/// # Safety
/// `stem` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_load(stem: *const c_char, out: *mut *mut AatDataset) -> i32 {
    guard(|| {
        let stem = match unsafe { required_str(stem, "stem") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match load_dataset(Path::new(stem)) {
            Ok(ds) => unsafe { deliver(out, AatDataset(ds), "out") },
            Err(e) => fail(&e),
        }
    })
}

/// Write the dataset's three files under `stem`.
///
/// # Safety
/// `dataset` must be a live handle; `stem` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_save(dataset: *const AatDataset, stem: *const c_char) -> i32 {
    guard(|| {
        let Some(ds) = (unsafe { dataset.as_ref() }) else {
            return fail_null("dataset");
        };
        let stem = match unsafe { required_str(stem, "stem") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match save_dataset(Path::new(stem), &ds.0) {
            Ok(()) => AAT_OK,
            Err(e) => fail(&e),
        }
    })
}

/// Release a dataset handle (null is a no-op).
///
/// # Safety
/// `dataset` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_free(dataset: *mut AatDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Number of examples (0 for a null handle).
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_len(dataset: *const AatDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |ds| ds.0.len())
}

/// Feature dimension (0 for a null handle).
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_input_dim(dataset: *const AatDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |ds| ds.0.input_dim())
}

/// Number of classes (0 for a null handle).
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aat_dataset_classes(dataset: *const AatDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |ds| ds.0.classes())
}

// --- models -------------------------------------------------------------------

/// Train a classifier on `train_data`.
///
/// `objective` is one of `angular_at`, `pgd_at_plain`, `pgd_at_he`, `natural`.
/// `epochs` = 0 keeps the objective's preset epoch count. `layer_dims` may be
/// null for the default architecture; otherwise it must hold `layer_dims_len`
/// entries starting with the dataset's feature dimension. `workers` = 0 runs
/// single-threaded; results are identical for any worker count.
///
/// # Safety
/// `train_data` must be a live handle; `objective` NUL-terminated;
/// `layer_dims` null or valid for `layer_dims_len` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aat_model_train(
    train_data: *const AatDataset,
    objective: *const c_char,
    seed: u64,
    epochs: u32,
    layer_dims: *const usize,
    layer_dims_len: usize,
    workers: usize,
    out: *mut *mut AatModel,
) -> i32 {
    guard(|| {
        let Some(ds) = (unsafe { train_data.as_ref() }) else {
            return fail_null("train_data");
        };
        let objective = match unsafe { required_str(objective, "objective") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let objective = match Objective::from_str(&objective.replace('-', "_")) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        let mut spec = TrainSpec::for_objective(objective, seed);
        if epochs > 0 {
            spec.epochs = epochs as usize;
        }
        if let Err(e) = spec.validate() {
            return fail(&e);
        }

        let input_dim = ds.0.input_dim();
        let dims = if layer_dims.is_null() {
            vec![input_dim, 128, 64, 32]
        } else {
            let dims = unsafe { std::slice::from_raw_parts(layer_dims, layer_dims_len) }.to_vec();
            if dims.first() != Some(&input_dim) {
                return fail_invalid(&format!(
                    "layer_dims must start with the dataset input dim {input_dim}, got {dims:?}"
                ));
            }
            dims
        };
        let arch = ModelSpec {
            layer_dims: dims,
            classes: ds.0.classes(),
            head: spec.objective.head_kind(),
            scale: spec.s,
        };
        if let Err(e) = arch.validate() {
            return fail(&e);
        }
        let clf = match init_parameters(&arch, spec.seed) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        match fit(clf, &ds.0, &spec, workers.max(1)) {
            Ok((trained, _records)) => unsafe { deliver(out, AatModel(trained), "out") },
            Err(e) => fail(&e),
        }
    })
}

/// Load a checkpoint written by `aat_model_save` or the CLI.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_model_load(path: *const c_char, out: *mut *mut AatModel) -> i32 {
    guard(|| {
        let path = match unsafe { required_str(path, "path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(clf) => unsafe { deliver(out, AatModel(clf), "out") },
            Err(e) => fail(&e),
        }
    })
}

/// Write the model to a checkpoint file (creates parent directories' files
/// only; the directory itself must exist).
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn aat_model_save(model: *const AatModel, path: *const c_char) -> i32 {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail_null("model");
        };
        let path = match unsafe { required_str(path, "path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match save_checkpoint(&m.0, Path::new(path)) {
            Ok(()) => AAT_OK,
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle (null is a no-op).
///
/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn aat_model_free(model: *mut AatModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Model input dimension (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aat_model_input_dim(model: *const AatModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.0.input_dim())
}

/// Number of classes (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aat_model_classes(model: *const AatModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.0.classes())
}

/// Order-independent FNV checksum over all parameters, matching the value the
/// CLI prints after training.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_model_param_checksum(model: *const AatModel, out: *mut u64) -> i32 {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail_null("model");
        };
        if out.is_null() {
            return fail_null("out");
        }
        unsafe { *out = m.0.param_checksum() };
        AAT_OK
    })
}

/// Classify `rows` examples of dimension `dim` (row-major `features`),
/// writing one label per row into `out_labels`.
///
/// # Safety
/// `model` must be a live handle; `features` valid for `rows * dim` reads;
/// `out_labels` valid for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn aat_model_predict(
    model: *const AatModel,
    features: *const f64,
    rows: usize,
    dim: usize,
    out_labels: *mut i64,
) -> i32 {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail_null("model");
        };
        if features.is_null() {
            return fail_null("features");
        }
        if out_labels.is_null() {
            return fail_null("out_labels");
        }
        if rows == 0 {
            return fail_invalid("rows must be >= 1");
        }
        if dim != m.0.input_dim() {
            return fail_invalid(&format!(
                "feature dim {dim} does not match the model input dim {}",
                m.0.input_dim()
            ));
        }
        let data = unsafe { std::slice::from_raw_parts(features, rows * dim) }.to_vec();
        let x = match Tensor::new(vec![rows, dim], data) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match m.0.predict(&x) {
            Ok(labels) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out_labels, rows) };
                for (slot, label) in out.iter_mut().zip(labels) {
                    *slot = label as i64;
                }
                AAT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

// --- evaluation -----------------------------------------------------------------

/// Fraction of `test_data` classified correctly.
///
/// # Safety
/// `model` and `test_data` must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_eval_natural_accuracy(
    model: *const AatModel,
    test_data: *const AatDataset,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail_null("model");
        };
        let Some(ds) = (unsafe { test_data.as_ref() }) else {
            return fail_null("test_data");
        };
        if out.is_null() {
            return fail_null("out");
        }
        match natural_accuracy(&m.0, &ds.0) {
            Ok(acc) => {
                unsafe { *out = acc };
                AAT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Accuracy under an evaluation attack preset: `pgd20`, `pgd500`, `cw20`,
/// `spsa`, or `none` (no perturbation). `epsilon` = 0 keeps the preset's
/// radius. `workers` = 0 runs single-threaded; results are identical for any
/// worker count.
///
/// # Safety
/// `model` and `test_data` must be live handles; `attack` NUL-terminated;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn aat_eval_robust_accuracy(
    model: *const AatModel,
    test_data: *const AatDataset,
    attack: *const c_char,
    epsilon: f64,
    seed: u64,
    workers: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail_null("model");
        };
        let Some(ds) = (unsafe { test_data.as_ref() }) else {
            return fail_null("test_data");
        };
        let name = match unsafe { required_str(attack, "attack") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        if out.is_null() {
            return fail_null("out");
        }
        let spec = match AttackSpec::eval_preset(name, seed) {
            Ok(Some(mut spec)) => {
                if epsilon != 0.0 {
                    spec.epsilon = epsilon;
                }
                if let Err(e) = spec.validate() {
                    return fail(&e);
                }
                Some(spec)
            }
            Ok(None) => None,
            Err(e) => return fail(&e),
        };
        let result = match &spec {
            Some(spec) => robust_accuracy(&m.0, &ds.0, spec, workers.max(1)),
            None => natural_accuracy(&m.0, &ds.0),
        };
        match result {
            Ok(acc) => {
                unsafe { *out = acc };
                AAT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(aat_last_error()) }
            .to_string_lossy()
            .into_owned()
    }

    fn make_blobs() -> *mut AatDataset {
        let mut ds: *mut AatDataset = ptr::null_mut();
        let code = unsafe { aat_dataset_generate_blobs(2, 4, 10, 0.05, 1, &mut ds) };
        assert_eq!(code, AAT_OK, "{}", last_error());
        assert!(!ds.is_null());
        ds
    }

    fn train_natural(ds: *const AatDataset) -> *mut AatModel {
        let objective = CString::new("natural").unwrap();
        let dims = [4usize, 8, 4];
        let mut model: *mut AatModel = ptr::null_mut();
        let code = unsafe {
            aat_model_train(
                ds,
                objective.as_ptr(),
                3,
                2,
                dims.as_ptr(),
                dims.len(),
                1,
                &mut model,
            )
        };
        assert_eq!(code, AAT_OK, "{}", last_error());
        assert!(!model.is_null());
        model
    }

    #[test]
    fn version_and_initial_error_are_readable() {
        let version = unsafe { CStr::from_ptr(aat_version()) }.to_str().unwrap();
        assert!(!version.is_empty());
        // No failure on this thread yet: the message is the empty string.
        assert_eq!(last_error(), "");
    }

    #[test]
    fn lifecycle_train_save_load_predict() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_blobs();
        assert_eq!(unsafe { aat_dataset_len(ds) }, 20);
        assert_eq!(unsafe { aat_dataset_input_dim(ds) }, 4);
        assert_eq!(unsafe { aat_dataset_classes(ds) }, 2);

        let model = train_natural(ds);
        assert_eq!(unsafe { aat_model_input_dim(model) }, 4);
        assert_eq!(unsafe { aat_model_classes(model) }, 2);

        let path = CString::new(dir.path().join("m.aatc").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { aat_model_save(model, path.as_ptr()) }, AAT_OK);

        let mut reloaded: *mut AatModel = ptr::null_mut();
        assert_eq!(
            unsafe { aat_model_load(path.as_ptr(), &mut reloaded) },
            AAT_OK
        );
        let (mut sum_a, mut sum_b) = (0u64, 0u64);
        assert_eq!(
            unsafe { aat_model_param_checksum(model, &mut sum_a) },
            AAT_OK
        );
        assert_eq!(
            unsafe { aat_model_param_checksum(reloaded, &mut sum_b) },
            AAT_OK
        );
        assert_eq!(sum_a, sum_b, "checkpoints round-trip parameters exactly");

        let features = [0.25f64; 8];
        let mut labels = [-1i64; 2];
        let code =
            unsafe { aat_model_predict(reloaded, features.as_ptr(), 2, 4, labels.as_mut_ptr()) };
        assert_eq!(code, AAT_OK, "{}", last_error());
        for l in labels {
            assert!((0..2).contains(&l), "label {l} out of range");
        }

        unsafe {
            aat_model_free(model);
            aat_model_free(reloaded);
            aat_dataset_free(ds);
        }
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_blobs();
        let stem = CString::new(dir.path().join("blobs").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { aat_dataset_save(ds, stem.as_ptr()) }, AAT_OK);
        let mut back: *mut AatDataset = ptr::null_mut();
        assert_eq!(
            unsafe { aat_dataset_load(stem.as_ptr(), &mut back) },
            AAT_OK
        );
        assert_eq!(unsafe { aat_dataset_len(back) }, 20);
        unsafe {
            aat_dataset_free(ds);
            aat_dataset_free(back);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_bounded() {
        let ds = make_blobs();
        let model = train_natural(ds);
        let mut natural = f64::NAN;
        assert_eq!(
            unsafe { aat_eval_natural_accuracy(model, ds, &mut natural) },
            AAT_OK
        );
        assert!((0.0..=1.0).contains(&natural), "accuracy {natural}");

        let attack = CString::new("pgd20").unwrap();
        let run = || {
            let mut acc = f64::NAN;
            let code = unsafe {
                aat_eval_robust_accuracy(model, ds, attack.as_ptr(), 0.05, 11, 2, &mut acc)
            };
            assert_eq!(code, AAT_OK, "{}", last_error());
            acc
        };
        let first = run();
        let second = run();
        assert!((0.0..=1.0).contains(&first), "robust accuracy {first}");
        assert_eq!(first, second, "same seed, same result");

        let none = CString::new("none").unwrap();
        let mut clean = f64::NAN;
        let code =
            unsafe { aat_eval_robust_accuracy(model, ds, none.as_ptr(), 0.0, 11, 1, &mut clean) };
        assert_eq!(code, AAT_OK, "{}", last_error());
        assert_eq!(clean, natural, "'none' is the clean pass");

        unsafe {
            aat_model_free(model);
            aat_dataset_free(ds);
        }
    }

    #[test]
    fn errors_set_codes_and_messages() {
        // Null arguments.
        let mut ds: *mut AatDataset = ptr::null_mut();
        let code = unsafe { aat_dataset_load(ptr::null(), &mut ds) };
        assert_eq!(code, AAT_ERR_NULL_ARGUMENT);
        assert!(last_error().contains("stem"), "{}", last_error());

        // Missing file -> I/O.
        let stem = CString::new("/no/such/dataset").unwrap();
        assert_eq!(
            unsafe { aat_dataset_load(stem.as_ptr(), &mut ds) },
            AAT_ERR_IO
        );

        // Corrupt checkpoint -> format.
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.aatc");
        std::fs::write(&bad, b"AATC but not really").unwrap();
        let bad_c = CString::new(bad.to_str().unwrap()).unwrap();
        let mut model: *mut AatModel = ptr::null_mut();
        assert_eq!(
            unsafe { aat_model_load(bad_c.as_ptr(), &mut model) },
            AAT_ERR_FORMAT
        );
        assert!(model.is_null(), "out must stay untouched on failure");

        // Unknown objective and unknown attack -> invalid.
        let blobs = make_blobs();
        let objective = CString::new("sorta_robust").unwrap();
        let code = unsafe {
            aat_model_train(
                blobs,
                objective.as_ptr(),
                0,
                1,
                ptr::null(),
                0,
                1,
                &mut model,
            )
        };
        assert_eq!(code, AAT_ERR_INVALID);
        assert!(last_error().contains("sorta_robust"), "{}", last_error());

        let trained = train_natural(blobs);
        let attack = CString::new("pgd7").unwrap();
        let mut acc = 0.0;
        let code = unsafe {
            aat_eval_robust_accuracy(trained, blobs, attack.as_ptr(), 0.0, 0, 1, &mut acc)
        };
        assert_eq!(code, AAT_ERR_INVALID);
        assert!(
            last_error().contains("pgd20"),
            "message lists presets: {}",
            last_error()
        );

        // Architecture must match the data.
        let dims = [3usize, 8, 4];
        let code = unsafe {
            aat_model_train(
                blobs,
                CString::new("natural").unwrap().as_ptr(),
                0,
                1,
                dims.as_ptr(),
                dims.len(),
                1,
                &mut model,
            )
        };
        assert_eq!(code, AAT_ERR_INVALID);
        assert!(last_error().contains("layer_dims"), "{}", last_error());

        // Dimension mismatch in predict.
        let features = [0.0f64; 6];
        let mut labels = [0i64; 2];
        let code =
            unsafe { aat_model_predict(trained, features.as_ptr(), 2, 3, labels.as_mut_ptr()) };
        assert_eq!(code, AAT_ERR_INVALID);

        unsafe {
            aat_model_free(trained);
            aat_dataset_free(blobs);
        }
    }

    #[test]
    fn null_handle_getters_read_as_zero() {
        assert_eq!(unsafe { aat_dataset_len(ptr::null()) }, 0);
        assert_eq!(unsafe { aat_dataset_input_dim(ptr::null()) }, 0);
        assert_eq!(unsafe { aat_dataset_classes(ptr::null()) }, 0);
        assert_eq!(unsafe { aat_model_input_dim(ptr::null()) }, 0);
        assert_eq!(unsafe { aat_model_classes(ptr::null()) }, 0);
        unsafe {
            aat_model_free(ptr::null_mut());
            aat_dataset_free(ptr::null_mut());
        }
    }
}
