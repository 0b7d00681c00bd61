//! C ABI over the EEG-Deformer library.
//!
//! Conventions, shared by every entry point:
//!
//! * Handles (`EegdDataset`, `EegdModel`, `EegdCheckpoint`) are opaque; they
//!   are created by this library and released only through the matching
//!   `_free`, which tolerates NULL.
//! * Functions return `EEGD_OK` (0) on success or a nonzero status; the
//!   failure message is retrievable per thread via [`eegd_last_error`]
//!   until the next library call on that thread.
//! * Configuration is passed as TOML text, not file paths, so callers keep
//!   control of their I/O.
//! * Panics never cross the boundary; they become `EEGD_ERR_PANIC`.
//!
//! The matching declarations live in `include/eeg_deformer.h`, which is
//! written by hand; the `abi` integration test keeps the two in sync.

// One safety contract covers every entry point and lives in the module doc
// and the header; repeating it per function would only drift.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use eeg_deformer::data::{
    all_segments, generate_synthetic, read_dataset, train_val_split, write_dataset, EEGDataset,
    SyntheticSpec,
};
use eeg_deformer::model::{Deformer, ModelConfig};
use eeg_deformer::rng::RngState;
use eeg_deformer::saliency::saliency_map;
use eeg_deformer::tensor::{no_grad, Tensor};
use eeg_deformer::train::{
    evaluate, fit, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig,
};
use eeg_deformer::Error;

pub const EEGD_OK: c_int = 0;
/// Caller mistake: bad configuration, shape, domain, or name.
pub const EEGD_ERR_USAGE: c_int = 1;
/// Runtime failure: I/O, corrupt file, training breakdown.
pub const EEGD_ERR_RUNTIME: c_int = 2;
/// A required pointer argument was NULL.
pub const EEGD_ERR_NULL: c_int = 3;
/// A string argument was not valid UTF-8.
pub const EEGD_ERR_UTF8: c_int = 4;
/// An internal panic was caught at the boundary.
pub const EEGD_ERR_PANIC: c_int = 5;

pub struct EegdDataset(EEGDataset);
pub struct EegdModel(Deformer<f32>);
pub struct EegdCheckpoint(Checkpoint);

type CallResult = std::result::Result<(), (String, c_int)>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn store_error(msg: &str, code: c_int) -> c_int {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
    code
}

fn fail(e: Error) -> (String, c_int) {
    let code = if e.is_usage() {
        EEGD_ERR_USAGE
    } else {
        EEGD_ERR_RUNTIME
    };
    (e.to_string(), code)
}

/// Runs one boundary call: clears the error slot on success, records the
/// message on failure, and converts panics into a status code.
fn guarded(f: impl FnOnce() -> CallResult) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
            EEGD_OK
        }
        Ok(Err((msg, code))) => store_error(&msg, code),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic crossed the language boundary".into());
            store_error(&msg, EEGD_ERR_PANIC)
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, (String, c_int)> {
    if ptr.is_null() {
        return Err((format!("{name} is null"), EEGD_ERR_NULL));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (format!("{name} is not valid UTF-8"), EEGD_ERR_UTF8))
}

unsafe fn ref_arg<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, (String, c_int)> {
    ptr.as_ref()
        .ok_or_else(|| (format!("{name} is null"), EEGD_ERR_NULL))
}

unsafe fn mut_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, (String, c_int)> {
    ptr.as_mut()
        .ok_or_else(|| (format!("{name} is null"), EEGD_ERR_NULL))
}

/// Writes `v` through `ptr` when the caller asked for it.
unsafe fn put<T>(ptr: *mut T, v: T) {
    if let Some(slot) = ptr.as_mut() {
        *slot = v;
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, (String, c_int)> {
    toml::from_str(text).map_err(|e| (format!("{what}: {e}"), EEGD_ERR_USAGE))
}

fn check_geometry(model: &Deformer<f32>, dataset: &EEGDataset) -> Result<(), (String, c_int)> {
    let cfg = &model.config;
    if cfg.channels != dataset.channels
        || cfg.segment_len != dataset.segment_len
        || cfg.sampling_rate != dataset.sampling_rate
        || cfg.n_classes != dataset.n_classes
    {
        return Err((
            format!(
                "model geometry {}x{} at {} Hz / {} classes does not match dataset {}x{} at {} Hz / {} classes",
                cfg.channels,
                cfg.segment_len,
                cfg.sampling_rate,
                cfg.n_classes,
                dataset.channels,
                dataset.segment_len,
                dataset.sampling_rate,
                dataset.n_classes
            ),
            EEGD_ERR_USAGE,
        ));
    }
    Ok(())
}

unsafe fn segment_arg<'a>(
    model: &Deformer<f32>,
    samples: *const f32,
    len: usize,
) -> Result<&'a [f32], (String, c_int)> {
    if samples.is_null() {
        return Err(("samples is null".into(), EEGD_ERR_NULL));
    }
    let want = model.config.channels * model.config.segment_len;
    if len != want {
        return Err((
            format!(
                "segment length {len} does not match {} channels x {} samples = {want}",
                model.config.channels, model.config.segment_len
            ),
            EEGD_ERR_USAGE,
        ));
    }
    Ok(std::slice::from_raw_parts(samples, len))
}

fn single_logits(model: &Deformer<f32>, samples: &[f32]) -> Result<Vec<f32>, (String, c_int)> {
    let x = Tensor::from_vec(
        samples.to_vec(),
        &[model.config.channels, model.config.segment_len],
    )
    .map_err(fail)?;
    let trace = no_grad(|| model.infer(&x)).map_err(fail)?;
    Ok(trace.logits.to_vec())
}

// ---- library identity and errors ----

/// Version of the library, as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eegd_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn eegd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---- datasets ----

/// Synthesizes a dataset from a TOML spec (NULL for the built-in default).
#[no_mangle]
pub unsafe extern "C" fn eegd_dataset_generate(
    spec_toml: *const c_char,
    seed: u64,
    out: *mut *mut EegdDataset,
) -> c_int {
    guarded(|| {
        let slot = mut_arg(out, "out")?;
        let spec: SyntheticSpec = if spec_toml.is_null() {
            SyntheticSpec::default()
        } else {
            parse_toml(str_arg(spec_toml, "spec_toml")?, "spec")?
        };
        let dataset = generate_synthetic(&spec, seed).map_err(fail)?;
        *slot = Box::into_raw(Box::new(EegdDataset(dataset)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_dataset_read(
    path: *const c_char,
    out: *mut *mut EegdDataset,
) -> c_int {
    guarded(|| {
        let slot = mut_arg(out, "out")?;
        let dataset = read_dataset(str_arg(path, "path")?).map_err(fail)?;
        *slot = Box::into_raw(Box::new(EegdDataset(dataset)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_dataset_write(
    dataset: *const EegdDataset,
    path: *const c_char,
) -> c_int {
    guarded(|| {
        let dataset = ref_arg(dataset, "dataset")?;
        write_dataset(&dataset.0, str_arg(path, "path")?).map_err(fail)
    })
}

/// Reports dataset geometry; any output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn eegd_dataset_geometry(
    dataset: *const EegdDataset,
    channels: *mut u32,
    segment_len: *mut u32,
    sampling_rate: *mut f64,
    n_classes: *mut u32,
    n_subjects: *mut u32,
) -> c_int {
    guarded(|| {
        let dataset = &ref_arg(dataset, "dataset")?.0;
        put(channels, dataset.channels as u32);
        put(segment_len, dataset.segment_len as u32);
        put(sampling_rate, dataset.sampling_rate);
        put(n_classes, dataset.n_classes as u32);
        put(n_subjects, dataset.subjects.len() as u32);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_dataset_free(dataset: *mut EegdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// ---- models ----

/// Builds a freshly initialized network from a full model config in TOML.
#[no_mangle]
pub unsafe extern "C" fn eegd_model_new(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut EegdModel,
) -> c_int {
    guarded(|| {
        let slot = mut_arg(out, "out")?;
        let config: ModelConfig = parse_toml(str_arg(config_toml, "config_toml")?, "model config")?;
        let model = Deformer::new(config, &RngState::new(seed)).map_err(fail)?;
        *slot = Box::into_raw(Box::new(EegdModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_model_param_count(
    model: *const EegdModel,
    out: *mut u64,
) -> c_int {
    guarded(|| {
        let model = ref_arg(model, "model")?;
        let slot = mut_arg(out, "out")?;
        let n = eeg_deformer::model::param_count(&model.0.config).map_err(fail)?;
        *slot = n as u64;
        Ok(())
    })
}

/// Class logits for one segment of `channels * segment_len` samples,
/// written to `logits_out[0..n_classes]`.
#[no_mangle]
pub unsafe extern "C" fn eegd_model_logits(
    model: *const EegdModel,
    samples: *const f32,
    len: usize,
    logits_out: *mut f32,
    logits_len: usize,
) -> c_int {
    guarded(|| {
        let model = &ref_arg(model, "model")?.0;
        let samples = segment_arg(model, samples, len)?;
        if logits_out.is_null() {
            return Err(("logits_out is null".into(), EEGD_ERR_NULL));
        }
        if logits_len != model.config.n_classes {
            return Err((
                format!(
                    "logits_len {logits_len} does not match {} classes",
                    model.config.n_classes
                ),
                EEGD_ERR_USAGE,
            ));
        }
        let logits = single_logits(model, samples)?;
        std::slice::from_raw_parts_mut(logits_out, logits_len).copy_from_slice(&logits);
        Ok(())
    })
}

/// Predicted class index for one segment.
#[no_mangle]
pub unsafe extern "C" fn eegd_model_predict(
    model: *const EegdModel,
    samples: *const f32,
    len: usize,
    class_out: *mut u32,
) -> c_int {
    guarded(|| {
        let model = &ref_arg(model, "model")?.0;
        let samples = segment_arg(model, samples, len)?;
        let slot = mut_arg(class_out, "class_out")?;
        let logits = single_logits(model, samples)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        *slot = best as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_model_free(model: *mut EegdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- training and evaluation ----

/// Trains `model` in place on `dataset` under a TOML train config (NULL for
/// defaults), holding out the configured validation fraction. The best
/// epoch's snapshot lands in `best_out` unless that pointer is NULL.
#[no_mangle]
pub unsafe extern "C" fn eegd_train(
    model: *mut EegdModel,
    dataset: *const EegdDataset,
    train_toml: *const c_char,
    best_out: *mut *mut EegdCheckpoint,
) -> c_int {
    guarded(|| {
        let model = mut_arg(model, "model")?;
        let dataset = &ref_arg(dataset, "dataset")?.0;
        check_geometry(&model.0, dataset)?;
        let cfg: TrainConfig = if train_toml.is_null() {
            TrainConfig::default()
        } else {
            parse_toml(str_arg(train_toml, "train_toml")?, "train config")?
        };
        // Same derived streams as the CLI: split on 1, training draws on 3
        // (2 is the init stream, which the caller spent in eegd_model_new).
        let root = RngState::new(cfg.seed);
        let (train_set, val_set) = train_val_split(
            dataset,
            cfg.val_fraction,
            root.derive(1).seed,
            cfg.val_split,
        )
        .map_err(fail)?;
        let fit_cfg = TrainConfig {
            seed: root.derive(3).seed,
            ..cfg
        };
        let result = fit(&mut model.0, &train_set, &val_set, &fit_cfg).map_err(fail)?;
        if !best_out.is_null() {
            put(
                best_out,
                Box::into_raw(Box::new(EegdCheckpoint(result.best))),
            );
        }
        Ok(())
    })
}

/// Accuracy and macro F1 of a checkpoint over every segment of `dataset`.
/// Either output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn eegd_evaluate(
    model: *const EegdModel,
    checkpoint: *const EegdCheckpoint,
    dataset: *const EegdDataset,
    accuracy: *mut f64,
    macro_f1: *mut f64,
) -> c_int {
    guarded(|| {
        let model = &ref_arg(model, "model")?.0;
        let checkpoint = &ref_arg(checkpoint, "checkpoint")?.0;
        let dataset = &ref_arg(dataset, "dataset")?.0;
        check_geometry(model, dataset)?;
        let report = evaluate(model, checkpoint, &all_segments(dataset)).map_err(fail)?;
        put(accuracy, report.accuracy);
        put(macro_f1, report.macro_f1);
        Ok(())
    })
}

// ---- checkpoints ----

#[no_mangle]
pub unsafe extern "C" fn eegd_checkpoint_save(
    checkpoint: *const EegdCheckpoint,
    path: *const c_char,
) -> c_int {
    guarded(|| {
        let checkpoint = ref_arg(checkpoint, "checkpoint")?;
        save_checkpoint(&checkpoint.0, str_arg(path, "path")?).map_err(fail)
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_checkpoint_load(
    path: *const c_char,
    out: *mut *mut EegdCheckpoint,
) -> c_int {
    guarded(|| {
        let slot = mut_arg(out, "out")?;
        let checkpoint = load_checkpoint(str_arg(path, "path")?).map_err(fail)?;
        *slot = Box::into_raw(Box::new(EegdCheckpoint(checkpoint)));
        Ok(())
    })
}

/// Rebuilds the network a checkpoint was taken from, weights included.
#[no_mangle]
pub unsafe extern "C" fn eegd_checkpoint_restore_model(
    checkpoint: *const EegdCheckpoint,
    out: *mut *mut EegdModel,
) -> c_int {
    guarded(|| {
        let checkpoint = ref_arg(checkpoint, "checkpoint")?;
        let slot = mut_arg(out, "out")?;
        let (model, _) = checkpoint.0.restore_model().map_err(fail)?;
        *slot = Box::into_raw(Box::new(EegdModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eegd_checkpoint_free(checkpoint: *mut EegdCheckpoint) {
    if !checkpoint.is_null() {
        drop(Box::from_raw(checkpoint));
    }
}

// ---- saliency ----

/// Gradient saliency of one segment toward `class_idx`. `map_out`, when not
/// NULL, receives `channels * segment_len` values in [0, 1]; `scores_out`,
/// when not NULL, receives one score per channel.
#[no_mangle]
pub unsafe extern "C" fn eegd_saliency(
    model: *const EegdModel,
    samples: *const f32,
    len: usize,
    class_idx: u32,
    map_out: *mut f32,
    scores_out: *mut f32,
) -> c_int {
    guarded(|| {
        let model = &ref_arg(model, "model")?.0;
        let samples = segment_arg(model, samples, len)?;
        let x = Tensor::from_vec(
            samples.to_vec(),
            &[model.config.channels, model.config.segment_len],
        )
        .map_err(fail)?;
        let map = saliency_map(model, &x, class_idx as usize, "ffi").map_err(fail)?;
        if !map_out.is_null() {
            std::slice::from_raw_parts_mut(map_out, map.map.len()).copy_from_slice(&map.map);
        }
        if !scores_out.is_null() {
            std::slice::from_raw_parts_mut(scores_out, map.channel_scores.len())
                .copy_from_slice(&map.channel_scores);
        }
        Ok(())
    })
}
