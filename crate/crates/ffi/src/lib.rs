//! C interface: load a checkpoint, predict clusters for JSONL documents and
//! score cluster JSONL. Every call returns a `CorefStatus`; on failure the
//! message is available from `coref_last_error_message` on the same thread.
//! Strings returned through out-pointers are owned by the caller and must be
//! released with `coref_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use coref::app::{self, AppError};
use coref::encoder::EmbeddingTable;
use coref::model::Model;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorefStatus {
    Ok = 0,
    Oracle = 1,
    InvalidInput = 2,
    Divergence = 3,
    Checkpoint = 4,
    DocMismatch = 5,
    NullArgument = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct CorefModel {
    model: Model,
    embeddings: EmbeddingTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &AppError) -> CorefStatus {
    match e.exit_code() {
        1 => CorefStatus::Oracle,
        3 => CorefStatus::Divergence,
        4 => CorefStatus::Checkpoint,
        5 => CorefStatus::DocMismatch,
        _ => CorefStatus::InvalidInput,
    }
}

enum Fail {
    App(AppError),
    Null(&'static str),
}

impl From<AppError> for Fail {
    fn from(e: AppError) -> Self {
        Fail::App(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CorefStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CorefStatus::Ok,
        Ok(Err(Fail::App(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            CorefStatus::NullArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CorefStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Fail::App(AppError::Usage(format!("{what} is not valid UTF-8"))))
}

unsafe fn req_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    opt_str(p, what)?.ok_or(Fail::Null(what))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| AppError::Internal("output contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Loads a checkpoint and its settings sidecar. `overrides` is null or
/// whitespace-separated `key=value` pairs; `embeddings_path` is null for
/// hash-seeded vectors.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coref_model_load(
    checkpoint_path: *const c_char,
    embeddings_path: *const c_char,
    overrides: *const c_char,
    out: *mut *mut CorefModel,
) -> CorefStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = std::ptr::null_mut();
        let path = req_str(checkpoint_path, "checkpoint_path")?;
        let emb_path = opt_str(embeddings_path, "embeddings_path")?;
        let over = opt_str(overrides, "overrides")?.unwrap_or("");
        let model = app::load_model(Path::new(path), None, over.split_whitespace())?;
        let embeddings = app::load_embeddings(emb_path.map(Path::new), model.config())?;
        *out = Box::into_raw(Box::new(CorefModel { model, embeddings }));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from `coref_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coref_model_free(model: *mut CorefModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts clusters for a JSONL corpus; writes cluster JSONL, one line
/// per input document.
///
/// # Safety
/// `model` is a live handle; `corpus_jsonl` is NUL-terminated; `out` is a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coref_model_predict_jsonl(
    model: *const CorefModel,
    corpus_jsonl: *const c_char,
    out: *mut *mut c_char,
) -> CorefStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = std::ptr::null_mut();
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let text = req_str(corpus_jsonl, "corpus_jsonl")?;
        let docs = app::parse_corpus(text, true)
            .map_err(|msg| AppError::Input { path: "<corpus>".into(), msg })?;
        let records = app::predict_records(&m.model, &docs, &m.embeddings)?;
        put_string(out, app::records_to_jsonl(&records))
    })
}

/// Scores cluster JSONL `response` against `key`; writes a JSON report.
///
/// # Safety
/// `key_jsonl` and `response_jsonl` are NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn coref_score_jsonl(
    key_jsonl: *const c_char,
    response_jsonl: *const c_char,
    out: *mut *mut c_char,
) -> CorefStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = std::ptr::null_mut();
        let parse = |p, what: &'static str| -> Result<_, Fail> {
            app::parse_clusters(req_str(p, what)?, true)
                .map_err(|msg| Fail::App(AppError::Input { path: format!("<{what}>"), msg }))
        };
        let key = parse(key_jsonl, "key_jsonl")?;
        let response = parse(response_jsonl, "response_jsonl")?;
        let (_, report) = app::score_records(&key, &response)?;
        put_string(out, report.to_json())
    })
}

/// # Safety
/// `s` is null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coref_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn coref_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn coref_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}
