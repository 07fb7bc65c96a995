//! C interface to `npat`.
//!
//! Objects cross the boundary as opaque pointers created by `npat_*_new`,
//! `npat_*_parse` or `npat_*_load` style calls and released with the
//! matching `*_free`. Every fallible call returns an [`NpatStatus`]; on
//! failure `npat_last_error()` describes the problem. Error messages are
//! per thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use npat::autodiff::Tensor;
use npat::config::RunConfig;
use npat::loss::penalty_matrix;
use npat::network::{read_checkpoint, Model, ModelConfig, SystemMode, Utterance};
use npat::score::Score;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Checkpoint = 5,
    Config = 6,
    Runtime = 7,
    Panic = 8,
}

/// A parsed musical score.
pub struct NpatScore(Score);

/// A trained or freshly initialized acoustic model.
pub struct NpatModel(Model);

/// A row-major matrix of doubles.
pub struct NpatMatrix(Tensor);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &npat::Error) -> NpatStatus {
    use npat::Error as E;
    match e {
        E::ScoreParse { .. } | E::InvalidScore(_) => NpatStatus::Parse,
        E::Io { .. } => NpatStatus::Io,
        E::Checkpoint(_) | E::UnknownParam(_) => NpatStatus::Checkpoint,
        E::Config(_) => NpatStatus::Config,
        E::InvalidArgument(_) | E::Shape { .. } | E::InvalidTensor(_) => NpatStatus::InvalidArgument,
        _ => NpatStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (NpatStatus, String)>) -> NpatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NpatStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NpatStatus::Panic
        }
    }
}

fn fail(e: npat::Error) -> (NpatStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NpatStatus, String) {
    (NpatStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NpatStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NpatStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (NpatStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (NpatStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the most recent failed call on this thread; empty after a
/// success. The pointer stays valid until the next `npat_*` call on the
/// same thread.
#[no_mangle]
pub extern "C" fn npat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn npat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses score text (the `.score` format).
#[no_mangle]
pub unsafe extern "C" fn npat_score_parse(text_utf8: *const c_char, out: *mut *mut NpatScore) -> NpatStatus {
    guard(|| {
        let s = Score::parse(text(text_utf8, "score text")?).map_err(fail)?;
        put(out, NpatScore(s))
    })
}

#[no_mangle]
pub unsafe extern "C" fn npat_score_load(path: *const c_char, out: *mut *mut NpatScore) -> NpatStatus {
    guard(|| {
        let s = Score::load(Path::new(text(path, "path")?)).map_err(fail)?;
        put(out, NpatScore(s))
    })
}

#[no_mangle]
pub unsafe extern "C" fn npat_score_free(score: *mut NpatScore) {
    if !score.is_null() {
        drop(Box::from_raw(score));
    }
}

/// Phoneme count (the encoder length) and frame count of a score.
#[no_mangle]
pub unsafe extern "C" fn npat_score_dims(
    score: *const NpatScore,
    phonemes: *mut usize,
    frames: *mut usize,
) -> NpatStatus {
    guard(|| {
        let s = &deref(score, "score")?.0;
        if phonemes.is_null() || frames.is_null() {
            return Err(null("output pointer"));
        }
        *phonemes = s.num_phonemes();
        *frames = s.total_frames();
        Ok(())
    })
}

/// Guided-attention penalty `[phonemes, ceil(frames / r)]`.
#[no_mangle]
pub unsafe extern "C" fn npat_penalty_matrix(
    score: *const NpatScore,
    reduction_factor: usize,
    decay_frames: usize,
    shift_frames: usize,
    out: *mut *mut NpatMatrix,
) -> NpatStatus {
    guard(|| {
        let s = &deref(score, "score")?.0;
        let g = penalty_matrix(s, reduction_factor, decay_frames, shift_frames).map_err(fail)?;
        put(out, NpatMatrix(g.values))
    })
}

/// Untrained model with default dimensions for the named mode
/// (`prop`, `base`, ...).
#[no_mangle]
pub unsafe extern "C" fn npat_model_new(mode: *const c_char, seed: u64, out: *mut *mut NpatModel) -> NpatStatus {
    guard(|| {
        let mode: SystemMode = text(mode, "mode")?.parse().map_err(fail)?;
        let cfg = ModelConfig {
            mode,
            seed,
            ..Default::default()
        };
        put(out, NpatModel(Model::new(cfg).map_err(fail)?))
    })
}

/// Loads a checkpoint written by `npat train`. `config_path` is the run's
/// `config.txt`; pass NULL to use the default configuration.
#[no_mangle]
pub unsafe extern "C" fn npat_model_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut NpatModel,
) -> NpatStatus {
    guard(|| {
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(Path::new(text(config_path, "config path")?)).map_err(fail)?
        };
        let params = read_checkpoint(Path::new(text(checkpoint_path, "checkpoint path")?)).map_err(fail)?;
        put(out, NpatModel(Model::with_params(cfg.model, params).map_err(fail)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn npat_model_free(model: *mut NpatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Synthesizes a score. `frames_out` receives `[frames, D]` acoustic frames
/// with absolute log-F0; `alignment_out` receives `[phonemes, steps]`.
/// Either output may be NULL if not wanted. Models in `noatt` mode need an
/// oracle alignment and are rejected.
#[no_mangle]
pub unsafe extern "C" fn npat_synthesize(
    model: *const NpatModel,
    score: *const NpatScore,
    frames_out: *mut *mut NpatMatrix,
    alignment_out: *mut *mut NpatMatrix,
) -> NpatStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let s = &deref(score, "score")?.0;
        if m.config.mode.attention().is_none() {
            return Err((
                NpatStatus::InvalidArgument,
                "noatt models need an oracle alignment and cannot synthesize from a score alone".into(),
            ));
        }
        let utt = Utterance::new(s, m.config.reduction_factor).map_err(fail)?;
        let syn = m.synthesize(&utt).map_err(fail)?;
        if !frames_out.is_null() {
            put(frames_out, NpatMatrix(syn.frames))?;
        }
        if !alignment_out.is_null() {
            put(alignment_out, NpatMatrix(syn.alignment))?;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn npat_matrix_dims(m: *const NpatMatrix, rows: *mut usize, cols: *mut usize) -> NpatStatus {
    guard(|| {
        let t = &deref(m, "matrix")?.0;
        if rows.is_null() || cols.is_null() {
            return Err(null("output pointer"));
        }
        *rows = t.rows();
        *cols = t.row_len();
        Ok(())
    })
}

/// Row-major values, `rows * cols` long, owned by the matrix.
#[no_mangle]
pub unsafe extern "C" fn npat_matrix_data(m: *const NpatMatrix) -> *const f64 {
    match m.as_ref() {
        Some(t) => t.0.data().as_ptr(),
        None => ptr::null(),
    }
}

#[no_mangle]
pub unsafe extern "C" fn npat_matrix_free(m: *mut NpatMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
