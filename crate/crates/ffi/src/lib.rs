//! C ABI over the `faithdec` library.
//!
//! Every fallible function returns an [`FdStatus`] and writes its result
//! through an out-pointer. On failure a description is available from
//! [`fd_last_error_message`] on the same thread. Handles are opaque and must
//! be released with their matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use faithdec::decoder::{faithful_beam_search, standard_beam_search, weighted_score, NBestList};
use faithdec::embedding::{cosine_similarity, BagOfWordsOracle, EmbeddingProvider, FileEmbeddingStore};
use faithdec::lm::{LanguageModel, TabularLm};
use faithdec::{validate_config, DecodeConfig, EmbeddingVector, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullOrInvalidArgument = 1,
    /// A configuration value or precondition was rejected.
    InvalidConfig = 2,
    /// An input file could not be read or parsed.
    Io = 3,
    /// No embedding exists for the requested clip or text.
    NotFound = 4,
    /// An external model or service failed.
    Backend = 5,
    /// Numeric failure such as a dimension mismatch or zero vector.
    Numeric = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

impl From<&Error> for FdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Io { .. } | Error::Normalization { .. } => FdStatus::Io,
            Error::MissingEmbedding { .. } => FdStatus::NotFound,
            Error::Dimension { .. } | Error::ZeroVector => FdStatus::Numeric,
            e if e.is_backend() => FdStatus::Backend,
            _ => FdStatus::InvalidConfig,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let c = CString::new(message).expect("interior NULs were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(FdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FdStatus::from(&e), e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(FdStatus::NullOrInvalidArgument, message.into())
}

/// Runs `f`, recording any error or panic for `fd_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {what}"));
            FdStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("`{name}` is null")))
}

/// Tabular language model handle.
pub struct FdLm {
    lm: TabularLm,
}

/// Embedding provider handle.
pub struct FdEmbeddings {
    provider: Box<dyn EmbeddingProvider>,
}

/// Decoded captions, best first.
pub struct FdNBest {
    list: NBestList,
    captions: Vec<CString>,
}

/// Decoder settings. `max_len` and `rollout_max_len` count BOS and EOS.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FdDecodeConfig {
    pub beam_width: usize,
    pub alpha: f64,
    pub max_len: usize,
    pub rollout_max_len: usize,
    pub expansions_per_beam: usize,
    pub n_best: usize,
    pub seed: u64,
}

impl From<DecodeConfig> for FdDecodeConfig {
    fn from(c: DecodeConfig) -> Self {
        Self {
            beam_width: c.beam_width,
            alpha: c.alpha,
            max_len: c.max_len,
            rollout_max_len: c.rollout_max_len,
            expansions_per_beam: c.expansions_per_beam,
            n_best: c.n_best,
            seed: c.seed,
        }
    }
}

impl From<FdDecodeConfig> for DecodeConfig {
    fn from(c: FdDecodeConfig) -> Self {
        Self {
            beam_width: c.beam_width,
            alpha: c.alpha,
            max_len: c.max_len,
            rollout_max_len: c.rollout_max_len,
            expansions_per_beam: c.expansions_per_beam,
            n_best: c.n_best,
            seed: c.seed,
        }
    }
}

/// Library defaults for every decoder setting.
#[no_mangle]
pub extern "C" fn fd_config_default() -> FdDecodeConfig {
    DecodeConfig::default().into()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a tabular model file into `*out`.
#[no_mangle]
pub unsafe extern "C" fn fd_lm_load_tabular(path: *const c_char, out: *mut *mut FdLm) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        let lm = TabularLm::load(&path)?;
        *out = Box::into_raw(Box::new(FdLm { lm }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fd_lm_free(lm: *mut FdLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Loads an embedding store file into `*out`.
#[no_mangle]
pub unsafe extern "C" fn fd_embeddings_load_store(path: *const c_char, out: *mut *mut FdEmbeddings) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let store = FileEmbeddingStore::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(FdEmbeddings {
            provider: Box::new(store),
        }));
        Ok(())
    })
}

/// Bag-of-words provider over `lm`'s vocabulary. Audio vectors are read
/// from the store at `audio_path`, which may be null for a text-only
/// provider. `lm` may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn fd_embeddings_bag_of_words(
    lm: *const FdLm,
    audio_path: *const c_char,
    out: *mut *mut FdEmbeddings,
) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let lm = lm.as_ref().ok_or_else(|| invalid("`lm` is null"))?;
        let vocab = lm.lm.vocab().clone();
        let oracle = if audio_path.is_null() {
            BagOfWordsOracle::new(vocab)
        } else {
            let store = FileEmbeddingStore::load(str_arg(audio_path, "audio_path")?)?;
            BagOfWordsOracle::from_store(vocab, &store)?
        };
        *out = Box::into_raw(Box::new(FdEmbeddings {
            provider: Box::new(oracle),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fd_embeddings_free(embeddings: *mut FdEmbeddings) {
    if !embeddings.is_null() {
        drop(Box::from_raw(embeddings));
    }
}

/// Decodes captions for `context_id`. With `faithful` set the
/// faithfulness-guided decoder runs and `embeddings` is required; otherwise
/// plain beam search runs and `embeddings` may be null.
#[no_mangle]
pub unsafe extern "C" fn fd_decode(
    lm: *const FdLm,
    embeddings: *const FdEmbeddings,
    context_id: *const c_char,
    config: *const FdDecodeConfig,
    faithful: bool,
    out: *mut *mut FdNBest,
) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let lm = lm.as_ref().ok_or_else(|| invalid("`lm` is null"))?;
        let context_id = str_arg(context_id, "context_id")?;
        let config = config.as_ref().ok_or_else(|| invalid("`config` is null"))?;
        let cfg = validate_config((*config).into())?;
        let session = lm.lm.open_session(context_id)?;
        let list = if faithful {
            let embeddings = embeddings
                .as_ref()
                .ok_or_else(|| invalid("`embeddings` is null but faithful decoding needs it"))?;
            faithful_beam_search(&session, &*embeddings.provider, context_id, &cfg)?
        } else {
            standard_beam_search(&session, &cfg)?
        };
        let captions = list
            .hypotheses
            .iter()
            .map(|h| CString::new(h.caption.replace('\0', " ")).expect("interior NULs were replaced"))
            .collect();
        *out = Box::into_raw(Box::new(FdNBest { list, captions }));
        Ok(())
    })
}

/// Number of hypotheses in `nbest`; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn fd_nbest_len(nbest: *const FdNBest) -> usize {
    nbest.as_ref().map_or(0, |n| n.list.len())
}

/// Caption of hypothesis `index`, or null when out of range. Owned by
/// `nbest`.
#[no_mangle]
pub unsafe extern "C" fn fd_nbest_caption(nbest: *const FdNBest, index: usize) -> *const c_char {
    nbest
        .as_ref()
        .and_then(|n| n.captions.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Final-ranking score of hypothesis `index`.
#[no_mangle]
pub unsafe extern "C" fn fd_nbest_score(nbest: *const FdNBest, index: usize, out: *mut f64) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let nbest = nbest.as_ref().ok_or_else(|| invalid("`nbest` is null"))?;
        let h = nbest
            .list
            .hypotheses
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range ({})", nbest.list.len())))?;
        *out = h.score;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fd_nbest_free(nbest: *mut FdNBest) {
    if !nbest.is_null() {
        drop(Box::from_raw(nbest));
    }
}

/// Cosine similarity of two vectors of length `len`.
#[no_mangle]
pub unsafe extern "C" fn fd_cosine_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if a.is_null() || b.is_null() {
            return Err(invalid("vector pointer is null"));
        }
        let a = EmbeddingVector::new(std::slice::from_raw_parts(a, len).to_vec())?;
        let b = EmbeddingVector::new(std::slice::from_raw_parts(b, len).to_vec())?;
        *out = cosine_similarity(&a, &b)?;
        Ok(())
    })
}

/// `(1 - alpha) * p + alpha * sim`, with `p` in [0, 1], `sim` in [-1, 1]
/// and `alpha` in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn fd_weighted_score(p: f64, sim: f64, alpha: f64, out: *mut f64) -> FdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = weighted_score(p, sim, alpha)?;
        Ok(())
    })
}
