//! C ABI over the convdr dense index, query encoder, and vocabulary.
//!
//! Every function returns a [`ConvdrStatus`]. On failure a description is
//! kept per thread and can be read with [`convdr_last_error`]. Handles are
//! opaque pointers created by a `*_load` function and released with the
//! matching `*_free`; they may be shared across threads for reading.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use convdr::corpus::io::read_vocab;
use convdr::corpus::Vocab;
use convdr::encoder::EncoderParams;
use convdr::index::DenseIndex;
use convdr::Error;

/// Result codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvdrStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Data = 4,
    Shape = 5,
    Invariant = 6,
    NullPointer = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Dense document index.
pub struct ConvdrIndex(DenseIndex);

/// Query encoder checkpoint.
pub struct ConvdrEncoder(EncoderParams);

/// Token vocabulary.
pub struct ConvdrVocab(Vocab);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ConvdrStatus {
    match e {
        Error::InvalidArgument(_) => ConvdrStatus::InvalidArgument,
        Error::Io { .. } => ConvdrStatus::Io,
        Error::Parse { .. } | Error::Json(_) => ConvdrStatus::Parse,
        Error::Data(_) => ConvdrStatus::Data,
        Error::Shape(_) => ConvdrStatus::Shape,
        Error::Invariant(_) => ConvdrStatus::Invariant,
    }
}

struct Fail(ConvdrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ConvdrStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ConvdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ConvdrStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            ConvdrStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(ConvdrStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or "" after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn convdr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn convdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an index written by `convdr encode-corpus`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_load(path: *const c_char, out: *mut *mut ConvdrIndex) -> ConvdrStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, ConvdrIndex(DenseIndex::load(&p)?))
    })
}

/// # Safety
/// `index` must come from [`convdr_index_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_free(index: *mut ConvdrIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of documents, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_len(index: *const ConvdrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_dim(index: *const ConvdrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.dim())
}

/// Exact top-`k` search. Writes up to `k` row numbers and scores, best
/// first with ties broken by doc id, and their count to `out_count`.
///
/// # Safety
/// `query` must hold `dim` doubles; `out_rows` and `out_scores` must hold
/// `k` elements each.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_search(
    index: *const ConvdrIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    out_rows: *mut usize,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> ConvdrStatus {
    guard(|| {
        let idx = handle(index, "index")?;
        if query.is_null() || out_rows.is_null() || out_scores.is_null() || out_count.is_null() {
            return Err(null("query or output buffer"));
        }
        let q = std::slice::from_raw_parts(query, dim);
        let hits = idx.0.search(q, k)?;
        for (i, h) in hits.iter().enumerate() {
            *out_rows.add(i) = h.row;
            *out_scores.add(i) = h.score;
        }
        *out_count = hits.len();
        Ok(())
    })
}

/// Copies the doc id of `row` into `buf` with a trailing NUL. `out_len`
/// receives the id length without the NUL; when `buf_len` is too small the
/// call fails with `BUFFER_TOO_SMALL` and nothing is written to `buf`.
///
/// # Safety
/// `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn convdr_index_doc_id(
    index: *const ConvdrIndex,
    row: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> ConvdrStatus {
    guard(|| {
        let idx = handle(index, "index")?;
        if row >= idx.0.len() {
            return Err(Fail(
                ConvdrStatus::InvalidArgument,
                format!("row {} out of range for {} documents", row, idx.0.len()),
            ));
        }
        let id = idx.0.doc_id(row).as_bytes();
        if !out_len.is_null() {
            *out_len = id.len();
        }
        if buf.is_null() || buf_len < id.len() + 1 {
            return Err(Fail(
                ConvdrStatus::BufferTooSmall,
                format!("doc id needs {} bytes", id.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(id.as_ptr(), buf.cast::<u8>(), id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Loads a dual-encoder checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convdr_encoder_load(path: *const c_char, out: *mut *mut ConvdrEncoder) -> ConvdrStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, ConvdrEncoder(EncoderParams::load(&p)?))
    })
}

/// # Safety
/// `encoder` must come from [`convdr_encoder_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn convdr_encoder_free(encoder: *mut ConvdrEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Output dimension, or 0 for a null handle.
///
/// # Safety
/// `encoder` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convdr_encoder_dim(encoder: *const ConvdrEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.0.dim())
}

/// Encodes `n_tokens` token ids into `out`, which must hold `out_len`
/// doubles; `out_len` must equal the encoder dimension.
///
/// # Safety
/// `tokens` must hold `n_tokens` ids and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn convdr_encoder_encode(
    encoder: *const ConvdrEncoder,
    tokens: *const u32,
    n_tokens: usize,
    out: *mut f64,
    out_len: usize,
) -> ConvdrStatus {
    guard(|| {
        let enc = handle(encoder, "encoder")?;
        if tokens.is_null() || out.is_null() {
            return Err(null("tokens or output buffer"));
        }
        if out_len != enc.0.dim() {
            return Err(Fail(
                ConvdrStatus::Shape,
                format!("output holds {} values, encoder produces {}", out_len, enc.0.dim()),
            ));
        }
        let v = enc.0.encode(std::slice::from_raw_parts(tokens, n_tokens))?;
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// Loads a vocabulary TSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convdr_vocab_load(path: *const c_char, out: *mut *mut ConvdrVocab) -> ConvdrStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, ConvdrVocab(read_vocab(&p)?))
    })
}

/// # Safety
/// `vocab` must come from [`convdr_vocab_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn convdr_vocab_free(vocab: *mut ConvdrVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Tokenizes UTF-8 `text`, dropping unknown words. `out_len` receives the
/// number of ids; if it exceeds `cap` the call fails with `BUFFER_TOO_SMALL`
/// and `out_ids` is left untouched.
///
/// # Safety
/// `text` must be NUL-terminated and `out_ids` must hold `cap` ids.
#[no_mangle]
pub unsafe extern "C" fn convdr_vocab_tokenize(
    vocab: *const ConvdrVocab,
    text: *const c_char,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> ConvdrStatus {
    guard(|| {
        let v = handle(vocab, "vocab")?;
        if text.is_null() || out_len.is_null() {
            return Err(null("text or out_len"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Fail(ConvdrStatus::InvalidArgument, "text is not valid UTF-8".into()))?;
        let ids = v.0.tokenize(s).ids;
        *out_len = ids.len();
        if ids.len() > cap || (out_ids.is_null() && !ids.is_empty()) {
            return Err(Fail(
                ConvdrStatus::BufferTooSmall,
                format!("{} ids do not fit in {}", ids.len(), cap),
            ));
        }
        if !ids.is_empty() {
            ptr::copy_nonoverlapping(ids.as_ptr(), out_ids, ids.len());
        }
        Ok(())
    })
}
