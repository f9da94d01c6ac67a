//! C ABI over the core library: opaque handles, integer status codes,
//! and a thread-local last-error message. The matching declarations live
//! in `include/tempmerge.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_double, c_int};
use std::path::Path;

use tempmerge::encoder::{encode, load_checkpoint, EncoderParams, Embedding, Vocab};
use tempmerge::retrieval::{load_index, search, Index, ScoredHit};

pub const TM_OK: c_int = 0;
pub const TM_ERR_NULL_ARGUMENT: c_int = 1;
pub const TM_ERR_IO: c_int = 2;
pub const TM_ERR_INVALID_DATA: c_int = 3;
pub const TM_ERR_UTF8: c_int = 4;
pub const TM_ERR_DIMENSION: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

/// Copies the last error message on this thread into `buffer`; always
/// NUL-terminated, truncated to `capacity`. Returns the full length.
#[no_mangle]
pub extern "C" fn tm_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buffer, n);
                *buffer.add(n) = 0;
            }
        }
        bytes.len()
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, c_int> {
    if path.is_null() {
        set_error("null path");
        return Err(TM_ERR_NULL_ARGUMENT);
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(TM_ERR_UTF8)
        }
    }
}

/// Opaque encoder checkpoint handle.
pub struct TmModel {
    params: EncoderParams,
}

/// Opaque vocabulary handle.
pub struct TmVocab {
    vocab: Vocab,
}

/// Opaque search index handle.
pub struct TmIndex {
    index: Index,
}

/// Opaque result list handle.
pub struct TmHits {
    hits: Vec<ScoredHit>,
    /// NUL-terminated copies of the passage ids, kept alive for the
    /// lifetime of the handle.
    ids: Vec<CString>,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_model_load(path: *const c_char, out: *mut *mut TmModel) -> c_int {
    if out.is_null() {
        set_error("null output pointer");
        return TM_ERR_NULL_ARGUMENT;
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match load_checkpoint(path) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(TmModel { params }));
            TM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            TM_ERR_INVALID_DATA
        }
    }
}

/// # Safety
/// `model` must come from `tm_model_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tm_model_free(model: *mut TmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding dimension of a loaded model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_model_dim(model: *const TmModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).params.dim()
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_vocab_load(path: *const c_char, out: *mut *mut TmVocab) -> c_int {
    if out.is_null() {
        set_error("null output pointer");
        return TM_ERR_NULL_ARGUMENT;
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match Vocab::load(path) {
        Ok(vocab) => {
            *out = Box::into_raw(Box::new(TmVocab { vocab }));
            TM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            TM_ERR_IO
        }
    }
}

/// # Safety
/// `vocab` must come from `tm_vocab_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tm_vocab_free(vocab: *mut TmVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Encodes NUL-terminated UTF-8 `text` into `out_embedding`, which must
/// hold `tm_model_dim(model)` doubles.
///
/// # Safety
/// All pointers must be valid; `out_embedding` must have room for the
/// model dimension.
#[no_mangle]
pub unsafe extern "C" fn tm_encode(
    model: *const TmModel,
    vocab: *const TmVocab,
    text: *const c_char,
    out_embedding: *mut c_double,
) -> c_int {
    if model.is_null() || vocab.is_null() || text.is_null() || out_embedding.is_null() {
        set_error("null argument");
        return TM_ERR_NULL_ARGUMENT;
    }
    let text = match CStr::from_ptr(text).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("text is not valid UTF-8");
            return TM_ERR_UTF8;
        }
    };
    let tokens = (*vocab).vocab.encode_text(text);
    match encode(&(*model).params, None, &tokens) {
        Ok(emb) => {
            std::ptr::copy_nonoverlapping(emb.0.as_ptr(), out_embedding, emb.0.len());
            TM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            TM_ERR_INVALID_DATA
        }
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_index_load(path: *const c_char, out: *mut *mut TmIndex) -> c_int {
    if out.is_null() {
        set_error("null output pointer");
        return TM_ERR_NULL_ARGUMENT;
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match load_index(path) {
        Ok(index) => {
            *out = Box::into_raw(Box::new(TmIndex { index }));
            TM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            TM_ERR_INVALID_DATA
        }
    }
}

/// # Safety
/// `index` must come from `tm_index_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tm_index_free(index: *mut TmIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of passages in an index.
///
/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_index_len(index: *const TmIndex) -> usize {
    if index.is_null() {
        return 0;
    }
    (*index).index.ids.len()
}

/// Exact top-k search over `embedding` (length `dim`).
///
/// # Safety
/// All pointers must be valid; `embedding` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_search(
    index: *const TmIndex,
    embedding: *const c_double,
    dim: usize,
    k: usize,
    out: *mut *mut TmHits,
) -> c_int {
    if index.is_null() || embedding.is_null() || out.is_null() {
        set_error("null argument");
        return TM_ERR_NULL_ARGUMENT;
    }
    if dim != (*index).index.matrix.cols {
        set_error("embedding dimension does not match the index");
        return TM_ERR_DIMENSION;
    }
    let q = Embedding(std::slice::from_raw_parts(embedding, dim).to_vec());
    match search(&(*index).index, &q, k.max(1)) {
        Ok(hits) => {
            let ids = hits
                .iter()
                .map(|h| CString::new(h.passage_id.as_str()).unwrap())
                .collect();
            *out = Box::into_raw(Box::new(TmHits { hits, ids }));
            TM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            TM_ERR_INVALID_DATA
        }
    }
}

/// # Safety
/// `hits` must come from `tm_search` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tm_hits_free(hits: *mut TmHits) {
    if !hits.is_null() {
        drop(Box::from_raw(hits));
    }
}

/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_hits_len(hits: *const TmHits) -> usize {
    if hits.is_null() {
        return 0;
    }
    (*hits).hits.len()
}

/// Passage id of the hit at `rank_index` (0-based); the pointer stays
/// valid until the handle is freed. Out-of-range returns NULL.
///
/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_hits_id(hits: *const TmHits, rank_index: usize) -> *const c_char {
    if hits.is_null() {
        return std::ptr::null();
    }
    let hits = &*hits;
    if rank_index >= hits.ids.len() {
        return std::ptr::null();
    }
    hits.ids[rank_index].as_ptr()
}

/// Score of the hit at `rank_index` (0-based); NaN when out of range.
///
/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_hits_score(hits: *const TmHits, rank_index: usize) -> c_double {
    if hits.is_null() {
        return f64::NAN;
    }
    let hits = &*hits;
    if rank_index >= hits.hits.len() {
        return f64::NAN;
    }
    hits.hits[rank_index].score
}
