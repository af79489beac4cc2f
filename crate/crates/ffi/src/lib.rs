//! C ABI for stylecompat.
//!
//! Every fallible function returns an [`ScStatus`]. On failure the message is
//! kept per thread and can be copied out with [`sc_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use stylecompat::curation::{hamming, phash, Image, PHash};
use stylecompat::evaluation::roc_auc;
use stylecompat::io::{load_index, Checkpoint};
use stylecompat::losses::contrastive_loss;
use stylecompat::models::{embed_variant, Variant};
use stylecompat::retrieval::{query_compatible, EmbeddingIndex};
use stylecompat::Error;

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Shape = 10,
    Domain = 11,
    Contract = 12,
    Numerics = 13,
    Config = 14,
    Input = 15,
    Sampling = 16,
    Metric = 17,
    Format = 18,
    Io = 19,
    Panic = 99,
}

impl From<&Error> for ScStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => ScStatus::Shape,
            Error::Domain(_) => ScStatus::Domain,
            Error::Contract(_) => ScStatus::Contract,
            Error::Numerics(_) => ScStatus::Numerics,
            Error::Config(_) => ScStatus::Config,
            Error::Input(_) => ScStatus::Input,
            Error::Sampling(_) => ScStatus::Sampling,
            Error::Metric(_) => ScStatus::Metric,
            Error::Format { .. } => ScStatus::Format,
            Error::Io { .. } => ScStatus::Io,
        }
    }
}

/// Loaded checkpoint.
pub struct ScModel {
    checkpoint: Checkpoint,
    variant: Variant,
}

/// Exact nearest-neighbour index over stored embeddings.
pub struct ScIndex {
    index: EmbeddingIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: ScStatus, msg: impl Into<String>) -> ScStatus {
    set_error(msg);
    status
}

struct Failure(ScStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ScStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => fail(status, msg),
        Err(_) => fail(ScStatus::Panic, "internal panic"),
    }
}

fn null(what: &str) -> Failure {
    Failure(ScStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn path<'a>(ptr: *const c_char) -> Result<&'a Path, Failure> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(ScStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

/// Copy a string into `buf` (NUL-terminated). Returns the byte length
/// without the terminator; `BufferTooSmall` if `cap` cannot hold it.
unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize, len_out: *mut usize) -> Result<(), Failure> {
    if !len_out.is_null() {
        *len_out = s.len();
    }
    if cap < s.len() + 1 {
        return Err(Failure(
            ScStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {cap}", s.len() + 1),
        ));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf`. `len_out`
/// receives the message length; call with `cap = 0` to size the buffer.
#[no_mangle]
pub unsafe extern "C" fn sc_last_error_message(
    buf: *mut c_char,
    cap: usize,
    len_out: *mut usize,
) -> ScStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_str(&msg, buf, cap, len_out) {
        Ok(()) => ScStatus::Ok,
        Err(Failure(s, _)) => s,
    }
}

/// Area under the ROC curve. `labels[i]` is nonzero for positives.
#[no_mangle]
pub unsafe extern "C" fn sc_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    auc_out: *mut f64,
) -> ScStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let labels: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        let auc = roc_auc(scores, &labels)?;
        *out(auc_out, "auc_out")? = auc;
        Ok(())
    })
}

/// Contrastive loss of one pair of embeddings.
#[no_mangle]
pub unsafe extern "C" fn sc_contrastive_loss(
    xi: *const f64,
    xj: *const f64,
    dim: usize,
    compatible: bool,
    margin: f64,
    loss_out: *mut f64,
) -> ScStatus {
    guard(|| {
        let v = contrastive_loss(slice(xi, dim, "xi")?, slice(xj, dim, "xj")?, compatible, margin)?;
        *out(loss_out, "loss_out")? = v;
        Ok(())
    })
}

/// 64-bit perceptual hash of a grayscale image given row-major.
#[no_mangle]
pub unsafe extern "C" fn sc_phash(
    pixels: *const f64,
    width: usize,
    height: usize,
    hash_out: *mut u64,
) -> ScStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure(ScStatus::Shape, "image size overflows".into()))?;
        let img = Image::new(width, height, slice(pixels, n, "pixels")?.to_vec())?;
        *out(hash_out, "hash_out")? = phash(&img)?.0;
        Ok(())
    })
}

/// Number of differing bits between two hashes.
#[no_mangle]
pub extern "C" fn sc_hamming(a: u64, b: u64) -> u32 {
    hamming(PHash(a), PHash(b))
}

/// Load a checkpoint. Release with [`sc_model_free`].
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path_c: *const c_char, model_out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        let slot = out(model_out, "model_out")?;
        let checkpoint = Checkpoint::load(path(path_c)?)?;
        let variant = checkpoint.variant.unwrap_or(Variant::Canonical);
        *slot = Box::into_raw(Box::new(ScModel { checkpoint, variant }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the feature vectors the model accepts.
#[no_mangle]
pub unsafe extern "C" fn sc_model_input_dim(model: *const ScModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.input_dim)
}

/// Embed one feature vector. `len_out` receives the embedding length.
#[no_mangle]
pub unsafe extern "C" fn sc_model_embed(
    model: *const ScModel,
    features: *const f64,
    n_features: usize,
    embedding_out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> ScStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice(features, n_features, "features")?;
        let e = embed_variant(x, &m.checkpoint.params, &m.checkpoint.config, m.variant)?;
        *out(len_out, "len_out")? = e.len();
        if cap < e.len() {
            return Err(Failure(
                ScStatus::BufferTooSmall,
                format!("embedding has {} values, buffer holds {cap}", e.len()),
            ));
        }
        if embedding_out.is_null() {
            return Err(null("embedding_out"));
        }
        std::ptr::copy_nonoverlapping(e.as_ptr(), embedding_out, e.len());
        Ok(())
    })
}

/// Load an index written by `stylecompat retrieve`. Release with
/// [`sc_index_free`].
#[no_mangle]
pub unsafe extern "C" fn sc_index_load(path_c: *const c_char, index_out: *mut *mut ScIndex) -> ScStatus {
    guard(|| {
        let slot = out(index_out, "index_out")?;
        let index = load_index(path(path_c)?)?;
        *slot = Box::into_raw(Box::new(ScIndex { index }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sc_index_free(index: *mut ScIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sc_index_len(index: *const ScIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.len())
}

#[no_mangle]
pub unsafe extern "C" fn sc_index_dim(index: *const ScIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.dim())
}

/// Copy the id stored at `position` into `buf`.
#[no_mangle]
pub unsafe extern "C" fn sc_index_id(
    index: *const ScIndex,
    position: usize,
    buf: *mut c_char,
    cap: usize,
    len_out: *mut usize,
) -> ScStatus {
    guard(|| {
        let ix = index.as_ref().ok_or_else(|| null("index"))?;
        let id = ix.index.ids().get(position).ok_or_else(|| {
            Failure(ScStatus::Input, format!("position {position} out of range for {} items", ix.index.len()))
        })?;
        copy_str(id, buf, cap, len_out)
    })
}

/// The `k` best entries for `query`. Positions and scores are written to
/// arrays of at least `k` elements; `count_out` receives how many were
/// filled. `exclude_type < 0` disables type exclusion.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sc_index_query(
    index: *const ScIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    exclude_type: i64,
    positions_out: *mut usize,
    scores_out: *mut f64,
    count_out: *mut usize,
) -> ScStatus {
    guard(|| {
        let ix = index.as_ref().ok_or_else(|| null("index"))?;
        let q = slice(query, dim, "query")?;
        let exclude = usize::try_from(exclude_type).ok();
        let res = query_compatible(&ix.index, q, k, exclude)?;
        let count = out(count_out, "count_out")?;
        if positions_out.is_null() || scores_out.is_null() {
            return Err(null("positions_out or scores_out"));
        }
        for (r, hit) in res.hits.iter().enumerate() {
            *positions_out.add(r) = ix.index.position(&hit.id).expect("hit id comes from the index");
            *scores_out.add(r) = hit.score;
        }
        *count = res.hits.len();
        Ok(())
    })
}
