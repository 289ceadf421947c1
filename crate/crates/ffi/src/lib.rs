//! C ABI over the tokenizer, knowledge index and matcher.
//!
//! Handles are opaque pointers created by `*_load`/`*_build` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`KbStatus`]; on failure a message is available from
//! [`kb_last_error_message`] on the same thread. Output buffers follow one
//! convention: the required length is always written to `out_len`, and
//! `KB_STATUS_BUFFER_TOO_SMALL` is returned when `capacity` is short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kbalign::error::ErrorCategory;
use kbalign::kb::{ingest_embeddings, KnowledgeIndex};
use kbalign::matcher::{find_knowledge_expressions, match_ids};
use kbalign::tokenizer::{tokenize, SubwordVocabulary};
use kbalign::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Config = 6,
    FingerprintMismatch = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<ErrorCategory> for KbStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Io => KbStatus::Io,
            ErrorCategory::Parse => KbStatus::Parse,
            ErrorCategory::InvalidInput => KbStatus::InvalidInput,
            ErrorCategory::Config => KbStatus::Config,
            ErrorCategory::Fingerprint => KbStatus::FingerprintMismatch,
            ErrorCategory::Numeric => KbStatus::Numeric,
        }
    }
}

/// Opaque vocabulary handle.
pub struct KbVocab(SubwordVocabulary);

/// Opaque knowledge index handle.
pub struct KbIndex(KnowledgeIndex);

/// Half-open token interval `[start, end)` matched to index entry `entry`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KbSpan {
    pub start: usize,
    pub end: usize,
    pub entry: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(KbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.category().into(), e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KbStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copies `items` into `(buf, capacity)` after writing the full length.
unsafe fn fill<T: Copy>(items: &[T], buf: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = items.len();
    if items.len() > capacity {
        return Err(Failure(
            KbStatus::BufferTooSmall,
            format!("need room for {} items, capacity is {capacity}", items.len()),
        ));
    }
    if !items.is_empty() {
        if buf.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(items.as_ptr(), buf, items.len());
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn kb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a vocabulary file (one token per line).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kb_vocab_load(path: *const c_char, out: *mut *mut KbVocab) -> KbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let vocab = SubwordVocabulary::load(path)?;
        *out = Box::into_raw(Box::new(KbVocab(vocab)));
        Ok(())
    })
}

/// Releases a vocabulary. Null is ignored.
///
/// # Safety
/// `vocab` must come from [`kb_vocab_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kb_vocab_free(vocab: *mut KbVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of tokens in the vocabulary; 0 for null.
///
/// # Safety
/// `vocab` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kb_vocab_len(vocab: *const KbVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Tokenizes `text`, keeping at most `max_len` ids.
///
/// # Safety
/// `vocab` must be a live handle, `text` NUL-terminated, `ids` writable for
/// `capacity` elements (or null when `capacity` is 0), `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_tokenize(
    vocab: *const KbVocab,
    text: *const c_char,
    max_len: usize,
    ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> KbStatus {
    guard(|| {
        let vocab = ref_arg(vocab, "vocab")?;
        let text = str_arg(text, "text")?;
        let seq = tokenize(text, &vocab.0, max_len);
        fill(&seq.ids, ids, capacity, out_len)
    })
}

/// Loads a binary index and checks that it was built with `vocab`.
///
/// # Safety
/// `path` must be NUL-terminated, `vocab` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_index_load(path: *const c_char, vocab: *const KbVocab, out: *mut *mut KbIndex) -> KbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let vocab = ref_arg(vocab, "vocab")?;
        let index = KnowledgeIndex::load(path)?;
        if index.vocab_fingerprint() != vocab.0.fingerprint() {
            return Err(Failure(
                KbStatus::FingerprintMismatch,
                format!(
                    "index built with vocabulary {} but handle holds {}",
                    index.vocab_fingerprint().short(),
                    vocab.0.fingerprint().short()
                ),
            ));
        }
        *out = Box::into_raw(Box::new(KbIndex(index)));
        Ok(())
    })
}

/// Builds an index from an embedding file with `dim` floats per line.
///
/// # Safety
/// `vocab` must be a live handle, `embeddings` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_index_build(
    vocab: *const KbVocab,
    embeddings: *const c_char,
    dim: usize,
    out: *mut *mut KbIndex,
) -> KbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let vocab = ref_arg(vocab, "vocab")?;
        let path = PathBuf::from(str_arg(embeddings, "embeddings")?);
        let records = ingest_embeddings(&path, dim)?;
        let index = KnowledgeIndex::build(&records, &vocab.0)?;
        *out = Box::into_raw(Box::new(KbIndex(index)));
        Ok(())
    })
}

/// Writes the index to `path` in the binary container format.
///
/// # Safety
/// `index` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kb_index_save(index: *const KbIndex, path: *const c_char) -> KbStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        index.0.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases an index. Null is ignored.
///
/// # Safety
/// `index` must come from [`kb_index_load`] or [`kb_index_build`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kb_index_free(index: *mut KbIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of stored entries; 0 for null.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kb_index_len(index: *const KbIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Knowledge-embedding width; 0 for null.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kb_index_dim(index: *const KbIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.dim())
}

/// Greedy longest-match spans over raw token ids.
///
/// # Safety
/// `index` must be a live handle, `ids` readable for `len` elements (or null
/// when `len` is 0), `spans` writable for `capacity` elements, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_match_ids(
    index: *const KbIndex,
    ids: *const u32,
    len: usize,
    spans: *mut KbSpan,
    capacity: usize,
    out_len: *mut usize,
) -> KbStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let ids: &[u32] = if len == 0 {
            &[]
        } else if ids.is_null() {
            return Err(null("ids"));
        } else {
            std::slice::from_raw_parts(ids, len)
        };
        let found: Vec<KbSpan> = match_ids(ids, &index.0)
            .iter()
            .map(|s| KbSpan { start: s.start, end: s.end, entry: s.entry })
            .collect();
        fill(&found, spans, capacity, out_len)
    })
}

/// Tokenizes `text` with `vocab` and matches it against `index`. Fails with
/// `KB_STATUS_FINGERPRINT_MISMATCH` when the index was built with another vocabulary.
///
/// # Safety
/// As for [`kb_tokenize`] and [`kb_match_ids`].
#[no_mangle]
pub unsafe extern "C" fn kb_match_text(
    index: *const KbIndex,
    vocab: *const KbVocab,
    text: *const c_char,
    max_len: usize,
    spans: *mut KbSpan,
    capacity: usize,
    out_len: *mut usize,
) -> KbStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let vocab = ref_arg(vocab, "vocab")?;
        let seq = tokenize(str_arg(text, "text")?, &vocab.0, max_len);
        let found: Vec<KbSpan> = find_knowledge_expressions(&seq, &index.0)?
            .iter()
            .map(|s| KbSpan { start: s.start, end: s.end, entry: s.entry })
            .collect();
        fill(&found, spans, capacity, out_len)
    })
}

fn entry_of(index: &KbIndex, entry: u32) -> Result<&kbalign::kb::KnowledgeEntry, Failure> {
    index.0.entries().get(entry as usize).ok_or_else(|| {
        Failure(
            KbStatus::InvalidInput,
            format!("entry {entry} out of range for index of {} entries", index.0.len()),
        )
    })
}

/// Copies the entry's surface form as NUL-terminated UTF-8. `out_len`
/// receives the byte length without the terminator; `capacity` must exceed it.
///
/// # Safety
/// `index` must be a live handle, `buf` writable for `capacity` bytes, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_entry_surface(
    index: *const KbIndex,
    entry: u32,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> KbStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let surface = entry_of(index, entry)?.surface.as_bytes();
        let mut bytes = Vec::with_capacity(surface.len() + 1);
        bytes.extend(surface.iter().map(|&b| b as c_char));
        bytes.push(0);
        fill(&bytes, buf, capacity, out_len)?;
        *out_len = surface.len();
        Ok(())
    })
}

/// Copies the entry's knowledge embedding.
///
/// # Safety
/// `index` must be a live handle, `buf` writable for `capacity` floats, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn kb_entry_vector(
    index: *const KbIndex,
    entry: u32,
    buf: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> KbStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        fill(&entry_of(index, entry)?.vector, buf, capacity, out_len)
    })
}
