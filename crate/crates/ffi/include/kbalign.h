#ifndef KBALIGN_H
#define KBALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum KbStatus {
  KB_STATUS_OK = 0,
  KB_STATUS_NULL_POINTER = 1,
  KB_STATUS_INVALID_UTF8 = 2,
  KB_STATUS_IO = 3,
  KB_STATUS_PARSE = 4,
  KB_STATUS_INVALID_INPUT = 5,
  KB_STATUS_CONFIG = 6,
  KB_STATUS_FINGERPRINT_MISMATCH = 7,
  KB_STATUS_NUMERIC = 8,
  KB_STATUS_BUFFER_TOO_SMALL = 9,
  KB_STATUS_PANIC = 10,
} KbStatus;

// Opaque knowledge index handle.
typedef struct KbIndex KbIndex;

// Opaque vocabulary handle.
typedef struct KbVocab KbVocab;

// Half-open token interval `[start, end)` matched to index entry `entry`.
typedef struct KbSpan {
  size_t start;
  size_t end;
  uint32_t entry;
} KbSpan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *kb_last_error_message(void);

// Loads a vocabulary file (one token per line).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum KbStatus kb_vocab_load(const char *path, struct KbVocab **out);

// Releases a vocabulary. Null is ignored.
//
// # Safety
// `vocab` must come from [`kb_vocab_load`] and not be used afterwards.
void kb_vocab_free(struct KbVocab *vocab);

// Number of tokens in the vocabulary; 0 for null.
//
// # Safety
// `vocab` must be null or a live handle.
size_t kb_vocab_len(const struct KbVocab *vocab);

// Tokenizes `text`, keeping at most `max_len` ids.
//
// # Safety
// `vocab` must be a live handle, `text` NUL-terminated, `ids` writable for
// `capacity` elements (or null when `capacity` is 0), `out_len` writable.
enum KbStatus kb_tokenize(const struct KbVocab *vocab,
                          const char *text,
                          size_t max_len,
                          uint32_t *ids,
                          size_t capacity,
                          size_t *out_len);

// Loads a binary index and checks that it was built with `vocab`.
//
// # Safety
// `path` must be NUL-terminated, `vocab` a live handle, `out` writable.
enum KbStatus kb_index_load(const char *path, const struct KbVocab *vocab, struct KbIndex **out);

// Builds an index from an embedding file with `dim` floats per line.
//
// # Safety
// `vocab` must be a live handle, `embeddings` NUL-terminated, `out` writable.
enum KbStatus kb_index_build(const struct KbVocab *vocab,
                             const char *embeddings,
                             size_t dim,
                             struct KbIndex **out);

// Writes the index to `path` in the binary container format.
//
// # Safety
// `index` must be a live handle and `path` NUL-terminated.
enum KbStatus kb_index_save(const struct KbIndex *index, const char *path);

// Releases an index. Null is ignored.
//
// # Safety
// `index` must come from [`kb_index_load`] or [`kb_index_build`] and not be used afterwards.
void kb_index_free(struct KbIndex *index);

// Number of stored entries; 0 for null.
//
// # Safety
// `index` must be null or a live handle.
size_t kb_index_len(const struct KbIndex *index);

// Knowledge-embedding width; 0 for null.
//
// # Safety
// `index` must be null or a live handle.
size_t kb_index_dim(const struct KbIndex *index);

// Greedy longest-match spans over raw token ids.
//
// # Safety
// `index` must be a live handle, `ids` readable for `len` elements (or null
// when `len` is 0), `spans` writable for `capacity` elements, `out_len` writable.
enum KbStatus kb_match_ids(const struct KbIndex *index,
                           const uint32_t *ids,
                           size_t len,
                           struct KbSpan *spans,
                           size_t capacity,
                           size_t *out_len);

// Tokenizes `text` with `vocab` and matches it against `index`. Fails with
// `KB_STATUS_FINGERPRINT_MISMATCH` when the index was built with another vocabulary.
//
// # Safety
// As for [`kb_tokenize`] and [`kb_match_ids`].
enum KbStatus kb_match_text(const struct KbIndex *index,
                            const struct KbVocab *vocab,
                            const char *text,
                            size_t max_len,
                            struct KbSpan *spans,
                            size_t capacity,
                            size_t *out_len);

// Copies the entry's surface form as NUL-terminated UTF-8. `out_len`
// receives the byte length without the terminator; `capacity` must exceed it.
//
// # Safety
// `index` must be a live handle, `buf` writable for `capacity` bytes, `out_len` writable.
enum KbStatus kb_entry_surface(const struct KbIndex *index,
                               uint32_t entry,
                               char *buf,
                               size_t capacity,
                               size_t *out_len);

// Copies the entry's knowledge embedding.
//
// # Safety
// `index` must be a live handle, `buf` writable for `capacity` floats, `out_len` writable.
enum KbStatus kb_entry_vector(const struct KbIndex *index,
                              uint32_t entry,
                              float *buf,
                              size_t capacity,
                              size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KBALIGN_H */
