#ifndef CONVDR_H
#define CONVDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every entry point.
 */
typedef enum ConvdrStatus {
  CONVDR_STATUS_OK = 0,
  CONVDR_STATUS_INVALID_ARGUMENT = 1,
  CONVDR_STATUS_IO = 2,
  CONVDR_STATUS_PARSE = 3,
  CONVDR_STATUS_DATA = 4,
  CONVDR_STATUS_SHAPE = 5,
  CONVDR_STATUS_INVARIANT = 6,
  CONVDR_STATUS_NULL_POINTER = 7,
  CONVDR_STATUS_BUFFER_TOO_SMALL = 8,
  CONVDR_STATUS_PANIC = 9,
} ConvdrStatus;

/**
 * Query encoder checkpoint.
 */
typedef struct ConvdrEncoder ConvdrEncoder;

/**
 * Dense document index.
 */
typedef struct ConvdrIndex ConvdrIndex;

/**
 * Token vocabulary.
 */
typedef struct ConvdrVocab ConvdrVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or "" after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *convdr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *convdr_version(void);

/**
 * Loads an index written by `convdr encode-corpus`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ConvdrStatus convdr_index_load(const char *path, struct ConvdrIndex **out);

/**
 * # Safety
 * `index` must come from [`convdr_index_load`] and not be used afterwards.
 */
void convdr_index_free(struct ConvdrIndex *index);

/**
 * Number of documents, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t convdr_index_len(const struct ConvdrIndex *index);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t convdr_index_dim(const struct ConvdrIndex *index);

/**
 * Exact top-`k` search. Writes up to `k` row numbers and scores, best
 * first with ties broken by doc id, and their count to `out_count`.
 *
 * # Safety
 * `query` must hold `dim` doubles; `out_rows` and `out_scores` must hold
 * `k` elements each.
 */
enum ConvdrStatus convdr_index_search(const struct ConvdrIndex *index,
                                      const double *query,
                                      size_t dim,
                                      size_t k,
                                      size_t *out_rows,
                                      double *out_scores,
                                      size_t *out_count);

/**
 * Copies the doc id of `row` into `buf` with a trailing NUL. `out_len`
 * receives the id length without the NUL; when `buf_len` is too small the
 * call fails with `BUFFER_TOO_SMALL` and nothing is written to `buf`.
 *
 * # Safety
 * `buf` must hold `buf_len` bytes.
 */
enum ConvdrStatus convdr_index_doc_id(const struct ConvdrIndex *index,
                                      size_t row,
                                      char *buf,
                                      size_t buf_len,
                                      size_t *out_len);

/**
 * Loads a dual-encoder checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ConvdrStatus convdr_encoder_load(const char *path, struct ConvdrEncoder **out);

/**
 * # Safety
 * `encoder` must come from [`convdr_encoder_load`] and not be used afterwards.
 */
void convdr_encoder_free(struct ConvdrEncoder *encoder);

/**
 * Output dimension, or 0 for a null handle.
 *
 * # Safety
 * `encoder` must be null or a live handle.
 */
size_t convdr_encoder_dim(const struct ConvdrEncoder *encoder);

/**
 * Encodes `n_tokens` token ids into `out`, which must hold `out_len`
 * doubles; `out_len` must equal the encoder dimension.
 *
 * # Safety
 * `tokens` must hold `n_tokens` ids and `out` must hold `out_len` doubles.
 */
enum ConvdrStatus convdr_encoder_encode(const struct ConvdrEncoder *encoder,
                                        const uint32_t *tokens,
                                        size_t n_tokens,
                                        double *out,
                                        size_t out_len);

/**
 * Loads a vocabulary TSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ConvdrStatus convdr_vocab_load(const char *path, struct ConvdrVocab **out);

/**
 * # Safety
 * `vocab` must come from [`convdr_vocab_load`] and not be used afterwards.
 */
void convdr_vocab_free(struct ConvdrVocab *vocab);

/**
 * Tokenizes UTF-8 `text`, dropping unknown words. `out_len` receives the
 * number of ids; if it exceeds `cap` the call fails with `BUFFER_TOO_SMALL`
 * and `out_ids` is left untouched.
 *
 * # Safety
 * `text` must be NUL-terminated and `out_ids` must hold `cap` ids.
 */
enum ConvdrStatus convdr_vocab_tokenize(const struct ConvdrVocab *vocab,
                                        const char *text,
                                        uint32_t *out_ids,
                                        size_t cap,
                                        size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVDR_H */
