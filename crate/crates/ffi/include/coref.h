#ifndef COREF_H
#define COREF_H

#include <stdint.h>

typedef enum CorefStatus {
  COREF_STATUS_OK = 0,
  COREF_STATUS_ORACLE = 1,
  COREF_STATUS_INVALID_INPUT = 2,
  COREF_STATUS_DIVERGENCE = 3,
  COREF_STATUS_CHECKPOINT = 4,
  COREF_STATUS_DOC_MISMATCH = 5,
  COREF_STATUS_NULL_ARGUMENT = 6,
  COREF_STATUS_PANIC = 7,
} CorefStatus;

/**
 * Opaque model handle.
 */
typedef struct CorefModel CorefModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint and its settings sidecar. `overrides` is null or
 * whitespace-separated `key=value` pairs; `embeddings_path` is null for
 * hash-seeded vectors.
 *
 * # Safety
 * String arguments are null or NUL-terminated; `out` is a valid pointer.
 */
enum CorefStatus coref_model_load(const char *checkpoint_path,
                                  const char *embeddings_path,
                                  const char *overrides,
                                  struct CorefModel **out);

/**
 * # Safety
 * `model` is null or a handle from `coref_model_load` not yet freed.
 */
void coref_model_free(struct CorefModel *model);

/**
 * Predicts clusters for a JSONL corpus; writes cluster JSONL, one line
 * per input document.
 *
 * # Safety
 * `model` is a live handle; `corpus_jsonl` is NUL-terminated; `out` is a
 * valid pointer.
 */
enum CorefStatus coref_model_predict_jsonl(const struct CorefModel *model,
                                           const char *corpus_jsonl,
                                           char **out);

/**
 * Scores cluster JSONL `response` against `key`; writes a JSON report.
 *
 * # Safety
 * `key_jsonl` and `response_jsonl` are NUL-terminated; `out` is valid.
 */
enum CorefStatus coref_score_jsonl(const char *key_jsonl, const char *response_jsonl, char **out);

/**
 * # Safety
 * `s` is null or a string returned by this library, not yet freed.
 */
void coref_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *coref_last_error_message(void);

const char *coref_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COREF_H */
