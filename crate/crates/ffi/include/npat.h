#ifndef NPAT_H
#define NPAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NpatStatus {
  NPAT_STATUS_OK = 0,
  NPAT_STATUS_NULL_POINTER = 1,
  NPAT_STATUS_INVALID_ARGUMENT = 2,
  NPAT_STATUS_PARSE = 3,
  NPAT_STATUS_IO = 4,
  NPAT_STATUS_CHECKPOINT = 5,
  NPAT_STATUS_CONFIG = 6,
  NPAT_STATUS_RUNTIME = 7,
  NPAT_STATUS_PANIC = 8,
} NpatStatus;

/**
 * A row-major matrix of doubles.
 */
typedef struct NpatMatrix NpatMatrix;

/**
 * A trained or freshly initialized acoustic model.
 */
typedef struct NpatModel NpatModel;

/**
 * A parsed musical score.
 */
typedef struct NpatScore NpatScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failed call on this thread; empty after a
 * success. The pointer stays valid until the next `npat_*` call on the
 * same thread.
 */
const char *npat_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *npat_version(void);

/**
 * Parses score text (the `.score` format).
 */
enum NpatStatus npat_score_parse(const char *text_utf8, struct NpatScore **out);

enum NpatStatus npat_score_load(const char *path, struct NpatScore **out);

void npat_score_free(struct NpatScore *score);

/**
 * Phoneme count (the encoder length) and frame count of a score.
 */
enum NpatStatus npat_score_dims(const struct NpatScore *score, size_t *phonemes, size_t *frames);

/**
 * Guided-attention penalty `[phonemes, ceil(frames / r)]`.
 */
enum NpatStatus npat_penalty_matrix(const struct NpatScore *score,
                                    size_t reduction_factor,
                                    size_t decay_frames,
                                    size_t shift_frames,
                                    struct NpatMatrix **out);

/**
 * Untrained model with default dimensions for the named mode
 * (`prop`, `base`, ...).
 */
enum NpatStatus npat_model_new(const char *mode, uint64_t seed, struct NpatModel **out);

/**
 * Loads a checkpoint written by `npat train`. `config_path` is the run's
 * `config.txt`; pass NULL to use the default configuration.
 */
enum NpatStatus npat_model_load(const char *config_path,
                                const char *checkpoint_path,
                                struct NpatModel **out);

void npat_model_free(struct NpatModel *model);

/**
 * Synthesizes a score. `frames_out` receives `[frames, D]` acoustic frames
 * with absolute log-F0; `alignment_out` receives `[phonemes, steps]`.
 * Either output may be NULL if not wanted. Models in `noatt` mode need an
 * oracle alignment and are rejected.
 */
enum NpatStatus npat_synthesize(const struct NpatModel *model,
                                const struct NpatScore *score,
                                struct NpatMatrix **frames_out,
                                struct NpatMatrix **alignment_out);

enum NpatStatus npat_matrix_dims(const struct NpatMatrix *m, size_t *rows, size_t *cols);

/**
 * Row-major values, `rows * cols` long, owned by the matrix.
 */
const double *npat_matrix_data(const struct NpatMatrix *m);

void npat_matrix_free(struct NpatMatrix *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NPAT_H */
