#ifndef GRAMSCORE_H
#define GRAMSCORE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_UTF8 = 2,
  GS_STATUS_PARSE = 3,
  GS_STATUS_CONFIG = 4,
  GS_STATUS_STATE = 5,
  GS_STATUS_IO = 6,
  GS_STATUS_ARGUMENT = 7,
  GS_STATUS_FAILED = 8,
  GS_STATUS_PANIC = 9,
} GsStatus;

/**
 * A calibrated reference set for one question.
 */
typedef struct GsReferenceSet GsReferenceSet;

/**
 * Parsed helpfulness rules with normalized terms.
 */
typedef struct GsRuleSet GsRuleSet;

typedef struct GsMetricTriple {
  double fluency;
  double truthfulness;
  double helpfulness;
  /**
   * Mean of the three metrics.
   */
  double score;
} GsMetricTriple;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds and calibrates a reference set from `count` raw answer strings.
 *
 * # Safety
 * `question_id` and each of the `count` entries of `answers` must be valid
 * NUL-terminated strings; `out` must be a valid pointer.
 */
enum GsStatus gs_refset_new(const char *question_id,
                            const char *const *answers,
                            size_t count,
                            struct GsReferenceSet **out);

/**
 * Loads and calibrates a `.refset` file written by `gramscore build-refset`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` a valid pointer.
 */
enum GsStatus gs_refset_load(const char *path, struct GsReferenceSet **out);

/**
 * Number of answers in the reference set; 0 for a null handle.
 *
 * # Safety
 * `refset` must be null or a live handle.
 */
size_t gs_refset_len(const struct GsReferenceSet *refset);

/**
 * # Safety
 * `refset` must be null or a handle not yet freed.
 */
void gs_refset_free(struct GsReferenceSet *refset);

/**
 * Parses helpfulness rules (one `weight<TAB>expression` clause per line).
 *
 * # Safety
 * `source` must be a valid NUL-terminated string; `out` a valid pointer.
 */
enum GsStatus gs_rules_parse(const char *source, struct GsRuleSet **out);

/**
 * # Safety
 * `rules` must be null or a handle not yet freed.
 */
void gs_rules_free(struct GsRuleSet *rules);

/**
 * Scores one raw response. `threshold` is the truthfulness
 * document-frequency cap; pass 0.005 for the default.
 *
 * # Safety
 * Handles must be live, `response` a valid NUL-terminated string and `out`
 * a valid pointer.
 */
enum GsStatus gs_score(const struct GsReferenceSet *refset,
                       const struct GsRuleSet *rules,
                       const char *response,
                       double threshold,
                       struct GsMetricTriple *out);

/**
 * Length discount applied to texts longer than 100 characters.
 */
double gs_discount(size_t length);

/**
 * Pearson correlation of two series of `count` values.
 *
 * # Safety
 * `xs` and `ys` must each point to `count` readable doubles; `out` must be
 * a valid pointer.
 */
enum GsStatus gs_pearson(const double *xs, const double *ys, size_t count, double *out);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * owned by the library and valid until the next failing call on the thread.
 */
const char *gs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAMSCORE_H */
