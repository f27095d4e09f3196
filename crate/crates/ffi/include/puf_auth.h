#ifndef PUF_AUTH_H
#define PUF_AUTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PufStatus {
  PUF_STATUS_OK = 0,
  PUF_STATUS_NULL_POINTER = 1,
  PUF_STATUS_INVALID_ARGUMENT = 2,
  PUF_STATUS_LENGTH_MISMATCH = 3,
  PUF_STATUS_MALFORMED = 4,
  PUF_STATUS_BUFFER_TOO_SMALL = 5,
  PUF_STATUS_PANIC = 6,
} PufStatus;

/**
 * Opaque helper-data handle. Release with `puf_helper_free`.
 */
typedef struct PufHelper PufHelper;

/**
 * Per-block decode accounting.
 */
typedef struct PufDecodeStats {
  size_t clean;
  size_t single_corrected;
  size_t double_detected;
  size_t miscorrection_possible;
  size_t bit_flips_applied;
} PufDecodeStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code. Never null.
 */
const char *puf_status_str(enum PufStatus status);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap`. Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t puf_last_error_message(char *buf, size_t cap);

/**
 * Parses a variant name such as `H(8,4)` into its tag.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `tag_out` must be writable.
 */
enum PufStatus puf_variant_tag(const char *name, uint8_t *tag_out);

/**
 * Hamming distance between two packed responses of `n_bits` each.
 *
 * # Safety
 * `a` and `b` must each point to `ceil(n_bits / 8)` bytes.
 */
enum PufStatus puf_hamming_distance(const uint8_t *a,
                                    const uint8_t *b,
                                    size_t n_bits,
                                    size_t *distance_out);

/**
 * Impostor acceptance probability `P[Bin(n, mismatch_p) <= floor(tau * n)]`.
 *
 * # Safety
 * `far_out` must be writable.
 */
enum PufStatus puf_far(size_t n, double mismatch_p, double tau, double *far_out);

/**
 * Largest grid threshold whose FAR stays within `alpha_far`.
 * `floored_out` is set to 1 when even zero mismatches exceed the budget.
 *
 * # Safety
 * Both out-pointers must be writable.
 */
enum PufStatus puf_tau_max(size_t n,
                           double mismatch_p,
                           double alpha_far,
                           double *tau_out,
                           uint8_t *floored_out);

/**
 * Smallest grid threshold whose empirical FRR over the genuine error
 * counts is at most `alpha_frr`.
 *
 * # Safety
 * `error_counts` must point to `count` values; `tau_out` must be writable.
 */
enum PufStatus puf_tau_min(const uint32_t *error_counts,
                           size_t count,
                           size_t n,
                           double alpha_frr,
                           double *tau_out);

/**
 * Builds helper data for an enrolled response.
 *
 * # Safety
 * `data` must point to `ceil(n_bits / 8)` bytes; `helper_out` must be writable.
 */
enum PufStatus puf_helper_enroll(const uint8_t *data,
                                 size_t n_bits,
                                 uint8_t variant_tag,
                                 struct PufHelper **helper_out);

/**
 * Parses a serialized `PUFH` blob.
 *
 * # Safety
 * `buf` must point to `len` bytes; `helper_out` must be writable.
 */
enum PufStatus puf_helper_parse(const uint8_t *buf, size_t len, struct PufHelper **helper_out);

/**
 * Serializes a helper. With a null `buf` only the required size is
 * reported; a short buffer yields `PUF_STATUS_BUFFER_TOO_SMALL` and the
 * required size in `written_out`.
 *
 * # Safety
 * `helper` must be a live handle; `buf` null or valid for `cap` bytes.
 */
enum PufStatus puf_helper_serialize(const struct PufHelper *helper,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *written_out);

/**
 * Variant tag and protected response length of a helper.
 *
 * # Safety
 * `helper` must be a live handle; out-pointers writable.
 */
enum PufStatus puf_helper_info(const struct PufHelper *helper,
                               uint8_t *variant_tag_out,
                               size_t *n_bits_out);

/**
 * Corrects a raw response with a helper, writing `ceil(n_bits / 8)` packed
 * bytes to `corrected`. `stats_out` may be null.
 *
 * # Safety
 * `raw` must point to `ceil(n_bits / 8)` bytes, `corrected` to `cap` writable bytes.
 */
enum PufStatus puf_helper_decode(const struct PufHelper *helper,
                                 const uint8_t *raw,
                                 size_t n_bits,
                                 uint8_t *corrected,
                                 size_t cap,
                                 struct PufDecodeStats *stats_out);

/**
 * Releases a helper handle. Null is a no-op.
 *
 * # Safety
 * `helper` must come from this library and not be used afterwards.
 */
void puf_helper_free(struct PufHelper *helper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PUF_AUTH_H */
