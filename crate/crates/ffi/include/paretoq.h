#ifndef PARETOQ_H
#define PARETOQ_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum PqStatus {
  PQ_STATUS_OK = 0,
  PQ_STATUS_NULL_POINTER = 1,
  PQ_STATUS_INVALID_ARGUMENT = 2,
  PQ_STATUS_SHAPE_MISMATCH = 3,
  PQ_STATUS_NON_FINITE = 4,
  PQ_STATUS_ALL_ZERO_CHANNEL = 5,
  PQ_STATUS_UNENCODABLE_LEVEL = 6,
  PQ_STATUS_CORRUPT_PAYLOAD = 7,
  PQ_STATUS_BUFFER_TOO_SMALL = 8,
  PQ_STATUS_INTERNAL = 9,
} PqStatus;

/**
 * Opaque packed weight matrix.
 */
typedef struct PqPackedMatrix PqPackedMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap`. Returns the full message
 * length excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t pq_last_error_message(char *buf, size_t cap);

/**
 * Quantizes a row-major `rows × cols` matrix with per-row scales set by
 * the default initializer and packs it. `bits` is 1, 1.58, 2, 3 or 4.
 * Ternary weights use base-3 packing unless `ternary_as_2bit` is set.
 *
 * # Safety
 * `weights` must point to `rows * cols` floats; `out` must be writable.
 */
enum PqStatus pq_quantize_pack(const float *weights,
                               size_t rows,
                               size_t cols,
                               double bits,
                               bool ternary_as_2bit,
                               struct PqPackedMatrix **out);

/**
 * Parses a packed file image.
 *
 * # Safety
 * `data` must point to `len` bytes; `out` must be writable.
 */
enum PqStatus pq_packed_from_bytes(const uint8_t *data, size_t len, struct PqPackedMatrix **out);

/**
 * Serializes `m` into `buf`. `written` receives the image size; when `buf`
 * is null or `cap` is too small nothing is copied and the status is
 * `BufferTooSmall`.
 *
 * # Safety
 * `m` must be a live handle; `buf` must be null or point to `cap` writable
 * bytes; `written` must be writable.
 */
enum PqStatus pq_packed_to_bytes(const struct PqPackedMatrix *m,
                                 uint8_t *buf,
                                 size_t cap,
                                 size_t *written);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t pq_packed_rows(const struct PqPackedMatrix *m);

/**
 * Number of columns, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t pq_packed_cols(const struct PqPackedMatrix *m);

/**
 * On-disk format tag, or -1 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
int32_t pq_packed_format(const struct PqPackedMatrix *m);

/**
 * Payload size in bytes excluding header and scales, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t pq_packed_payload_bytes(const struct PqPackedMatrix *m);

/**
 * `y = dequant(m) · x` with `x_len == cols` and `y_len == rows`.
 *
 * # Safety
 * `m` must be a live handle; `x` and `y` must point to `x_len` and `y_len`
 * floats.
 */
enum PqStatus pq_gemv(const struct PqPackedMatrix *m,
                      const float *x,
                      size_t x_len,
                      float *y,
                      size_t y_len);

/**
 * Writes the dequantized matrix, row-major, into `out` (`len == rows * cols`).
 *
 * # Safety
 * `m` must be a live handle; `out` must point to `len` floats.
 */
enum PqStatus pq_decode(const struct PqPackedMatrix *m, float *out, size_t len);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a live handle not used afterwards.
 */
void pq_packed_free(struct PqPackedMatrix *m);

/**
 * Effective model size in bytes. 1.58-bit counts as log2(3) bits unless
 * `storage_honest`, which counts 1.6.
 *
 * # Safety
 * `out` must be writable.
 */
enum PqStatus pq_effective_size(uint64_t n_weights,
                                double weight_bits,
                                uint64_t n_embedding_weights,
                                double embedding_bits,
                                bool storage_honest,
                                double *out);

/**
 * Payload bytes for a format tag and shape.
 *
 * # Safety
 * `out` must be writable.
 */
enum PqStatus pq_storage_size(uint8_t format_tag, size_t rows, size_t cols, size_t *out);

/**
 * Quantize-dequantize a row-major matrix with per-row scales from the
 * default initializer. Writes `rows * cols` values to `out` and, when
 * `alpha_out` is non-null, the `rows` scales.
 *
 * # Safety
 * `w` and `out` must point to `rows * cols` floats; `alpha_out` must be
 * null or point to `rows` floats.
 */
enum PqStatus pq_fake_quant(const float *w,
                            size_t rows,
                            size_t cols,
                            double bits,
                            float *out,
                            float *alpha_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARETOQ_H */
