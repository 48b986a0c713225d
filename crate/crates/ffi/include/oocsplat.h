#ifndef OOCSPLAT_H
#define OOCSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OocStatus {
  OOC_STATUS_OK = 0,
  OOC_STATUS_NULL_ARG = 1,
  OOC_STATUS_IO = 2,
  OOC_STATUS_CORRUPT = 3,
  OOC_STATUS_OUT_OF_RANGE = 4,
  OOC_STATUS_INVALID_CONFIG = 5,
  OOC_STATUS_CAPACITY = 6,
  OOC_STATUS_NON_FINITE = 7,
  OOC_STATUS_INTERNAL = 8,
} OocStatus;

/**
 * Opaque handle to an open block store.
 */
typedef struct OocStore OocStore;

/**
 * Location of the newest version of a block.
 */
typedef struct OocIndexEntry {
  uint32_t file_id;
  uint64_t offset;
  uint64_t size;
  uint64_t version;
} OocIndexEntry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in
 * bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ooc_last_error_message(char *buf, size_t len);

/**
 * Bytes in one block record: `block_size * dim * 4`, or 0 if either is 0.
 */
uint64_t ooc_block_payload_bytes(uint64_t block_size, uint64_t dim);

/**
 * Interleaves 2 or 3 quantized coordinates into a Morton code.
 *
 * # Safety
 * `coords` must be valid for `n` values; `out` must be writable.
 */
enum OocStatus ooc_morton_code(const uint64_t *coords, size_t n, uint64_t *out);

/**
 * Creates a store in `dir` from a row-major `n x dim` table of `len`
 * floats, replacing any existing store there.
 *
 * # Safety
 * `dir` must be a NUL-terminated string, `values` valid for `len` floats,
 * `out` writable.
 */
enum OocStatus ooc_store_create(const char *dir,
                                uint64_t n,
                                size_t dim,
                                size_t block_size,
                                const float *values,
                                size_t len,
                                struct OocStore **out);

/**
 * Opens an existing store, rebuilding its index from the segments.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` writable.
 */
enum OocStatus ooc_store_open(const char *dir, struct OocStore **out);

/**
 * Releases a store handle. Null is ignored.
 *
 * # Safety
 * `store` must come from `ooc_store_open`/`ooc_store_create` and not be
 * used afterwards.
 */
void ooc_store_free(struct OocStore *store);

/**
 * # Safety
 * `store` must be a live handle; `out` writable.
 */
enum OocStatus ooc_store_block_count(const struct OocStore *store, uint32_t *out);

/**
 * Floats per block record (block_size * dim).
 *
 * # Safety
 * `store` must be a live handle; `out` writable.
 */
enum OocStatus ooc_store_block_floats(const struct OocStore *store, size_t *out);

/**
 * Reads the newest version of block `k` into `buf` (exactly one record of
 * floats). `version` may be null.
 *
 * # Safety
 * `store` must be a live handle; `buf` valid for `len` floats; `version`
 * null or writable.
 */
enum OocStatus ooc_store_read_block(const struct OocStore *store,
                                    uint32_t k,
                                    float *buf,
                                    size_t len,
                                    uint64_t *version);

/**
 * Appends a new version of block `k` to the patch log.
 *
 * # Safety
 * `store` must be a live handle; `values` valid for `len` floats.
 */
enum OocStatus ooc_store_append_block(struct OocStore *store,
                                      uint32_t k,
                                      const float *values,
                                      size_t len);

/**
 * # Safety
 * `store` must be a live handle; `out` writable.
 */
enum OocStatus ooc_store_index_entry(const struct OocStore *store,
                                     uint32_t k,
                                     struct OocIndexEntry *out);

/**
 * Merges patch segments into a new base segment. `reclaimed` may be null.
 *
 * # Safety
 * `store` must be a live handle not used concurrently; `reclaimed` null or
 * writable.
 */
enum OocStatus ooc_store_compact(struct OocStore *store, uint64_t *reclaimed);

/**
 * Runs training from a TOML run configuration and writes its report.
 * `final_psnr` may be null.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `final_psnr` null or
 * writable.
 */
enum OocStatus ooc_train(const char *config_path, double *final_psnr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OOCSPLAT_H */
