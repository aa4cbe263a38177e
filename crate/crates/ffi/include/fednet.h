#ifndef FEDNET_H
#define FEDNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Voxel type codes; the values match the MVOL header byte.
 */
typedef enum FednetDtype {
  FEDNET_DTYPE_I16 = 1,
  FEDNET_DTYPE_F32 = 2,
  FEDNET_DTYPE_U8 = 3,
} FednetDtype;

typedef enum FednetStatus {
  FEDNET_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FEDNET_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad input: wrong dtype, mismatched dims, invalid config, non-UTF-8 path.
   */
  FEDNET_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The file could not be read or written.
   */
  FEDNET_STATUS_IO = 3,
  /**
   * A volume or checkpoint file is malformed or does not fit the network.
   */
  FEDNET_STATUS_FORMAT = 4,
  /**
   * Any other failure inside the library.
   */
  FEDNET_STATUS_INTERNAL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  FEDNET_STATUS_PANIC = 6,
} FednetStatus;

/**
 * A loaded liver/lesion model pair and the configuration used to run it.
 */
typedef struct FednetPipeline FednetPipeline;

/**
 * A CT (i16), probability (f32) or mask (u8) volume.
 */
typedef struct FednetVolume FednetVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful one. Valid until the next call into the library on this thread.
 */
const char *fednet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fednet_version(void);

/**
 * Reads an MVOL file of any voxel type.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FednetStatus fednet_volume_read(const char *path, struct FednetVolume **out);

/**
 * Writes a volume as MVOL.
 *
 * # Safety
 * `vol` must be a live handle; `path` a NUL-terminated string.
 */
enum FednetStatus fednet_volume_write(const struct FednetVolume *vol, const char *path);

/**
 * Copies `nx * ny * nz` voxels (x fastest) from `data` into a new volume.
 * `dtype` is a [`FednetDtype`] value.
 *
 * # Safety
 * `dims` and `spacing` must point to three elements, `data` to the voxel
 * count of the given type; `out` must be writable.
 */
enum FednetStatus fednet_volume_new(uint8_t dtype,
                                    const uint32_t *dims,
                                    const float *spacing,
                                    const void *data,
                                    struct FednetVolume **out);

/**
 * Releases a volume. Null is ignored.
 *
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void fednet_volume_free(struct FednetVolume *vol);

/**
 * Writes the extents to `dims[0..3]` and the voxel type to `dtype`.
 *
 * # Safety
 * `vol` must be a live handle, `dims` writable for three elements and
 * `dtype` writable.
 */
enum FednetStatus fednet_volume_info(const struct FednetVolume *vol,
                                     uint32_t *dims,
                                     enum FednetDtype *dtype);

/**
 * Borrows the voxel buffer. `*data` stays valid until the handle is freed;
 * `*len` is the voxel count, not bytes.
 *
 * # Safety
 * `vol` must be a live handle; `data` and `len` writable.
 */
enum FednetStatus fednet_volume_data(const struct FednetVolume *vol,
                                     const void **data,
                                     size_t *len);

/**
 * Maps an i16 CT volume through the fixed HU window to f32 in [0, 1].
 *
 * # Safety
 * `ct_vol` must be a live handle; `out` writable.
 */
enum FednetStatus fednet_hu_window(const struct FednetVolume *ct_vol, struct FednetVolume **out);

/**
 * Dice overlap of two u8 masks of equal size.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` writable.
 */
enum FednetStatus fednet_dice(const struct FednetVolume *a,
                              const struct FednetVolume *b,
                              double *out);

/**
 * One synthetic phantom: an i16 CT volume and its label volume
 * (0 background, 1 liver, 2 lesion).
 *
 * # Safety
 * `dims` must point to three elements; `out_ct` and `out_labels` writable.
 */
enum FednetStatus fednet_synth(uint64_t seed,
                               const uint32_t *dims,
                               struct FednetVolume **out_ct,
                               struct FednetVolume **out_labels);

/**
 * Loads a liver and a lesion checkpoint. `config` may be null for the
 * default configuration; it fixes the architecture and thresholds.
 *
 * # Safety
 * Paths must be NUL-terminated strings (`config` may be null); `out` writable.
 */
enum FednetStatus fednet_pipeline_load(const char *config,
                                       const char *liver_ckpt,
                                       const char *lesion_ckpt,
                                       struct FednetPipeline **out);

/**
 * Releases a pipeline. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void fednet_pipeline_free(struct FednetPipeline *p);

/**
 * Segments an i16 CT volume into a liver mask and a lesion mask. Either
 * output pointer may be null when that mask is not wanted.
 *
 * # Safety
 * `p` and `ct_vol` must be live handles; non-null outputs writable.
 */
enum FednetStatus fednet_pipeline_infer(const struct FednetPipeline *p,
                                        const struct FednetVolume *ct_vol,
                                        struct FednetVolume **out_liver,
                                        struct FednetVolume **out_lesion);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FEDNET_H */
