#ifndef TOTR_H
#define TOTR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Codes 1 to 3 match the CLI exit codes.
typedef enum TotrStatus {
  TOTR_STATUS_OK = 0,
  // Invalid argument or configuration.
  TOTR_STATUS_USAGE = 1,
  // Malformed, inconsistent or unreadable data.
  TOTR_STATUS_DATA = 2,
  // Singular system or other numerical failure.
  TOTR_STATUS_NUMERIC = 3,
  // A required pointer argument was null.
  TOTR_STATUS_NULL_POINTER = 4,
  // An output buffer is too small.
  TOTR_STATUS_BUFFER_TOO_SMALL = 5,
  // No batch has been emitted yet.
  TOTR_STATUS_NO_BATCH = 6,
  // Internal panic; the handle involved should be freed.
  TOTR_STATUS_PANIC = 7,
} TotrStatus;

// Fitted coefficient collection.
typedef struct TotrCollection TotrCollection;

// Streaming predictor. Owns copies of the collection, reference and
// skeleton it was created from.
typedef struct TotrPredictor TotrPredictor;

// Reference cycle produced by `totr prep`.
typedef struct TotrReference TotrReference;

// Skeleton with fixed segment lengths.
typedef struct TotrSkeleton TotrSkeleton;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on the calling thread; empty when none.
// The pointer stays valid until the next failing call on this thread.
const char *totr_last_error(void);

// Library version as a static NUL-terminated string.
const char *totr_version(void);

// Loads a collection file written by `totr build`.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum TotrStatus totr_collection_load(const char *path, struct TotrCollection **out);

// # Safety
// `coll` is a live handle and `path` a NUL-terminated string.
enum TotrStatus totr_collection_save(const struct TotrCollection *coll, const char *path);

// Number of models, window length `L_f` and horizon `K_f` in frames, and
// the frame rate. Any output pointer may be null.
//
// # Safety
// `coll` is a live handle; non-null outputs are writable.
enum TotrStatus totr_collection_info(const struct TotrCollection *coll,
                                     size_t *models,
                                     size_t *past_frames,
                                     size_t *future_frames,
                                     double *frame_rate);

// # Safety
// `coll` is null or a handle not freed before.
void totr_collection_free(struct TotrCollection *coll);

// Loads a skeleton TOML file.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum TotrStatus totr_skeleton_load(const char *path, struct TotrSkeleton **out);

// Parses a skeleton from TOML text.
//
// # Safety
// `toml` is a NUL-terminated string and `out` is writable.
enum TotrStatus totr_skeleton_parse(const char *toml, struct TotrSkeleton **out);

// Number of joints, root included; stream frames carry three values per
// joint in skeleton order.
//
// # Safety
// `skel` is a live handle and `out` is writable.
enum TotrStatus totr_skeleton_joint_count(const struct TotrSkeleton *skel, size_t *out);

// # Safety
// `skel` is null or a handle not freed before.
void totr_skeleton_free(struct TotrSkeleton *skel);

// Loads a reference cycle JSON file written by `totr prep`.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum TotrStatus totr_reference_load(const char *path, struct TotrReference **out);

// # Safety
// `reference` is null or a handle not freed before.
void totr_reference_free(struct TotrReference *reference);

// Creates a streaming predictor. The inputs are copied, so they may be
// freed afterwards.
//
// # Safety
// The three inputs are live handles and `out` is writable.
enum TotrStatus totr_predictor_new(const struct TotrCollection *coll,
                                   const struct TotrReference *reference,
                                   const struct TotrSkeleton *skel,
                                   struct TotrPredictor **out);

// Feeds one frame of `len = joints * 3` Cartesian coordinates (meters, skeleton
// joint order) with its stream index. Sets `*emitted` to whether a new
// batch is available through `totr_predictor_batch_*`.
//
// # Safety
// `pred` is a live handle, `points` holds `len` values and `emitted` is
// writable.
enum TotrStatus totr_predictor_push(struct TotrPredictor *pred,
                                    uint64_t index,
                                    const double *points,
                                    size_t len,
                                    bool *emitted);

// Describes the latest batch: the stream index it was made at, its frame
// count (`K_f`), joints per frame, selected model and the number of
// predicted angles clamped into `[0, pi]`. Any output pointer may be null.
//
// # Safety
// `pred` is a live handle; non-null outputs are writable.
enum TotrStatus totr_predictor_batch_info(const struct TotrPredictor *pred,
                                          uint64_t *stamp,
                                          size_t *frames,
                                          size_t *joints,
                                          size_t *model_index,
                                          size_t *clamp_count);

// Copies the latest batch's coordinates, `frames x joints x 3` values in
// frame-major order, into `out` of capacity `len`.
//
// # Safety
// `pred` is a live handle and `out` has room for `len` values.
enum TotrStatus totr_predictor_batch_coordinates(const struct TotrPredictor *pred,
                                                 double *out,
                                                 size_t len);

// # Safety
// `pred` is null or a handle not freed before.
void totr_predictor_free(struct TotrPredictor *pred);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOTR_H */
