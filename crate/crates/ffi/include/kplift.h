#ifndef KPLIFT_H
#define KPLIFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Values 1-4 match the command-line exit codes.
typedef enum KpliftStatus {
  KPLIFT_STATUS_OK = 0,
  KPLIFT_STATUS_IO = 1,
  KPLIFT_STATUS_SCHEMA = 2,
  KPLIFT_STATUS_NUMERICAL = 3,
  KPLIFT_STATUS_UNDER_CONSTRAINED = 4,
  KPLIFT_STATUS_INVALID_ARGUMENT = 5,
  KPLIFT_STATUS_NULL_POINTER = 6,
  KPLIFT_STATUS_PANIC = 7,
} KpliftStatus;

// Lift path selection for [`kplift_lift`].
typedef enum KpliftStage {
  // Sampling for cross-view checkpoints, SDS otherwise.
  KPLIFT_STAGE_AUTO = 0,
  KPLIFT_STAGE_SDS = 1,
  KPLIFT_STAGE_SAMPLING = 2,
} KpliftStage;

// Opaque configuration handle.
typedef struct KpliftConfig KpliftConfig;

// Opaque metrics report handle.
typedef struct KpliftMetrics KpliftMetrics;

// Opaque 3D sequence handle (frames x joints x 3, metres).
typedef struct KpliftSeq3D KpliftSeq3D;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *kplift_last_error_message(void);

void kplift_clear_error(void);

// Library version as a static string.
const char *kplift_version(void);

// Default (desk preset) configuration.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum KpliftStatus kplift_config_default(struct KpliftConfig **out);

// Loads and validates a TOML configuration.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum KpliftStatus kplift_config_load(const char *path, struct KpliftConfig **out);

// # Safety
// `cfg` must be a live handle.
enum KpliftStatus kplift_config_set_seed(struct KpliftConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum KpliftStatus kplift_config_seed(const struct KpliftConfig *cfg, uint64_t *out);

// # Safety
// `cfg` must be NULL or a handle not freed before.
void kplift_config_free(struct KpliftConfig *cfg);

// Writes a synthetic dataset to `out_dir`.
//
// # Safety
// `cfg` must be a live handle; `out_dir` NUL-terminated.
enum KpliftStatus kplift_simulate(const struct KpliftConfig *cfg, const char *out_dir);

// Trains the single-view denoiser. `resume` may be NULL. The last
// training loss is written to `final_loss` when it is not NULL.
//
// # Safety
// Pointers must be valid or NULL where allowed.
enum KpliftStatus kplift_train_sv(const struct KpliftConfig *cfg,
                                  const char *dataset,
                                  const char *resume,
                                  const char *out_dir,
                                  double *final_loss);

// Trains the multi-view denoiser, optionally from a checkpoint (`from`
// may be NULL).
//
// # Safety
// Pointers must be valid or NULL where allowed.
enum KpliftStatus kplift_train_mv(const struct KpliftConfig *cfg,
                                  const char *dataset,
                                  const char *from,
                                  const char *out_dir,
                                  double *final_loss);

// Lifts a 2D motion file to a multi-view bundle in `out_dir`.
//
// # Safety
// Pointers must be valid.
enum KpliftStatus kplift_lift(const struct KpliftConfig *cfg,
                              const char *motion,
                              const char *camera,
                              const char *checkpoint,
                              enum KpliftStage stage,
                              const char *out_dir);

// Triangulates a bundle into `out_dir`.
//
// # Safety
// Pointers must be valid.
enum KpliftStatus kplift_reconstruct(const struct KpliftConfig *cfg,
                                     const char *bundle,
                                     const char *out_dir);

// Loads a 3D motion file.
//
// # Safety
// `path` NUL-terminated; `out` writable.
enum KpliftStatus kplift_seq3d_load(const char *path, struct KpliftSeq3D **out);

// Builds a sequence from `frames * joints * 3` row-major coordinates.
//
// # Safety
// `xyz` must point to `frames * joints * 3` doubles; `out` writable.
enum KpliftStatus kplift_seq3d_new(size_t frames,
                                   size_t joints,
                                   const double *xyz,
                                   struct KpliftSeq3D **out);

// # Safety
// `seq` must be a live handle.
size_t kplift_seq3d_frames(const struct KpliftSeq3D *seq);

// # Safety
// `seq` must be a live handle.
size_t kplift_seq3d_joints(const struct KpliftSeq3D *seq);

// Copies the coordinates into `buf`, which must hold `len` doubles with
// `len == frames * joints * 3`.
//
// # Safety
// `seq` live; `buf` valid for `len` writes.
enum KpliftStatus kplift_seq3d_coords(const struct KpliftSeq3D *seq, double *buf, size_t len);

// # Safety
// `seq` must be NULL or a handle not freed before.
void kplift_seq3d_free(struct KpliftSeq3D *seq);

// Mean per-joint position error in millimetres.
//
// # Safety
// Handles live; `out_mm` writable.
enum KpliftStatus kplift_mpjpe(const struct KpliftSeq3D *pred,
                               const struct KpliftSeq3D *gt,
                               double *out_mm);

// Procrustes-aligned MPJPE in millimetres.
//
// # Safety
// Handles live; `out_mm` writable.
enum KpliftStatus kplift_pa_mpjpe(const struct KpliftSeq3D *pred,
                                  const struct KpliftSeq3D *gt,
                                  double *out_mm);

// Scores `count` prediction files against ground-truth files and writes
// metrics.json / metrics.csv to `out_dir`.
//
// # Safety
// `pred` and `gt` must point to `count` NUL-terminated strings.
enum KpliftStatus kplift_evaluate(const struct KpliftConfig *cfg,
                                  const char *const *pred,
                                  const char *const *gt,
                                  size_t count,
                                  const char *out_dir,
                                  struct KpliftMetrics **out);

// Number of per-sequence rows.
//
// # Safety
// `m` must be a live handle.
size_t kplift_metrics_rows(const struct KpliftMetrics *m);

// Writes the 8 metric columns (J2D, J2D-C, T_root, MPJPE, PA-MPJPE, FS,
// T_O_root, O-MPJPE) of row `row`, or of the aggregate when `row` equals
// the row count. Missing values are NaN.
//
// # Safety
// `m` live; `out` valid for 8 writes.
enum KpliftStatus kplift_metrics_values(const struct KpliftMetrics *m, size_t row, double *out);

// # Safety
// `m` must be NULL or a handle not freed before.
void kplift_metrics_free(struct KpliftMetrics *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KPLIFT_H */
