#ifndef VVF_H
#define VVF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every fallible function.
typedef enum VvfStatus {
  VVF_STATUS_OK = 0,
  VVF_STATUS_NULL_POINTER = 1,
  VVF_STATUS_INVALID_ARGUMENT = 2,
  VVF_STATUS_IO = 3,
  VVF_STATUS_CORRUPT_FILE = 4,
  VVF_STATUS_SHAPE_MISMATCH = 5,
  VVF_STATUS_PARSE = 6,
  VVF_STATUS_SOLVER = 7,
  VVF_STATUS_BUFFER_TOO_SMALL = 8,
  VVF_STATUS_PANIC = 9,
} VvfStatus;

typedef enum VvfTauMode {
  // The constant is the relaxation time.
  VVF_TAU_MODE_LITERAL = 0,
  // The constant is the lattice viscosity.
  VVF_TAU_MODE_VISCOSITY = 1,
} VvfTauMode;

// Contents of a VVF container.
typedef struct VvfField VvfField;

// Observation frames and future path of one target vehicle.
typedef struct VvfSequence VvfSequence;

// Field-solve settings; start from `vvf_solve_options_default`.
typedef struct VvfSolveOptions {
  // A `VvfTauMode` value.
  uint32_t tau_mode;
  double tau;
  // Bounced-back fraction at lane markings.
  double beta;
  // m/s per step.
  double conv_tol;
  uint32_t max_iters;
  bool warm_start;
  // Solve frames concurrently.
  bool parallel;
} VvfSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *vvf_last_error(void);

// Library version as a static NUL-terminated string.
const char *vvf_version(void);

struct VvfSolveOptions vvf_solve_options_default(void);

// Build a sequence from scenario-file text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum VvfStatus vvf_sequence_from_scenario(const char *text, struct VvfSequence **out);

// Build a sequence from a scenario file on disk.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VvfStatus vvf_sequence_read_scenario(const char *path, struct VvfSequence **out);

// Observation frames `h` and prediction steps `p`.
//
// # Safety
// `seq` must come from this library; `h` and `p` must be valid pointers.
enum VvfStatus vvf_sequence_dims(const struct VvfSequence *seq, size_t *h, size_t *p);

// Future target path in its own frame as `x0, y0, x1, y1, ...`; `len`
// must be at least `2 p`.
//
// # Safety
// `seq` must come from this library; `xy` must be valid for `len` writes.
enum VvfStatus vvf_sequence_truth(const struct VvfSequence *seq, double *xy, size_t len);

// # Safety
// `seq` must be null or come from this library and not be used afterwards.
void vvf_sequence_free(struct VvfSequence *seq);

// Rasterize and solve every observation frame.
//
// # Safety
// `seq` must come from this library, `options` may be null for defaults,
// `out` must be a valid pointer.
enum VvfStatus vvf_solve(const struct VvfSequence *seq,
                         const struct VvfSolveOptions *options,
                         struct VvfField **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VvfStatus vvf_field_read(const char *path, struct VvfField **out);

// # Safety
// `field` must come from this library and `path` be a NUL-terminated string.
enum VvfStatus vvf_field_write(const struct VvfField *field, const char *path);

// Array shape `(frames, channels, rows, cols)`.
//
// # Safety
// `field` must come from this library; `shape` must be valid for 4 writes.
enum VvfStatus vvf_field_shape(const struct VvfField *field, size_t *shape);

// Copy all values in file order into `data`, which must hold the product
// of the shape.
//
// # Safety
// `field` must come from this library; `data` must be valid for `len` writes.
enum VvfStatus vvf_field_copy(const struct VvfField *field, float *data, size_t len);

// Training tensors in the reconstructed layout as a one-frame container.
//
// # Safety
// `field` must come from this library and `out` be a valid pointer.
enum VvfStatus vvf_field_to_tensors(const struct VvfField *field, struct VvfField **out);

// Streamline from the target through the latest frame, `steps` points at
// 0.2 s, written as `x0, y0, x1, y1, ...` relative to the start.
//
// # Safety
// `field` must come from this library; `xy` must be valid for `len` writes.
enum VvfStatus vvf_predict(const struct VvfField *field, size_t steps, double *xy, size_t len);

// # Safety
// `field` must be null or come from this library and not be used afterwards.
void vvf_field_free(struct VvfField *field);

// Huber loss of two stacked coordinate vectors of `len` values each.
// `per_coordinate` selects element-wise averaging instead of one branch
// for the whole vector.
//
// # Safety
// `pred` and `truth` must be valid for `len` reads, `out` for one write.
enum VvfStatus vvf_huber_loss(const double *pred,
                              const double *truth,
                              size_t len,
                              double delta,
                              bool per_coordinate,
                              double *out);

// Single-threaded solver throughput on a `length x width` channel, in
// million lattice updates per second.
//
// # Safety
// `mlups` must be valid for one write.
enum VvfStatus vvf_bench(size_t length, size_t width, size_t iterations, double *mlups);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VVF_H */
