#ifndef BOXEMBED_H
#define BOXEMBED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Intersection kinds, matching `boxembed::ops::IntersectionKind`.
#define BOXEMBED_INTERSECTION_HARD 0

#define BOXEMBED_INTERSECTION_GUMBEL 1

// Volume kinds, matching `boxembed::ops::VolumeKind`.
#define BOXEMBED_VOLUME_HARD 0

#define BOXEMBED_VOLUME_SOFT 1

#define BOXEMBED_VOLUME_BESSEL_APPROX 2

// Parameterizations, matching `boxembed::ParamKind`.
#define BOXEMBED_PARAM_RAW 0

#define BOXEMBED_PARAM_MIN_DELTA 1

#define BOXEMBED_PARAM_SIGMOID 2

#define BOXEMBED_PARAM_TANH 3

// Result of every fallible call.
typedef enum BoxembedStatus {
  BOXEMBED_STATUS_OK = 0,
  BOXEMBED_STATUS_NULL_POINTER = 1,
  BOXEMBED_STATUS_INVALID_ARGUMENT = 2,
  BOXEMBED_STATUS_INDEX_OUT_OF_RANGE = 3,
  BOXEMBED_STATUS_SHAPE_MISMATCH = 4,
  BOXEMBED_STATUS_PARSE = 5,
  BOXEMBED_STATUS_IO = 6,
  BOXEMBED_STATUS_NON_FINITE = 7,
  BOXEMBED_STATUS_CONFIG = 8,
  BOXEMBED_STATUS_UTF8 = 9,
  BOXEMBED_STATUS_PANIC = 10,
} BoxembedStatus;

// Opaque table handle.
typedef struct BoxembedTable BoxembedTable;

// Uniform initialization ranges (min corner and side length).
typedef struct BoxembedInitSpec {
  double min_lo;
  double min_hi;
  double side_lo;
  double side_hi;
} BoxembedInitSpec;

// Intersection and volume settings for the scoring calls.
typedef struct BoxembedOps {
  uint32_t intersection;
  double intersection_temperature;
  uint32_t volume;
  double volume_temperature;
} BoxembedOps;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *boxembed_last_error(void);

// Library version as a static NUL-terminated string.
const char *boxembed_version(void);

// Creates a table of `num_entities` uniformly initialized boxes of
// dimension `dim`. `spec` may be NULL for the default ranges.
//
// # Safety
// `spec` must be NULL or point to a valid `BoxembedInitSpec`; `out` must be
// a valid pointer to write the handle to.
enum BoxembedStatus boxembed_table_init_uniform(size_t num_entities,
                                                size_t dim,
                                                uint32_t kind,
                                                const struct BoxembedInitSpec *spec,
                                                uint64_t seed,
                                                struct BoxembedTable **out);

// Restores a table from the JSON written by [`boxembed_table_to_json`] or
// by the CLI's `table.json`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` a valid pointer.
enum BoxembedStatus boxembed_table_from_json(const char *json, struct BoxembedTable **out);

// Serializes a table; free the string with [`boxembed_string_free`].
//
// # Safety
// `table` must be a live handle; `out` a valid pointer.
enum BoxembedStatus boxembed_table_to_json(const struct BoxembedTable *table, char **out);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void boxembed_string_free(char *s);

// Releases a table. NULL is ignored.
//
// # Safety
// `table` must be NULL or a handle from this library, freed once.
void boxembed_table_free(struct BoxembedTable *table);

// Number of entities and box dimension of a table.
//
// # Safety
// `table` must be a live handle; the out pointers must be valid.
enum BoxembedStatus boxembed_table_shape(const struct BoxembedTable *table,
                                         size_t *num_entities,
                                         size_t *dim);

// Writes the realized corners of `entity` into `min` and `max`, each of
// length `len`, which must equal the table dimension.
//
// # Safety
// `table` must be a live handle; `min` and `max` must each point to `len`
// writable doubles.
enum BoxembedStatus boxembed_table_box(const struct BoxembedTable *table,
                                       size_t entity,
                                       double *min,
                                       double *max,
                                       size_t len);

// `ln P(head -> tail)`. `ops` may be NULL for the defaults.
//
// # Safety
// `table` must be a live handle; `ops` NULL or valid; `out` valid.
enum BoxembedStatus boxembed_log_containment(const struct BoxembedTable *table,
                                             size_t head,
                                             size_t tail,
                                             const struct BoxembedOps *ops,
                                             double *out);

// Natural-log volume of one entity's box under `ops` (NULL for defaults).
//
// # Safety
// `table` must be a live handle; `ops` NULL or valid; `out` valid.
enum BoxembedStatus boxembed_log_volume(const struct BoxembedTable *table,
                                        size_t entity,
                                        const struct BoxembedOps *ops,
                                        double *out);

// Intersects two explicit boxes of dimension `len` into `out_min`/`out_max`.
//
// # Safety
// All six buffers must hold `len` doubles; `ops` NULL or valid.
enum BoxembedStatus boxembed_intersect(const double *a_min,
                                       const double *a_max,
                                       const double *b_min,
                                       const double *b_max,
                                       size_t len,
                                       const struct BoxembedOps *ops,
                                       double *out_min,
                                       double *out_max);

// Trains on a `head<TAB>tail` edge list given as text. `config_json` is a
// training configuration document (NULL or `"{}"` for defaults); the split
// adds `closure_pct`% of non-reduction closure edges to training. On
// success `out` receives the trained table and `test_f1` (if not NULL) the
// test-split F1.
//
// # Safety
// String arguments must be NUL-terminated (or NULL where allowed); `out`
// must be valid; `test_f1` NULL or valid.
enum BoxembedStatus boxembed_train_edges(const char *config_json,
                                         const char *edges_tsv,
                                         uint32_t closure_pct,
                                         struct BoxembedTable **out,
                                         double *test_f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOXEMBED_H */
