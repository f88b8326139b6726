#ifndef GRAPHEDIT_H
#define GRAPHEDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GeStatus {
  GE_STATUS_OK = 0,
  GE_STATUS_NULL_POINTER = 1,
  GE_STATUS_INVALID_UTF8 = 2,
  GE_STATUS_INVALID_ARGUMENT = 3,
  GE_STATUS_IO = 4,
  // The output buffer is too small; the required length was written.
  GE_STATUS_BUFFER_TOO_SMALL = 5,
  // The response contained no decision word.
  GE_STATUS_PARSE_FAILURE = 6,
  GE_STATUS_PIPELINE = 7,
  GE_STATUS_PANIC = 8,
} GeStatus;

// Opaque graph handle.
typedef struct GeGraph GeGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ge_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *ge_last_error(void);

// Planted-partition graph with default text settings.
//
// # Safety
// `out` must be a valid pointer.
enum GeStatus ge_graph_synthetic(size_t n,
                                 size_t num_classes,
                                 double p_in,
                                 double p_out,
                                 uint64_t seed,
                                 struct GeGraph **out);

// Loads a graph saved with `ge_graph_save`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum GeStatus ge_graph_load(const char *dir, struct GeGraph **out);

// Loads a dataset described by a TOML manifest.
//
// # Safety
// `manifest` must be a NUL-terminated string and `out` a valid pointer.
enum GeStatus ge_graph_load_manifest(const char *manifest, struct GeGraph **out);

// # Safety
// `g` must be a live handle and `dir` a NUL-terminated string.
enum GeStatus ge_graph_save(const struct GeGraph *g, const char *dir);

// Node count; 0 for a null handle.
//
// # Safety
// `g` must be null or a live handle.
size_t ge_graph_num_nodes(const struct GeGraph *g);

// Undirected edge count; 0 for a null handle.
//
// # Safety
// `g` must be null or a live handle.
size_t ge_graph_num_edges(const struct GeGraph *g);

// Writes the label of node `i` into `out`.
//
// # Safety
// `g` must be a live handle and `out` a valid pointer.
enum GeStatus ge_graph_label(const struct GeGraph *g, size_t i, size_t *out);

// Copies edges as `(lo, hi)` pairs, sorted, into `buf` (`2 * num_edges`
// entries). `out_len` receives the number of entries required; when
// `capacity` is smaller nothing is copied and `BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `buf` must hold `capacity` writable entries (it may be null when
// `capacity` is 0); `out_len` must be valid.
enum GeStatus ge_graph_copy_edges(const struct GeGraph *g,
                                  size_t *buf,
                                  size_t capacity,
                                  size_t *out_len);

// New graph with `floor(rate * |E|)` random non-edges added.
//
// # Safety
// `g` must be a live handle and `out` a valid pointer.
enum GeStatus ge_graph_inject_noise(const struct GeGraph *g,
                                    double rate,
                                    uint64_t seed,
                                    struct GeGraph **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `g` must be null or a handle not yet freed.
void ge_graph_free(struct GeGraph *g);

// Pair prompt with node `i` as the first paper.
//
// # Safety
// `g` must be a live handle and `out` a valid pointer.
enum GeStatus ge_build_pair_prompt(const struct GeGraph *g, size_t i, size_t j, char **out);

// Parses a free-text answer. `out_same` receives 1 or 0; `out_category`
// receives the category index or -1.
//
// # Safety
// `raw` must be a NUL-terminated string, `categories` an array of
// `num_categories` NUL-terminated strings, and both outputs valid pointers.
enum GeStatus ge_parse_verdict(const char *raw,
                               const char *const *categories,
                               size_t num_categories,
                               int32_t *out_same,
                               int64_t *out_category);

// Label-oracle answer for the pair `(i, j)`.
//
// # Safety
// `g` must be a live handle and `out` a valid pointer.
enum GeStatus ge_oracle_answer(const struct GeGraph *g,
                               size_t i,
                               size_t j,
                               double flip_rate,
                               double category_error_rate,
                               uint64_t seed,
                               char **out);

// Runs the full pipeline from a TOML configuration and returns the result
// JSON. Artifacts are written to the configured output directory.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out_json` a valid pointer.
enum GeStatus ge_run_experiment(const char *config_toml, char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void ge_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHEDIT_H */
