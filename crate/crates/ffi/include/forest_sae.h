#ifndef FOREST_SAE_H
#define FOREST_SAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status of a call. Codes 2 to 4 match the command-line exit codes.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_CONFIG = 2,
  FS_STATUS_VALIDATION = 3,
  FS_STATUS_NUMERICAL = 4,
  FS_STATUS_DOMAIN = 5,
  FS_STATUS_IO = 6,
  // Null pointer, bad UTF-8 or index out of range.
  FS_STATUS_INVALID_ARGUMENT = 7,
  // Buffer too small; the required size was reported.
  FS_STATUS_BUFFER_TOO_SMALL = 8,
  // Unexpected internal failure.
  FS_STATUS_PANIC = 9,
} FsStatus;

// Run configuration.
typedef struct FsConfig FsConfig;

// Stand-level predictions.
typedef struct FsPrediction FsPrediction;

// Posterior samples of one fit.
typedef struct FsSamples FsSamples;

// Posterior predictive summary of one stand and outcome.
typedef struct FsSummary {
  double mean;
  double sd;
  double cv_pct;
  double q025;
  double q50;
  double q975;
} FsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *fs_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next call on this thread.
const char *fs_last_error(void);

// Loads a TOML run configuration.
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum FsStatus fs_config_load(const char *path, struct FsConfig **out);

// Replaces the configured seed.
//
// # Safety
// `cfg` must be a live handle.
enum FsStatus fs_config_set_seed(struct FsConfig *cfg, uint64_t seed);

// Replaces the output directory.
//
// # Safety
// `cfg` must be a live handle and `dir` a valid C string.
enum FsStatus fs_config_set_out(struct FsConfig *cfg, const char *dir);

// # Safety
// `cfg` must be null or a handle not yet freed.
void fs_config_free(struct FsConfig *cfg);

// Fits the configured model, writing the samples directory and fit report
// under the output directory. `out` may be null when the samples are not
// needed.
//
// # Safety
// `cfg` must be a live handle; `out` null or writable.
enum FsStatus fs_fit(const struct FsConfig *cfg, struct FsSamples **out);

// Reads a samples directory.
//
// # Safety
// `dir` must be a valid C string; `out` must be writable.
enum FsStatus fs_samples_read(const char *dir, struct FsSamples **out);

// Number of retained draws, 0 for a null handle.
//
// # Safety
// `s` must be null or a live handle.
size_t fs_samples_n_draws(const struct FsSamples *s);

// Number of modeled outcomes, 0 for a null handle.
//
// # Safety
// `s` must be null or a live handle.
size_t fs_samples_n_outcomes(const struct FsSamples *s);

// Effective range (km) of modeled outcome `outcome` at draw `draw` of a
// spatial fit.
//
// # Safety
// `s` must be a live handle; `out` must be writable.
enum FsStatus fs_samples_effective_range(const struct FsSamples *s,
                                         size_t draw,
                                         size_t outcome,
                                         double *out);

// # Safety
// `s` must be null or a handle not yet freed.
void fs_samples_free(struct FsSamples *s);

// Predicts every stand from the configured samples directory and writes
// the stand outputs. `out` may be null.
//
// # Safety
// `cfg` must be a live handle; `out` null or writable.
enum FsStatus fs_predict(const struct FsConfig *cfg, struct FsPrediction **out);

// # Safety
// `p` must be null or a live handle.
size_t fs_prediction_n_stands(const struct FsPrediction *p);

// Copies the id of stand `stand` into `buf` (NUL-terminated). `needed`, if
// not null, receives the buffer size required including the terminator.
//
// # Safety
// `p` must be a live handle; `buf` must hold `len` bytes or be null with
// `len` 0.
enum FsStatus fs_prediction_stand_id(const struct FsPrediction *p,
                                     size_t stand,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

// Summary of `outcome` (an `FsOutcome` value) for stand `stand`.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum FsStatus fs_prediction_summary(const struct FsPrediction *p,
                                    size_t stand,
                                    uint32_t outcome,
                                    struct FsSummary *out);

// # Safety
// `p` must be null or a handle not yet freed.
void fs_prediction_free(struct FsPrediction *p);

// Runs blocked cross-validation of the configured models and writes the
// reports under the output directory.
//
// # Safety
// `cfg` must be a live handle.
enum FsStatus fs_cv(const struct FsConfig *cfg);

// Writes a synthetic dataset from a simulation config file into `out_dir`.
//
// # Safety
// Both arguments must be valid C strings.
enum FsStatus fs_simulate(const char *config_path, const char *out_dir);

// Writes the built-in mountain-forest synthetic dataset into `out_dir`.
//
// # Safety
// `out_dir` must be a valid C string.
enum FsStatus fs_simulate_brixen_like(uint64_t seed, const char *out_dir);

// Stems per hectare from basal area (m²/ha) and quadratic mean diameter (cm).
//
// # Safety
// `out` must be writable.
enum FsStatus fs_derive_stem_density(double ba, double qmd, double *out);

// Effective range (km) of an exponential correlation with decay `phi` (1/km).
//
// # Safety
// `out` must be writable.
enum FsStatus fs_effective_range(double phi, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOREST_SAE_H */
