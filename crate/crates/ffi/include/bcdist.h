#ifndef BCDIST_H
#define BCDIST_H

#include <stddef.h>
#include <stdint.h>

// Result codes. Values 2 to 4 match the command line exit codes.
typedef enum BcdStatus {
  BCD_STATUS_OK = 0,
  BCD_STATUS_NULL_POINTER = 1,
  BCD_STATUS_INVALID_ARGUMENT = 2,
  BCD_STATUS_NUMERICAL = 3,
  BCD_STATUS_CACHE_MISMATCH = 4,
  BCD_STATUS_IO = 5,
  BCD_STATUS_PANIC = 6,
} BcdStatus;

// Outcome of a half-volume distance estimate.
typedef enum BcdFlag {
  BCD_FLAG_OK = 0,
  BCD_FLAG_EDGE_INTERPOLATED = 1,
  BCD_FLAG_NOT_BRACKETED = 2,
  BCD_FLAG_FAILED = 3,
} BcdFlag;

// Half-plane aperture `[-L, L]` with horizon `T` and unit sound speed.
typedef struct BcdGeometry BcdGeometry;

// Source of volumes `τ ↦ Vol(M(τ))`, exact or data driven.
typedef struct BcdProvider BcdProvider;

// Window function `τ` on the aperture.
typedef struct BcdTau BcdTau;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bcd_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *bcd_version(void);

// # Safety
// `out_geometry` must be a valid pointer.
enum BcdStatus bcd_geometry_new(double half_width,
                                double horizon,
                                struct BcdGeometry **out_geometry);

// # Safety
// `geometry` must come from [`bcd_geometry_new`] or be null.
void bcd_geometry_free(struct BcdGeometry *geometry);

// Parses a window such as `0.25` or `0.25|cone(0,0.3)`.
//
// # Safety
// `descriptor` must be a NUL-terminated string and `out_tau` valid.
enum BcdStatus bcd_tau_parse(const char *descriptor, double horizon, struct BcdTau **out_tau);

// # Safety
// `tau` must come from [`bcd_tau_parse`] or be null.
void bcd_tau_free(struct BcdTau *tau);

// # Safety
// Pointers must be valid handles and a writable `f64`.
enum BcdStatus bcd_tau_eval(const struct BcdTau *tau, double x1, double *out_value);

// Closed-form `Vol(M(τ))`.
//
// # Safety
// Pointers must be valid handles and a writable `f64`.
enum BcdStatus bcd_exact_volume(const struct BcdGeometry *geometry,
                                const struct BcdTau *tau,
                                double *out_volume);

// Provider of closed-form volumes.
//
// # Safety
// `geometry` must be a valid handle and `out_provider` writable.
enum BcdStatus bcd_exact_provider_new(const struct BcdGeometry *geometry,
                                      struct BcdProvider **out_provider);

// Data-driven provider for an experiment. Simulates and assembles into
// `cache_dir` when the artifacts are missing, which can take minutes.
//
// `config_path` may be null to use the preset named by `preset`
// (`"desk"` or `"paper"`).
//
// # Safety
// Strings must be NUL terminated or null where allowed; `out_provider`
// must be writable.
enum BcdStatus bcd_estimated_provider_new(const char *config_path,
                                          const char *preset,
                                          const char *cache_dir,
                                          struct BcdProvider **out_provider);

// # Safety
// `provider` must come from a `bcd_*_provider_new` call or be null.
void bcd_provider_free(struct BcdProvider *provider);

// # Safety
// Pointers must be valid handles and a writable `f64`.
enum BcdStatus bcd_provider_volume(const struct BcdProvider *provider,
                                   const struct BcdTau *tau,
                                   double *out_volume);

// Volume of the wave cap at `(y, s)` with height `h`.
//
// # Safety
// `provider` must be a valid handle and `out_volume` writable.
enum BcdStatus bcd_cap_volume(const struct BcdProvider *provider,
                              double y,
                              double s,
                              double h,
                              double *out_volume);

// Volume shared by the cap at `(y, s, h)` and the cap around `z` of
// radius `s + r`.
//
// # Safety
// `provider` must be a valid handle and `out_volume` writable.
enum BcdStatus bcd_overlap_volume(const struct BcdProvider *provider,
                                  double y,
                                  double s,
                                  double h,
                                  double z,
                                  double r,
                                  double *out_volume);

// Estimates `d(z, x(y, s))` over the increasing radii `radii[0..count]`.
//
// `method` 1 takes the first radius whose overlap exceeds
// `threshold · m_target` and fails with `Numerical` when none does.
// `method` 2 interpolates the half-volume radius; when the grid does not
// reach half the cap, `out_distance` is NaN and `out_flag` is
// `NotBracketed`.
//
// # Safety
// `radii` must point to `count` values; out pointers must be writable.
enum BcdStatus bcd_estimate_distance(const struct BcdProvider *provider,
                                     double y,
                                     double s,
                                     double h,
                                     double z,
                                     const double *radii,
                                     size_t count,
                                     uint32_t method,
                                     double threshold,
                                     double *out_distance,
                                     enum BcdFlag *out_flag);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BCDIST_H */
