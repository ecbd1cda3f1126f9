#ifndef EQOPT_H
#define EQOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EqoptStatus {
  EQOPT_STATUS_OK = 0,
  // Parameters or data outside the accepted domain.
  EQOPT_STATUS_DOMAIN_ERROR = 1,
  // Null pointer, bad index, undersized buffer or invalid UTF-8.
  EQOPT_STATUS_INVALID_ARGUMENT = 2,
  EQOPT_STATUS_IO = 3,
  // Malformed JSON, coefficient or tap text.
  EQOPT_STATUS_PARSE = 4,
  // An internal panic was caught at the boundary.
  EQOPT_STATUS_PANIC = 5,
} EqoptStatus;

// Opaque set of design results for one scene.
typedef struct EqoptDesign EqoptDesign;

// Opaque acoustic scene.
typedef struct EqoptScene EqoptScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *eqopt_last_error(void);

// Generates a synthetic room scene with `sources` loudspeakers and `mics`
// microphones. Other settings take their defaults.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum EqoptStatus eqopt_scene_synth(size_t sources,
                                   size_t mics,
                                   uint64_t seed,
                                   struct EqoptScene **out);

// Generates a synthetic scene from a JSON spec (same keys as the command
// line `--synth` file).
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
enum EqoptStatus eqopt_scene_synth_json(const char *spec_json, struct EqoptScene **out);

// Loads a scene from a manifest JSON file listing WAV impulse responses.
//
// # Safety
// `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
enum EqoptStatus eqopt_scene_load(const char *manifest_path, struct EqoptScene **out);

// Writes the number of sources and mics of a scene.
//
// # Safety
// `scene` must be a live handle; the out pointers must be valid.
enum EqoptStatus eqopt_scene_shape(const struct EqoptScene *scene,
                                   size_t *n_sources,
                                   size_t *n_mics);

// Releases a scene. Null is ignored.
//
// # Safety
// `scene` must be null or a handle not yet freed.
void eqopt_scene_free(struct EqoptScene *scene);

// Runs the designers selected by `config_json` (a design config object;
// null or "{}" means BiasNet with default settings). The scene handle is
// not consumed.
//
// # Safety
// `scene` must be a live handle, `config_json` null or a NUL-terminated
// string, and `out` a valid pointer.
enum EqoptStatus eqopt_design(const struct EqoptScene *scene,
                              const char *config_json,
                              struct EqoptDesign **out);

// Number of results (one per method, one per FIR length for FD).
//
// # Safety
// `design` must be null or a live handle.
size_t eqopt_design_count(const struct EqoptDesign *design);

// Label of result `index` ("biasnet", "dsm", "fd1024", ...), or null when
// out of range. Owned by the design handle.
//
// # Safety
// `design` must be null or a live handle.
const char *eqopt_design_label(const struct EqoptDesign *design, size_t index);

// Mic-averaged band MSE and spectral flatness of result `index`.
//
// # Safety
// `design` must be a live handle; the out pointers must be valid.
enum EqoptStatus eqopt_design_metrics(const struct EqoptDesign *design,
                                      size_t index,
                                      double *mse,
                                      double *sigma);

// Copies the filter of `source` from result `index` into `buf`.
//
// IIR results are laid out as the channel gain in dB followed by
// `b0 b1 b2 a0 a1 a2` per section; FIR results are the taps. `*len`
// receives the required length; when `capacity` is smaller nothing is
// copied and `EQOPT_STATUS_INVALID_ARGUMENT` is returned, so a call with
// a null buffer and zero capacity queries the size.
//
// # Safety
// `design` must be a live handle, `buf` valid for `capacity` writes (or
// null with zero capacity) and `len` valid.
enum EqoptStatus eqopt_design_filter(const struct EqoptDesign *design,
                                     size_t index,
                                     size_t source,
                                     double *buf,
                                     size_t capacity,
                                     size_t *len);

// Nonzero when result `index` is an FIR design; zero for IIR designs or a
// bad index.
//
// # Safety
// `design` must be null or a live handle.
int32_t eqopt_design_is_fir(const struct EqoptDesign *design, size_t index);

// Writes the full run directory (config, reports, summary, coefficients).
//
// # Safety
// `design` must be a live handle and `dir` a NUL-terminated string.
enum EqoptStatus eqopt_design_write(const struct EqoptDesign *design, const char *dir);

// Releases a design. Null is ignored.
//
// # Safety
// `design` must be null or a handle not yet freed.
void eqopt_design_free(struct EqoptDesign *design);

// Peaking biquad coefficients `b0 b1 b2 a0 a1 a2` (a0 = 1) into `out[6]`.
//
// # Safety
// `out` must be valid for 6 writes.
enum EqoptStatus eqopt_peaking_section(double fc, double q, double gain_db, double fs, double *out);

// Multiply-adds per output sample of a direct-form FIR of `len` taps.
size_t eqopt_fir_ops_per_sample(size_t len);

// Operations per output sample of a cascade of `sections` biquads.
size_t eqopt_sos_ops_per_sample(size_t sections);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EQOPT_H */
