#ifndef DPSOC_H
#define DPSOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpsocStatus {
  DPSOC_STATUS_OK = 0,
  DPSOC_STATUS_NULL_POINTER = 1,
  DPSOC_STATUS_INVALID_UTF8 = 2,
  DPSOC_STATUS_INVALID_ARGUMENT = 3,
  DPSOC_STATUS_RUN_FAILED = 4,
  DPSOC_STATUS_SERIALIZATION = 5,
  DPSOC_STATUS_PANIC = 6,
} DpsocStatus;

// Parsed run configuration.
typedef struct DpsocConfig DpsocConfig;

// Result of a pipeline run.
typedef struct DpsocRecord DpsocRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parse a configuration. Text starting with `{` is read as JSON, anything
// else as TOML.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum DpsocStatus dpsoc_config_from_str(const char *text, struct DpsocConfig **out);

// Built-in default configuration.
//
// # Safety
// `out` must be a valid pointer.
enum DpsocStatus dpsoc_config_default(struct DpsocConfig **out);

// # Safety
// `cfg` must come from this library.
enum DpsocStatus dpsoc_config_set_seed(struct DpsocConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must come from this library and not be used afterwards. Null is a
// no-op.
void dpsoc_config_free(struct DpsocConfig *cfg);

// Run the pipeline. A failed stage or certificate still yields a record;
// check it with [`dpsoc_record_passed`].
//
// # Safety
// `cfg` must come from this library and `out` be a valid pointer.
enum DpsocStatus dpsoc_run_pipeline(const struct DpsocConfig *cfg,
                                    bool baseline_only,
                                    struct DpsocRecord **out);

// Serialize a record as JSON; release the string with [`dpsoc_string_free`].
//
// # Safety
// `rec` must come from this library and `out` be a valid pointer.
enum DpsocStatus dpsoc_record_to_json(const struct DpsocRecord *rec, char **out);

// # Safety
// `s` must come from this library. Null is a no-op.
void dpsoc_string_free(char *s);

// Mean evaluated cost of the final policy, or of the baseline when the run
// had no EM phase.
//
// # Safety
// `rec` must come from this library and `out` be a valid pointer.
enum DpsocStatus dpsoc_record_final_cost(const struct DpsocRecord *rec, double *out);

// Whether every stage completed and every certificate held.
//
// # Safety
// `rec` must come from this library and `out` be a valid pointer.
enum DpsocStatus dpsoc_record_passed(const struct DpsocRecord *rec, bool *out);

// # Safety
// `rec` must come from this library and `out` be a valid pointer.
enum DpsocStatus dpsoc_record_iteration_count(const struct DpsocRecord *rec, size_t *out);

// # Safety
// `rec` must come from this library and not be used afterwards. Null is a
// no-op.
void dpsoc_record_free(struct DpsocRecord *rec);

// `(1/ρ) log Σ_i p_i exp(ρ j_i)` over `n` atoms.
//
// # Safety
// `p` and `j` must point to `n` doubles and `out` be a valid pointer.
enum DpsocStatus dpsoc_free_energy(const double *p,
                                   const double *j,
                                   size_t n,
                                   double rho,
                                   double *out);

// `KL(q || p)`; infinite when `q` charges an atom `p` does not.
//
// # Safety
// `q` and `p` must point to `n` doubles and `out` be a valid pointer.
enum DpsocStatus dpsoc_relative_entropy(const double *q, const double *p, size_t n, double *out);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *dpsoc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPSOC_H */
