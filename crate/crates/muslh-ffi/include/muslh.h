#ifndef MUSLH_H
#define MUSLH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Properties accepted by [`muslh_check`].
typedef enum MuslhProperty {
  MUSLH_PROPERTY_SPECULATIVE_SAFETY = 0,
  MUSLH_PROPERTY_SPECULATIVE_NON_INTERFERENCE = 1,
} MuslhProperty;

// Status codes shared by every function.
typedef enum MuslhStatus {
  MUSLH_STATUS_OK = 0,
  MUSLH_STATUS_NULL_POINTER = 1,
  MUSLH_STATUS_INVALID_UTF8 = 2,
  MUSLH_STATUS_PARSE_ERROR = 3,
  MUSLH_STATUS_POLICY_ERROR = 4,
  MUSLH_STATUS_ANALYSIS_ERROR = 5,
  MUSLH_STATUS_INVALID_ARGUMENT = 6,
  // A property check found a counterexample.
  MUSLH_STATUS_VIOLATION = 7,
  // A property check hit its bounds before deciding.
  MUSLH_STATUS_INCONCLUSIVE = 8,
  MUSLH_STATUS_PANIC = 9,
} MuslhStatus;

// The result of analysing and hardening a session's program.
typedef struct MuslhOutcome MuslhOutcome;

// A parsed and linked program with its policy and analysis settings.
typedef struct MuslhSession MuslhSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. The pointer
// stays valid until the next call into the library on the same thread.
const char *muslh_last_error(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void muslh_string_free(char *s);

// Parses `program` and `policy` sources and links them. `default_width`
// applies when the policy has no `width` line.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum MuslhStatus muslh_session_new(const char *program,
                                   const char *policy,
                                   uint32_t default_width,
                                   struct MuslhSession **out);

// Releases a session. Null is ignored.
//
// # Safety
// `s` must come from [`muslh_session_new`] and not have been freed.
void muslh_session_free(struct MuslhSession *s);

// Word width of the session's program.
//
// # Safety
// `s` must be a live session; `out` must be writable.
enum MuslhStatus muslh_session_width(const struct MuslhSession *s, uint32_t *out);

// Sets the observed address bits `lo..=hi`.
//
// # Safety
// `s` must be a live session.
enum MuslhStatus muslh_session_set_obs_bits(struct MuslhSession *s, uint32_t lo, uint32_t hi);

// Sets the number of growing updates a location gets before widening.
//
// # Safety
// `s` must be a live session.
enum MuslhStatus muslh_session_set_widen_threshold(struct MuslhSession *s, uint32_t threshold);

// Runs the analysis and computes the hardened program.
//
// # Safety
// `s` must be a live session; `out` must be writable.
enum MuslhStatus muslh_harden(const struct MuslhSession *s, struct MuslhOutcome **out);

// Releases an outcome. Null is ignored.
//
// # Safety
// `o` must come from [`muslh_harden`] and not have been freed.
void muslh_outcome_free(struct MuslhOutcome *o);

// Number of instructions in the hardening list.
//
// # Safety
// `o` must be a live outcome; `out` must be writable.
enum MuslhStatus muslh_outcome_hardened_count(const struct MuslhOutcome *o, uintptr_t *out);

// Source location of the `index`-th hardened instruction, in ascending
// order.
//
// # Safety
// `o` must be a live outcome; `out` must be writable.
enum MuslhStatus muslh_outcome_hardened_location(const struct MuslhOutcome *o,
                                                 uintptr_t index,
                                                 uintptr_t *out);

// The hardening report as JSON.
//
// # Safety
// `o` must be a live outcome; `out` must be writable.
enum MuslhStatus muslh_outcome_report_json(const struct MuslhOutcome *o, char **out);

// The hardened program as source text, with `hardened` markers, or in the
// flag-masking form when `lowered` is true.
//
// # Safety
// `o` must be a live outcome; `out` must be writable.
enum MuslhStatus muslh_outcome_program(const struct MuslhOutcome *o, bool lowered, char **out);

// Checks a property of the session's program by bounded enumeration,
// or of its hardened form when `hardened` is true. Returns `Ok`,
// `Violation` or `Inconclusive`; the verdict JSON goes to `out` when it is
// not null.
//
// # Safety
// `s` must be a live session; `out` must be null or writable.
enum MuslhStatus muslh_check(const struct MuslhSession *s,
                             enum MuslhProperty property,
                             bool hardened,
                             uintptr_t max_steps,
                             char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MUSLH_H */
