#ifndef NLBOX_H
#define NLBOX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 1 to 6 match the service's
 * `status` codes.
 */
typedef enum {
  NLBOX_STATUS_OK = 0,
  NLBOX_STATUS_BAD_API_KEY = 1,
  NLBOX_STATUS_UNKNOWN_BOX = 2,
  NLBOX_STATUS_INVALID_INPUT = 3,
  NLBOX_STATUS_INPUT_MISMATCH = 4,
  NLBOX_STATUS_ROLE_MISMATCH = 5,
  NLBOX_STATUS_UNAVAILABLE = 6,
  NLBOX_STATUS_NULL_POINTER = 10,
  NLBOX_STATUS_INVALID_ARGUMENT = 11,
  NLBOX_STATUS_INVALID_BEHAVIOR = 12,
  NLBOX_STATUS_TRANSPORT = 13,
  NLBOX_STATUS_PROTOCOL = 14,
  NLBOX_STATUS_PANIC = 99,
} NlboxStatus;

typedef enum {
  NLBOX_SIDE_ALICE = 0,
  NLBOX_SIDE_BOB = 1,
} NlboxSide;

/**
 * A validated behavior `P(a,b|x,y)`.
 */
typedef struct NlboxBehavior NlboxBehavior;

/**
 * One side of one box on a remote server.
 */
typedef struct NlboxClient NlboxClient;

/**
 * An in-process box: private in-memory store, one box, both sides.
 */
typedef struct NlboxSession NlboxSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next nlbox call on the same thread.
 */
const char *nlbox_last_error_message(void);

/**
 * Library version, static storage.
 */
const char *nlbox_version(void);

/**
 * Built-in behavior by name: `pr`, `uniform`, `tsirelson`,
 * `isotropic:<v>`, `deterministic:<fa>,<fb>`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
NlboxStatus nlbox_behavior_builtin(const char *name, NlboxBehavior **out);

/**
 * Parses a behavior document (JSON).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
NlboxStatus nlbox_behavior_from_json(const char *json, NlboxBehavior **out);

/**
 * # Safety
 * `b` must be NULL or a handle from this library not yet freed.
 */
void nlbox_behavior_free(NlboxBehavior *b);

/**
 * `P(a,b|x,y)`.
 *
 * # Safety
 * `b` must be a live handle; `out` must be writable.
 */
NlboxStatus nlbox_behavior_prob(const NlboxBehavior *b,
                                size_t x,
                                size_t y,
                                size_t a,
                                size_t bo,
                                double *out);

/**
 * Whether both parties' marginals are independent of the other's input.
 *
 * # Safety
 * `b` must be a live handle; `out` must be writable.
 */
NlboxStatus nlbox_behavior_is_no_signaling(const NlboxBehavior *b, bool *out);

/**
 * Whether the behavior is a mixture of deterministic local strategies.
 *
 * # Safety
 * `b` must be a live handle; `out` must be writable.
 */
NlboxStatus nlbox_behavior_is_local(const NlboxBehavior *b, bool *out);

/**
 * Expected CHSH payoff with uniform inputs; binary behaviors only.
 *
 * # Safety
 * `b` must be a live handle; `out` must be writable.
 */
NlboxStatus nlbox_behavior_chsh_payoff(const NlboxBehavior *b, double *out);

/**
 * In-process box for `b`. With `seeded`, outputs are reproducible from
 * `seed`; otherwise the system generator is used.
 *
 * # Safety
 * `b` must be a live handle; `out` must be writable.
 */
NlboxStatus nlbox_session_new(const NlboxBehavior *b,
                              bool seeded,
                              uint64_t seed,
                              NlboxSession **out);

/**
 * Uses one side of transaction `transaction_id`.
 *
 * # Safety
 * `s` must be a live handle; `transaction_id` a NUL-terminated string;
 * `output` writable.
 */
NlboxStatus nlbox_session_use(const NlboxSession *s,
                              const char *transaction_id,
                              NlboxSide side,
                              size_t input,
                              size_t *output);

/**
 * # Safety
 * `s` must be NULL or a handle from this library not yet freed.
 */
void nlbox_session_free(NlboxSession *s);

/**
 * HTTP client for one side of box `box_id` at `base_url`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
NlboxStatus nlbox_client_new(const char *base_url,
                             const char *api_key,
                             int64_t box_id,
                             NlboxSide side,
                             NlboxClient **out);

/**
 * Uses transaction `transaction_id` with `input`; retries transport
 * failures and busy replies with bounded backoff.
 *
 * # Safety
 * `c` must be a live handle; `transaction_id` a NUL-terminated string;
 * `output` writable.
 */
NlboxStatus nlbox_client_use(const NlboxClient *c,
                             const char *transaction_id,
                             size_t input,
                             size_t *output);

/**
 * # Safety
 * `c` must be NULL or a handle from this library not yet freed.
 */
void nlbox_client_free(NlboxClient *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLBOX_H */
