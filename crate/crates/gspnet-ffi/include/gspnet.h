#ifndef GSPNET_H
#define GSPNET_H

/* Generated by cbindgen from gspnet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome. Zero is success; everything else identifies the failure.
typedef enum GspnetStatus {
  GSPNET_STATUS_OK = 0,
  GSPNET_STATUS_NULL_POINTER = 1,
  GSPNET_STATUS_INVALID_ARGUMENT = 2,
  GSPNET_STATUS_NOT_STABILIZABLE = 3,
  GSPNET_STATUS_INFEASIBLE_PARAMS = 4,
  GSPNET_STATUS_NO_COMPLETED_JOBS = 5,
  GSPNET_STATUS_INTERNAL_ERROR = 6,
} GspnetStatus;

// Opaque network handle.
typedef struct GspnetNetwork GspnetNetwork;

// Stability constants of one instance.
typedef struct GspnetStability {
  double min_cut_capacity;
  double m;
  int32_t delta_g;
  // Open upper bound for beta, `m^(1/(2+delta_G))`.
  double beta_max;
} GspnetStability;

// Policy selector. `beta`/`gamma` drive kind 0 (GSP); `eta` drives kind 2
// (Bernoulli); kind 1 (SSP) has no parameters.
typedef struct GspnetPolicy {
  int32_t kind;
  double beta;
  double gamma;
  double eta[3];
} GspnetPolicy;

// Simulation settings. `mode` is 0 for the Bernoulli grid, 1 for the
// event-driven chain.
typedef struct GspnetSimConfig {
  int32_t mode;
  double dt;
  double horizon_secs;
  double warmup_secs;
  uint64_t seed;
} GspnetSimConfig;

// Episode summary.
typedef struct GspnetSummary {
  uint64_t arrivals;
  uint64_t completed;
  uint64_t censored;
  // NaN when no job completed.
  double mean_system_time;
  double time_average_queue;
  double utilization[5];
} GspnetSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a bridge-network handle from five service rates (jobs/sec,
// servers 1..5) and the arrival rate. The caller owns the handle and must
// release it with `gspnet_network_free`.
//
// # Safety
// `service_rates` must point to five readable doubles and `out` must be a
// valid destination pointer.
enum GspnetStatus gspnet_network_new(const double *service_rates,
                                     double arrival_rate,
                                     struct GspnetNetwork **out);

// Releases a handle created by `gspnet_network_new`. Null is a no-op.
//
// # Safety
// `net` must be a pointer previously returned by `gspnet_network_new` that
// has not been freed yet.
void gspnet_network_free(struct GspnetNetwork *net);

// Computes min-cut capacity, `m`, `delta_G` and the beta bound.
//
// # Safety
// `net` and `out` must be valid pointers.
enum GspnetStatus gspnet_stability(const struct GspnetNetwork *net, struct GspnetStability *out);

// Evaluates the three piecewise-linear path costs at a state.
//
// # Safety
// `state` must point to seven readable u32 values and `out` to three
// writable doubles.
enum GspnetStatus gspnet_q_values(const uint32_t *state, double beta, double *out);

// Evaluates the Lyapunov function `V(x)`.
//
// # Safety
// `state` must point to seven readable u32 values and `out` must be valid.
enum GspnetStatus gspnet_lyapunov(const uint32_t *state, double beta, double *out);

// Routes one arrival under the GSP policy at the given state; ties break by
// the seeded generator, so equal seeds reproduce the decision. Writes the
// path index (0 = path 12, 1 = path 135, 2 = path 45).
//
// # Safety
// `net` and `state` must be valid; `out_path` must be writable.
enum GspnetStatus gspnet_route(const struct GspnetNetwork *net,
                               const uint32_t *state,
                               double beta,
                               double gamma,
                               uint64_t seed,
                               uint32_t *out_path);

// Exact Lyapunov drift of the GSP policy at a state.
//
// # Safety
// `net` and `state` must be valid; `out_drift` must be writable.
enum GspnetStatus gspnet_drift(const struct GspnetNetwork *net,
                               const uint32_t *state,
                               double beta,
                               double gamma,
                               double *out_drift);

// Runs one simulation episode and fills the summary.
//
// # Safety
// All pointers must be valid for the duration of the call.
enum GspnetStatus gspnet_simulate(const struct GspnetNetwork *net,
                                  const struct GspnetPolicy *policy,
                                  const struct GspnetSimConfig *config,
                                  struct GspnetSummary *out);

// Static description of a status code.
const char *gspnet_status_message(enum GspnetStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSPNET_H */
