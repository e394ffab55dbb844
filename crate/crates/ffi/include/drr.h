#ifndef DRR_H
#define DRR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DrrStatus {
  DRR_STATUS_OK = 0,
  DRR_STATUS_NULL_POINTER = 1,
  DRR_STATUS_INVALID_UTF8 = 2,
  DRR_STATUS_PARSE = 3,
  DRR_STATUS_VALIDATION = 4,
  DRR_STATUS_SIMULATION = 5,
  DRR_STATUS_IO = 6,
  DRR_STATUS_OUT_OF_RANGE = 7,
  DRR_STATUS_INFEASIBLE = 8,
  DRR_STATUS_PANIC = 9,
} DrrStatus;

typedef enum DrrMode {
  // Detect, recover and replan.
  DRR_MODE_DRR = 0,
  // Track the initial trajectory and ignore collisions.
  DRR_MODE_PREPLANNED = 1,
} DrrMode;

typedef enum DrrControllerMode {
  DRR_CONTROLLER_MODE_TRACKING = 0,
  DRR_CONTROLLER_MODE_RECOVERING = 1,
  DRR_CONTROLLER_MODE_REPLANNING = 2,
} DrrControllerMode;

typedef enum DrrPlanSource {
  DRR_PLAN_SOURCE_REQUESTED = 0,
  DRR_PLAN_SOURCE_SCALED = 1,
  DRR_PLAN_SOURCE_ZERO_TERMINAL = 2,
  DRR_PLAN_SOURCE_EMERGENCY = 3,
} DrrPlanSource;

// Opaque handle holding one recovery plan.
typedef struct DrrRecoveryPlan DrrRecoveryPlan;

// Opaque handle holding the log and metrics of one simulated trial.
typedef struct DrrRun DrrRun;

// Opaque scenario handle.
typedef struct DrrScenario DrrScenario;

typedef struct DrrMetrics {
  double t_end;
  double path_length;
  double control_energy;
  size_t collisions;
  double goal_error;
  // Non-zero when the goal tolerance was met.
  uint8_t reached;
} DrrMetrics;

// One logged simulation step. Arm compressions are read separately.
typedef struct DrrRecord {
  double t;
  double x;
  double y;
  double heading;
  double vx;
  double vy;
  double ax;
  double ay;
  enum DrrControllerMode mode;
} DrrRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *drr_last_error(void);

// Library version as a static NUL-terminated string.
const char *drr_version(void);

// Parses and validates a scenario from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be a valid pointer.
enum DrrStatus drr_scenario_from_json(const char *json, struct DrrScenario **out);

// Loads and validates a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum DrrStatus drr_scenario_from_file(const char *path, struct DrrScenario **out);

// # Safety
// `scenario` must be null or a handle from `drr_scenario_from_*` not yet freed.
void drr_scenario_free(struct DrrScenario *scenario);

// Largest approach speed the scenario's robot can absorb (m/s).
//
// # Safety
// `scenario` must be a live handle; `out` must be a valid pointer.
enum DrrStatus drr_max_safe_speed(const struct DrrScenario *scenario, double *out);

// Simulates one trial.
//
// # Safety
// `scenario` must be a live handle; `out` must be a valid pointer.
enum DrrStatus drr_run(const struct DrrScenario *scenario,
                       uint64_t seed,
                       enum DrrMode mode,
                       struct DrrRun **out);

// # Safety
// `run` must be null or a handle from `drr_run` not yet freed.
void drr_run_free(struct DrrRun *run);

// # Safety
// `run` must be a live handle; `out` must be a valid pointer.
enum DrrStatus drr_run_metrics(const struct DrrRun *run, struct DrrMetrics *out);

// Number of logged steps, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t drr_run_record_count(const struct DrrRun *run);

// Number of arms in each record, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t drr_run_arm_count(const struct DrrRun *run);

// Copies step `index` into `out`. `arms` may be null; otherwise it receives
// `drr_run_arm_count` compressions (m).
//
// # Safety
// `run` must be a live handle, `out` a valid pointer and `arms`, when not
// null, must have room for `drr_run_arm_count(run)` doubles.
enum DrrStatus drr_run_record(const struct DrrRun *run,
                              size_t index,
                              struct DrrRecord *out,
                              double *arms);

// Writes the run as a JSON-lines log.
//
// # Safety
// `run` must be a live handle; `path` a NUL-terminated string.
enum DrrStatus drr_run_write_log(const struct DrrRun *run, const char *path);

// Plans a recovery with the scenario's robot and recovery settings. Falls
// back to a reduced or zero terminal velocity when the request is infeasible.
// Inputs are in the collision frame.
//
// # Safety
// `scenario` must be a live handle; `out` must be a valid pointer.
enum DrrStatus drr_recovery_plan(const struct DrrScenario *scenario,
                                 double x0,
                                 double v0_x,
                                 double v0_y,
                                 double vt_x,
                                 double vt_y,
                                 double theta,
                                 struct DrrRecoveryPlan **out);

// # Safety
// `plan` must be null or a handle from `drr_recovery_plan` not yet freed.
void drr_recovery_plan_free(struct DrrRecoveryPlan *plan);

// Number of control steps, or 0 for a null handle. There is one more state
// than controls.
//
// # Safety
// `plan` must be null or a live handle.
size_t drr_recovery_plan_steps(const struct DrrRecoveryPlan *plan);

// # Safety
// `plan` must be a live handle; `out` must be a valid pointer.
enum DrrStatus drr_recovery_plan_source(const struct DrrRecoveryPlan *plan,
                                        enum DrrPlanSource *out);

// Copies knot `index` (`0..=steps`) as `[x, y, vx, vy]` into `out`.
//
// # Safety
// `plan` must be a live handle; `out` must have room for 4 doubles.
enum DrrStatus drr_recovery_plan_state(const struct DrrRecoveryPlan *plan,
                                       size_t index,
                                       double *out);

// Copies control `index` (`0..steps`) as `[nu_x, nu_y]` into `out`.
//
// # Safety
// `plan` must be a live handle; `out` must have room for 2 doubles.
enum DrrStatus drr_recovery_plan_control(const struct DrrRecoveryPlan *plan,
                                         size_t index,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRR_H */
