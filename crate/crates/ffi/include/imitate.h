#ifndef IMITATE_H
#define IMITATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImitateStatus {
  IMITATE_STATUS_OK = 0,
  IMITATE_STATUS_NULL_POINTER = 1,
  IMITATE_STATUS_INVALID_ARGUMENT = 2,
  IMITATE_STATUS_DIMENSION_MISMATCH = 3,
  IMITATE_STATUS_VALIDATION = 4,
  IMITATE_STATUS_PARSE = 5,
  IMITATE_STATUS_INTEGRATOR = 6,
  IMITATE_STATUS_NO_POTENTIAL = 7,
  IMITATE_STATUS_OUT_OF_RANGE = 8,
  IMITATE_STATUS_IO = 9,
  IMITATE_STATUS_PANIC = 10,
} ImitateStatus;

typedef enum ImitateLabel {
  IMITATE_LABEL_NASH = 0,
  IMITATE_LABEL_RESTRICTED_NASH = 1,
  IMITATE_LABEL_CRITICAL_NON_NASH = 2,
} ImitateLabel;

typedef struct ImitateEquilibria ImitateEquilibria;

typedef struct ImitateGame ImitateGame;

typedef struct ImitateRule ImitateRule;

typedef struct ImitateScenario ImitateScenario;

typedef struct ImitateTrajectory ImitateTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the next call.
const char *imitate_last_error(void);

// Builds a linear game from an `m × m` reward matrix in row-major order.
// Symmetric and two-action games get their quadratic potential attached.
//
// # Safety
// `rewards` must point to `m * m` doubles and `out` must be writable.
enum ImitateStatus imitate_game_linear(size_t m, const double *rewards, struct ImitateGame **out);

// # Safety
// `game` must come from this library and not be freed twice.
void imitate_game_free(struct ImitateGame *game);

// Number of actions, or 0 for NULL.
//
// # Safety
// `game` must be NULL or a live handle.
size_t imitate_game_num_actions(const struct ImitateGame *game);

// Writes the reward of each action at `x` into `out`.
//
// # Safety
// `x` and `out` must point to `len` doubles.
enum ImitateStatus imitate_game_rewards(const struct ImitateGame *game,
                                        const double *x,
                                        size_t len,
                                        double *out);

// Potential value at `x`.
//
// # Safety
// `x` must point to `len` doubles and `out` must be writable.
enum ImitateStatus imitate_game_potential(const struct ImitateGame *game,
                                          const double *x,
                                          size_t len,
                                          double *out);

// # Safety
// `out` must be writable.
enum ImitateStatus imitate_rule_replicator(struct ImitateRule **out);

// Arctan rule with an `m × m` gain matrix in row-major order.
//
// # Safety
// `gains` must point to `m * m` doubles and `out` must be writable.
enum ImitateStatus imitate_rule_arctan(size_t m, const double *gains, struct ImitateRule **out);

// # Safety
// `rule` must come from this library and not be freed twice.
void imitate_rule_free(struct ImitateRule *rule);

// Evaluates the imitation vector field at `x`.
//
// # Safety
// `x` and `out` must point to `len` doubles.
enum ImitateStatus imitate_vector_field(const struct ImitateGame *game,
                                        const struct ImitateRule *rule,
                                        const double *x,
                                        size_t len,
                                        double *out);

// Enumerates the labeled equilibria of the game.
//
// # Safety
// `game` must be a live handle and `out` writable.
enum ImitateStatus imitate_equilibria(const struct ImitateGame *game,
                                      double tol,
                                      struct ImitateEquilibria **out);

// # Safety
// `set` must be NULL or a live handle.
size_t imitate_equilibria_len(const struct ImitateEquilibria *set);

// Copies equilibrium `index` into `point` and stores its label.
//
// # Safety
// `point` must point to `len` doubles and `label` must be writable.
enum ImitateStatus imitate_equilibria_get(const struct ImitateEquilibria *set,
                                          size_t index,
                                          double *point,
                                          size_t len,
                                          enum ImitateLabel *label);

// # Safety
// `set` must come from this library and not be freed twice.
void imitate_equilibria_free(struct ImitateEquilibria *set);

// Integrates from `x0` up to `t_end`, observing every `interval`.
// A positive `step` selects fixed-step RK4; zero selects the adaptive method
// with relative tolerance `tol`.
//
// # Safety
// `x0` must point to `len` doubles and `out` must be writable.
enum ImitateStatus imitate_integrate(const struct ImitateGame *game,
                                     const struct ImitateRule *rule,
                                     const double *x0,
                                     size_t len,
                                     double t_end,
                                     double interval,
                                     double step,
                                     double tol,
                                     struct ImitateTrajectory **out);

// Number of observations, or 0 for NULL.
//
// # Safety
// `traj` must be NULL or a live handle.
size_t imitate_trajectory_len(const struct ImitateTrajectory *traj);

// Copies observation `index` into `time` and `state`.
//
// # Safety
// `state` must point to `len` doubles and `time` must be writable.
enum ImitateStatus imitate_trajectory_get(const struct ImitateTrajectory *traj,
                                          size_t index,
                                          double *time,
                                          double *state,
                                          size_t len);

// # Safety
// `traj` must come from this library and not be freed twice.
void imitate_trajectory_free(struct ImitateTrajectory *traj);

// Loads a scenario from a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum ImitateStatus imitate_scenario_load(const char *path, struct ImitateScenario **out);

// Parses a scenario from JSON text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` writable.
enum ImitateStatus imitate_scenario_parse(const char *text, struct ImitateScenario **out);

// Runs the scenario and writes its outputs below `out_dir`.
//
// # Safety
// `scenario` must be a live handle and `out_dir` a NUL-terminated string.
enum ImitateStatus imitate_scenario_run(const struct ImitateScenario *scenario,
                                        const char *out_dir);

// Runs every property check; `all_ok` receives whether each matched its expectation.
//
// # Safety
// `scenario` must be a live handle and `all_ok` writable.
enum ImitateStatus imitate_scenario_verify(const struct ImitateScenario *scenario, bool *all_ok);

// # Safety
// `scenario` must come from this library and not be freed twice.
void imitate_scenario_free(struct ImitateScenario *scenario);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMITATE_H */
