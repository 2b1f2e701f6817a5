#ifndef EASYO_H
#define EASYO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EasyoStatus {
  EASYO_STATUS_OK = 0,
  EASYO_STATUS_NULL_POINTER = 1,
  EASYO_STATUS_INVALID_ARGUMENT = 2,
  EASYO_STATUS_CONFIG = 3,
  EASYO_STATUS_TOPOLOGY = 4,
  EASYO_STATUS_IO = 5,
  /**
   * The simulation stopped on an internal consistency error.
   */
  EASYO_STATUS_RUNTIME = 6,
  EASYO_STATUS_PANIC = 7,
} EasyoStatus;

typedef enum EasyoSupplyClass {
  EASYO_SUPPLY_CLASS_EH = 0,
  EASYO_SUPPLY_CLASS_EG = 1,
  EASYO_SUPPLY_CLASS_ME = 2,
} EasyoSupplyClass;

/**
 * Opaque scenario: topology plus parameters.
 */
typedef struct EasyoScenario EasyoScenario;

typedef struct EasyoRunSummary {
  uint64_t slots;
  uint64_t seed;
  double penalty_weight;
  double avg_objective;
  double avg_utility;
  double avg_cost;
  double avg_data_queue;
  double max_data_queue;
  double avg_energy_queue;
  double max_energy_queue;
  double q_max;
  double theta_max;
  uint64_t audits;
  uint64_t monitor_violations;
  /**
   * 1 when every monitor passed, else 0.
   */
  uint8_t passed;
} EasyoRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *easyo_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *easyo_version(void);

/**
 * Default scenario: generated 20-node topology with default parameters.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EasyoStatus easyo_scenario_default(struct EasyoScenario **out);

/**
 * Scenario from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` as in [`easyo_scenario_default`].
 */
enum EasyoStatus easyo_scenario_from_str(const char *text, struct EasyoScenario **out);

/**
 * Scenario from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as in [`easyo_scenario_default`].
 */
enum EasyoStatus easyo_scenario_from_file(const char *path, struct EasyoScenario **out);

/**
 * Releases a scenario; null is ignored.
 *
 * # Safety
 * `s` must come from an `easyo_scenario_*` constructor and not be used afterwards.
 */
void easyo_scenario_free(struct EasyoScenario *s);

/**
 * Sets the penalty weight `V`.
 *
 * # Safety
 * `s` must be a live scenario handle.
 */
enum EasyoStatus easyo_scenario_set_penalty_weight(struct EasyoScenario *s, double v);

/**
 * Sets the number of slots to simulate.
 *
 * # Safety
 * `s` must be a live scenario handle.
 */
enum EasyoStatus easyo_scenario_set_slots(struct EasyoScenario *s, uint64_t slots);

/**
 * Sets the random seed of the per-slot states.
 *
 * # Safety
 * `s` must be a live scenario handle.
 */
enum EasyoStatus easyo_scenario_set_seed(struct EasyoScenario *s, uint64_t seed);

/**
 * Node, link and session counts; any output pointer may be null.
 *
 * # Safety
 * `s` must be a live scenario handle; non-null outputs must be writable.
 */
enum EasyoStatus easyo_scenario_size(const struct EasyoScenario *s,
                                     size_t *nodes,
                                     size_t *links,
                                     size_t *sessions);

/**
 * Runs the scenario. With a non-null `out_dir` the CSV files are written
 * there.
 *
 * # Safety
 * `s` must be a live scenario handle, `out_dir` null or a NUL-terminated
 * string, `summary` writable.
 */
enum EasyoStatus easyo_run(const struct EasyoScenario *s,
                           const char *out_dir,
                           struct EasyoRunSummary *summary);

/**
 * Source rate maximizing `V w1 ln(1 + r) - (Q - A * sense_cost) r` on `[0, max_rate]`.
 *
 * # Safety
 * `rate` must be writable.
 */
enum EasyoStatus easyo_source_rate(double backlog,
                                   double energy_weight,
                                   double sense_cost,
                                   double max_rate,
                                   double penalty_weight,
                                   double utility_weight,
                                   double *rate);

/**
 * Harvest and purchase for one node under a linear purchase weight.
 *
 * # Safety
 * `harvest` and `purchase` must be writable.
 */
enum EasyoStatus easyo_energy_management(enum EasyoSupplyClass supply,
                                         double stored,
                                         double capacity,
                                         double price_weight,
                                         double harvestable,
                                         double grid_max,
                                         double *harvest,
                                         double *purchase);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EASYO_H */
