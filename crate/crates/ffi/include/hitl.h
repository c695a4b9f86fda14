#ifndef HITL_H
#define HITL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Item status codes used by [`hitl_composite_score`].
 */
#define HITL_ITEM_VALID 0

#define HITL_ITEM_POTENTIALLY_OUTDATED 1

#define HITL_ITEM_SUPERSEDED 2

typedef enum HitlStatus {
  HITL_STATUS_OK = 0,
  HITL_STATUS_NULL_ARGUMENT = 1,
  HITL_STATUS_INVALID_UTF8 = 2,
  HITL_STATUS_INVALID_ARGUMENT = 3,
  HITL_STATUS_UNKNOWN_KID = 4,
  HITL_STATUS_DUPLICATE_KID = 5,
  HITL_STATUS_INVALID_TRANSITION = 6,
  HITL_STATUS_SUPERSESSION_CYCLE = 7,
  HITL_STATUS_CLOCK_SKEW = 8,
  HITL_STATUS_IO = 9,
  HITL_STATUS_CONFIG = 10,
  HITL_STATUS_RUN = 11,
  HITL_STATUS_PANIC = 99,
} HitlStatus;

/**
 * Opaque repository handle.
 */
typedef struct HitlRepository HitlRepository;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *hitl_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void hitl_string_free(char *s);

/**
 * # Safety
 * `run_id` must be a valid C string; `out` a valid pointer.
 */
enum HitlStatus hitl_repository_new(const char *run_id, struct HitlRepository **out);

/**
 * # Safety
 * `repo` must come from this library or be null.
 */
void hitl_repository_free(struct HitlRepository *repo);

/**
 * # Safety
 * Pointers must be valid; `out` receives the item count.
 */
enum HitlStatus hitl_repository_len(struct HitlRepository *repo, size_t *out);

/**
 * Adds a Valid item. `kind` is `rule`, `explanation` or `fact`; exemplars
 * go through [`hitl_repository_add_json`]. The new kid is written to
 * `out_kid`.
 *
 * # Safety
 * Pointers must be valid C strings / out pointers.
 */
enum HitlStatus hitl_repository_add(struct HitlRepository *repo,
                                    const char *kind,
                                    const char *content,
                                    int64_t now,
                                    char **out_kid);

/**
 * Inserts a complete item given as JSON, keeping its kid and timestamps.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HitlStatus hitl_repository_add_json(struct HitlRepository *repo, const char *item_json);

/**
 * Moves `kid` to `to_status` (`Valid`, `PotentiallyOutdated`, `Superseded`).
 * `relation` names the cause (`supersedes`, `updates`, `contradicts`,
 * `consistent`, `ambiguous`); `other_kid` may be null.
 *
 * # Safety
 * Pointers must be valid; `other_kid` may be null.
 */
enum HitlStatus hitl_repository_transition(struct HitlRepository *repo,
                                           const char *kid,
                                           const char *to_status,
                                           const char *relation,
                                           const char *other_kid,
                                           bool override_,
                                           int64_t now);

/**
 * Scores every item against `query` with the built-in embedder and writes
 * the selected items, best first, as a JSON array. `params_json` may be
 * null for the default scoring parameters.
 *
 * # Safety
 * Pointers must be valid; `params_json` may be null.
 */
enum HitlStatus hitl_repository_retrieve(struct HitlRepository *repo,
                                         const char *query,
                                         int64_t now,
                                         const char *params_json,
                                         char **out_json);

/**
 * Canonical JSON of the repository.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HitlStatus hitl_repository_to_json(struct HitlRepository *repo, char **out_json);

/**
 * Rebuilds the repository recorded in a run log.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HitlStatus hitl_repository_replay_file(const char *path, struct HitlRepository **out);

/**
 * Composite score of an item with the given status code, age in seconds
 * and relevance in [0, 1].
 *
 * # Safety
 * `out` must be valid.
 */
enum HitlStatus hitl_composite_score(uint32_t status,
                                     double w_po,
                                     double lambda_per_s,
                                     int64_t age_s,
                                     double relevance,
                                     double *out);

/**
 * Runs a whole stream from a run configuration given as JSON and writes the
 * final metrics as JSON. The log goes to `config.log` or stays in memory.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HitlStatus hitl_run_config_json(const char *config_json, char **out_metrics_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HITL_H */
