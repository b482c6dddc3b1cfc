#ifndef COOPBO_H
#define COOPBO_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum CoopboStatus {
  COOPBO_STATUS_OK = 0,
  COOPBO_STATUS_NULL_POINTER = 1,
  COOPBO_STATUS_INVALID_ARGUMENT = 2,
  COOPBO_STATUS_OUT_OF_RANGE = 3,
  COOPBO_STATUS_PROTOCOL = 4,
  COOPBO_STATUS_NUMERICAL = 5,
  COOPBO_STATUS_IO = 6,
  COOPBO_STATUS_PANIC = 7,
} CoopboStatus;

typedef enum CoopboPhase {
  COOPBO_PHASE_AWAITING_AI_MOVE = 0,
  COOPBO_PHASE_AWAITING_USER_MOVE = 1,
  COOPBO_PHASE_FINISHED = 2,
} CoopboPhase;

// Opaque game handle.
typedef struct CoopboGame CoopboGame;

// Opaque objective handle.
typedef struct CoopboObjective CoopboObjective;

// One completed round.
typedef struct CoopboRound {
  // 1-based round index.
  size_t round;
  size_t ix;
  size_t iy;
  // Noisy observed value.
  double z;
  // Optimization score after this round.
  double score;
  bool finished;
} CoopboRound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *coopbo_last_error_message(void);

// Library version as a static string.
const char *coopbo_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be null or a pointer returned by this library and not yet freed.
void coopbo_string_free(char *s);

// The standard three-mode objective; `variant` picks the global mode.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum CoopboStatus coopbo_objective_standard(size_t variant, struct CoopboObjective **out);

// An objective from a TOML specification.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` writable.
enum CoopboStatus coopbo_objective_from_toml(const char *toml, struct CoopboObjective **out);

// # Safety
// `obj` must be a live handle; `nx` and `ny` writable.
enum CoopboStatus coopbo_objective_size(const struct CoopboObjective *obj, size_t *nx, size_t *ny);

// Noiseless value of cell `(ix, iy)` on the 0 to 100 scale.
//
// # Safety
// `obj` must be a live handle and `out` writable.
enum CoopboStatus coopbo_objective_value(const struct CoopboObjective *obj,
                                         size_t ix,
                                         size_t iy,
                                         double *out);

// # Safety
// `obj` must be null or a handle from this library not yet freed.
void coopbo_objective_free(struct CoopboObjective *obj);

// Creates a game from a JSON game configuration. With `human` false the
// second coordinate comes from the configured synthetic user.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum CoopboStatus coopbo_game_new(const char *config_json, bool human, struct CoopboGame **out);

// # Safety
// `game` must be null or a handle from this library not yet freed.
void coopbo_game_free(struct CoopboGame *game);

// # Safety
// `game` must be a live handle and `out` writable.
enum CoopboStatus coopbo_game_phase(const struct CoopboGame *game, enum CoopboPhase *out);

// Runs the AI policy and writes the chosen column to `ix`.
//
// # Safety
// `game` must be a live handle and `ix` writable.
enum CoopboStatus coopbo_game_ai_move(struct CoopboGame *game, size_t *ix);

// The synthetic user's row for the pending move.
//
// # Safety
// `game` must be a live handle and `iy` writable.
enum CoopboStatus coopbo_game_synthetic_choice(const struct CoopboGame *game, size_t *iy);

// Completes the pending round with row `iy`. `out` may be null.
//
// # Safety
// `game` must be a live handle; `out` null or writable.
enum CoopboStatus coopbo_game_user_move(struct CoopboGame *game,
                                        size_t iy,
                                        struct CoopboRound *out);

// One full round against the synthetic user. `out` may be null.
//
// # Safety
// `game` must be a live handle; `out` null or writable.
enum CoopboStatus coopbo_game_step(struct CoopboGame *game, struct CoopboRound *out);

// The game trace as JSON; free it with [`coopbo_string_free`].
//
// # Safety
// `game` must be a live handle and `out` writable.
enum CoopboStatus coopbo_game_trace_json(const struct CoopboGame *game, char **out);

// Plays a whole episode against the synthetic user and returns its trace as
// JSON; free it with [`coopbo_string_free`].
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum CoopboStatus coopbo_run_episode(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPBO_H */
