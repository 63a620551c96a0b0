#ifndef EFDLS_H
#define EFDLS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EfdlsStatus {
  EFDLS_STATUS_OK = 0,
  EFDLS_STATUS_NULL_POINTER = 1,
  EFDLS_STATUS_INVALID_UTF8 = 2,
  EFDLS_STATUS_CONFIG = 3,
  EFDLS_STATUS_IO = 4,
  EFDLS_STATUS_MALFORMED = 5,
  EFDLS_STATUS_DATASET = 6,
  EFDLS_STATUS_RUNTIME = 7,
  EFDLS_STATUS_BUFFER_TOO_SMALL = 8,
  EFDLS_STATUS_PANIC = 9,
} EfdlsStatus;

/**
 * Parsed run configuration.
 */
typedef struct EfdlsConfig EfdlsConfig;

/**
 * Finished federation run.
 */
typedef struct EfdlsRun EfdlsRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next failing
 * call on the same thread.
 */
const char *efdls_last_error_message(void);

/**
 * Parses a TOML run configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` writable.
 */
enum EfdlsStatus efdls_config_from_toml(const char *toml, struct EfdlsConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum EfdlsStatus efdls_config_set_seed(struct EfdlsConfig *cfg, uint64_t seed);

/**
 * Accepts `baseline`, `fedavg`, `fkd` or `efdls`.
 *
 * # Safety
 * `cfg` must be a live handle and `name` a NUL-terminated string.
 */
enum EfdlsStatus efdls_config_set_strategy(struct EfdlsConfig *cfg, const char *name);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void efdls_config_free(struct EfdlsConfig *cfg);

/**
 * Runs a federation to completion.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum EfdlsStatus efdls_run(const struct EfdlsConfig *cfg, struct EfdlsRun **out);

/**
 * Mean test accuracy over all users of the run.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum EfdlsStatus efdls_run_mean_acc(const struct EfdlsRun *run, double *out);

/**
 * Bytes moved in both directions over the whole run.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum EfdlsStatus efdls_run_total_bytes(const struct EfdlsRun *run, uint64_t *out);

/**
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum EfdlsStatus efdls_run_n_conn(const struct EfdlsRun *run, uintptr_t *out);

/**
 * Writes the run's summary JSON. Call with a null `buf` to learn the size.
 *
 * # Safety
 * `run` must be a live handle, `buf` null or valid for `cap` bytes, `needed`
 * null or writable.
 */
enum EfdlsStatus efdls_run_summary_json(const struct EfdlsRun *run,
                                        char *buf,
                                        uintptr_t cap,
                                        uintptr_t *needed);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void efdls_run_free(struct EfdlsRun *run);

/**
 * Renders the summary rows of an accuracy CSV (datasets by algorithms).
 *
 * # Safety
 * `path` must be a NUL-terminated string, `buf` null or valid for `cap`
 * bytes, `needed` null or writable.
 */
enum EfdlsStatus efdls_eval_table(const char *path, char *buf, uintptr_t cap, uintptr_t *needed);

/**
 * Connected-user count for a ratio, rounded half up.
 *
 * # Safety
 * `out` must be writable.
 */
enum EfdlsStatus efdls_n_conn(uintptr_t n_tot, double conn_ratio, uintptr_t *out);

/**
 * Checks that `len` bytes decode as a weight message; reports its epoch and
 * sender.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes; `epoch` and `user_id` writable.
 */
enum EfdlsStatus efdls_decode_header(const uint8_t *bytes,
                                     uintptr_t len,
                                     uint32_t *epoch,
                                     uint32_t *user_id);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFDLS_H */
