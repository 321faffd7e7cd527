/* C API for the operator-correction library.
 *
 * All functions return OPCORR_OK (0) on success or a negative error code;
 * opcorr_last_error() describes the most recent failure on the calling
 * thread. Handles are opaque and must be released with their destroy
 * function. Configuration is passed as JSON documents matching the CLI
 * config format.
 */
#ifndef OPCORR_H
#define OPCORR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define OPCORR_OK 0
#define OPCORR_E_CONFIG (-1)  /* bad configuration or parameters */
#define OPCORR_E_INPUT (-2)   /* bad runtime input (shapes, values) */
#define OPCORR_E_IO (-3)      /* filesystem / serialization */
#define OPCORR_E_NUMERIC (-4) /* divergence or non-finite state */
#define OPCORR_E_INTERNAL (-5)

const char* opcorr_version(void);

/* thread-local message for the last failing call; empty string if none */
const char* opcorr_last_error(void);

/* ---- forward operators ------------------------------------------------- */

typedef struct opcorr_pat opcorr_pat;

#define OPCORR_OP_ACCURATE 0
#define OPCORR_OP_APPROX 1

/* config_json: {"n":64,"c":1,"dx":1,"dt":1,"n_t":64,"theta_max":60,
 *               "pad_factor":2}; missing fields take defaults.
 * Returns NULL on error. */
opcorr_pat* opcorr_pat_create(const char* config_json);
void opcorr_pat_destroy(opcorr_pat* op);

/* image is n*n doubles (row-major), measurement n*n_t doubles */
int opcorr_pat_shape(const opcorr_pat* op, uint32_t* n, uint32_t* n_det, uint32_t* n_t);

/* which: OPCORR_OP_ACCURATE or OPCORR_OP_APPROX; adjoint != 0 maps
 * measurement -> image, otherwise image -> measurement */
int opcorr_pat_apply(opcorr_pat* op, int which, int adjoint, const double* in,
                     size_t in_len, double* out, size_t out_len);

/* max relative adjoint discrepancy over `trials` random pairs */
int opcorr_pat_dot_test(opcorr_pat* op, int which, int trials, uint64_t seed,
                        double* max_rel);

/* ---- pipeline commands -------------------------------------------------- */

int opcorr_cmd_generate(const char* config_json);
int opcorr_cmd_train(const char* config_json, const char* method);
/* selector: "all", a single index, or "first..last" */
int opcorr_cmd_reconstruct(const char* config_json, const char* method,
                           const char* selector);
int opcorr_cmd_evaluate(const char* config_json);
/* options_json: {"n":64,"out_dir":"toy_demo","seed":1} */
int opcorr_cmd_toy_demo(const char* options_json);

#ifdef __cplusplus
}
#endif

#endif /* OPCORR_H */
