/* C API for the dwtnet inpainting library.
 *
 * All entry points return a dwtnet_status; DWTNET_OK is 0. On failure,
 * dwtnet_last_error() returns a thread-local description of what went wrong.
 * A run handle carries the configuration for one command invocation; it is
 * populated from a key=value config file and/or individual dwtnet_run_set
 * calls (later calls win), then passed to one of the dwtnet_cmd_* functions.
 */
#ifndef DWTNET_H
#define DWTNET_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dwtnet_status {
    DWTNET_OK = 0,
    DWTNET_ERR_INVALID_ARG = 1, /* null pointer / malformed argument */
    DWTNET_ERR_CONFIG = 2,      /* bad key, value, or configuration state */
    DWTNET_ERR_DIMENSION = 3,   /* shape or extent mismatch */
    DWTNET_ERR_NUMERIC = 4,     /* divergence or non-finite values */
    DWTNET_ERR_USAGE = 5,       /* operation precondition violated */
    DWTNET_ERR_IO = 6,          /* file missing, unreadable or unwritable */
    DWTNET_ERR_INTERNAL = 7
} dwtnet_status;

typedef struct dwtnet_run* dwtnet_run_t;

const char* dwtnet_version(void);
const char* dwtnet_status_name(dwtnet_status status);

/* Message for the most recent failure on this thread; never NULL. */
const char* dwtnet_last_error(void);

dwtnet_status dwtnet_run_create(dwtnet_run_t* out);
void dwtnet_run_destroy(dwtnet_run_t run);

/* Load a key=value config file into the run. */
dwtnet_status dwtnet_run_load_config(dwtnet_run_t run, const char* path);

/* Set one option. Keys match the config file: image_size, base_channels,
 * dwt_blocks, patch_rate, codebook_size, code_dim, heads, lambda_c, knn_k,
 * ffc_global_ratio, decoder_noise, seed, steps, lr, lr_prior, rescale_every,
 * checkpoint_every, sample_every, sn_iters, texture, alpha_g, alpha_a,
 * alpha_p, alpha_s, beta, mask, out, checkpoint, image, dataset_dir,
 * temperature, probe_c, probe_d, probe_runs, probe_trials, probe_steps,
 * probe_pool. */
dwtnet_status dwtnet_run_set(dwtnet_run_t run, const char* key, const char* value);

/* Train on the procedural corpus; writes losses.csv, metrics.csv,
 * checkpoints and sample grids under the configured output directory. */
dwtnet_status dwtnet_cmd_train(dwtnet_run_t run);

/* Evaluate PSNR/SSIM (overall and masked-region) over a directory of PNGs;
 * writes eval.csv. Requires checkpoint and dataset_dir. */
dwtnet_status dwtnet_cmd_eval(dwtnet_run_t run);

/* Inpaint one PNG with the configured mask; writes inpainted.png and
 * mask.png. Requires checkpoint and image. */
dwtnet_status dwtnet_cmd_inpaint(dwtnet_run_t run);

/* Gradient-norm-ratio probe; writes grad_ratio.csv and grad_drift.csv. */
dwtnet_status dwtnet_cmd_grad_probe(dwtnet_run_t run);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DWTNET_H */
