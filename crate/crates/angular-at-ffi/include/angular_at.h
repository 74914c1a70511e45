/* C ABI for the angular-at adversarial-training toolkit.
 *
 * Conventions:
 *  - Fallible calls return an int32_t status (AAT_OK = 0); results go
 *    through out-pointers that are written only on success.
 *  - aat_last_error() returns a thread-local, NUL-terminated message for
 *    the most recent failure on the calling thread; the pointer stays valid
 *    until the next failing call on that thread.
 *  - Handles are opaque. Create them with aat_*_load / aat_*_generate* /
 *    aat_model_train and release each exactly once with the matching
 *    aat_*_free (a null handle is a no-op there). Passing a null handle to
 *    a getter reads as 0; anywhere else it is AAT_ERR_NULL_ARGUMENT.
 *  - Library panics never unwind into the caller; they are reported as
 *    AAT_ERR_INTERNAL.
 *  - All functions are thread-safe for distinct handles. Do not share one
 *    handle across threads while any of them may free it.
 */
#ifndef ANGULAR_AT_H
#define ANGULAR_AT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. 2-5 match the CLI's exit codes for the same failures. */
#define AAT_OK 0
#define AAT_ERR_NULL_ARGUMENT 1 /* a required pointer was null            */
#define AAT_ERR_INVALID 2       /* bad argument or configuration value    */
#define AAT_ERR_IO 3            /* file could not be read or written      */
#define AAT_ERR_NUMERIC 4       /* non-finite values or shape mismatch    */
#define AAT_ERR_FORMAT 5        /* artifact failed integrity validation   */
#define AAT_ERR_INTERNAL 6      /* caught panic; report this as a bug     */

/* Opaque handles. */
typedef struct AatModel AatModel;
typedef struct AatDataset AatDataset;

/* Library version as a static NUL-terminated string. */
const char *aat_version(void);

/* Message for the most recent failure on the calling thread (empty string
 * if none). Valid until the next failing call on this thread. */
const char *aat_last_error(void);

/* --- datasets ----------------------------------------------------------- */

/* Generate Gaussian blobs with class means on a circle: `classes` classes
 * in dimension `dim` (>= 2), `per_class` examples each, noise standard
 * deviation `spread`, deterministic in `seed`. */
int32_t aat_dataset_generate_blobs(size_t classes, size_t dim,
                                   size_t per_class, double spread,
                                   uint64_t seed, AatDataset **out);

/* Load a dataset written by aat_dataset_save or the CLI; `stem` names the
 * file triple stem.features.aat / stem.labels.aat / stem.manifest. */
int32_t aat_dataset_load(const char *stem, AatDataset **out);

/* Write the dataset's three files under `stem` (bit-exact round-trip). */
int32_t aat_dataset_save(const AatDataset *dataset, const char *stem);

void aat_dataset_free(AatDataset *dataset);

size_t aat_dataset_len(const AatDataset *dataset);
size_t aat_dataset_input_dim(const AatDataset *dataset);
size_t aat_dataset_classes(const AatDataset *dataset);

/* --- models --------------------------------------------------------------- */

/* Train a classifier on `train_data`.
 *
 * `objective` is one of "angular_at", "pgd_at_plain", "pgd_at_he",
 * "natural". `epochs` = 0 keeps the objective's preset epoch count.
 * `layer_dims` may be NULL for the default architecture; otherwise it must
 * hold `layer_dims_len` entries starting with the dataset's feature
 * dimension. `workers` = 0 runs single-threaded; results are bit-identical
 * for any worker count. Training is deterministic in `seed`. */
int32_t aat_model_train(const AatDataset *train_data, const char *objective,
                        uint64_t seed, uint32_t epochs,
                        const size_t *layer_dims, size_t layer_dims_len,
                        size_t workers, AatModel **out);

/* Load / save checkpoints compatible with the CLI (.aatc files). */
int32_t aat_model_load(const char *path, AatModel **out);
int32_t aat_model_save(const AatModel *model, const char *path);

void aat_model_free(AatModel *model);

size_t aat_model_input_dim(const AatModel *model);
size_t aat_model_classes(const AatModel *model);

/* Order-independent FNV checksum over all parameters, matching the value
 * the CLI prints after training. */
int32_t aat_model_param_checksum(const AatModel *model, uint64_t *out);

/* Classify `rows` examples of dimension `dim` (row-major `features`),
 * writing one label per row into `out_labels`. */
int32_t aat_model_predict(const AatModel *model, const double *features,
                          size_t rows, size_t dim, int64_t *out_labels);

/* --- evaluation ----------------------------------------------------------- */

/* Fraction of `test_data` classified correctly. */
int32_t aat_eval_natural_accuracy(const AatModel *model,
                                  const AatDataset *test_data, double *out);

/* Accuracy under an evaluation attack preset: "pgd20", "pgd500", "cw20",
 * "spsa", or "none" (no perturbation). `epsilon` = 0 keeps the preset's
 * L-infinity radius. `workers` = 0 runs single-threaded; results are
 * bit-identical for any worker count and deterministic in `seed`. */
int32_t aat_eval_robust_accuracy(const AatModel *model,
                                 const AatDataset *test_data,
                                 const char *attack, double epsilon,
                                 uint64_t seed, size_t workers, double *out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ANGULAR_AT_H */
