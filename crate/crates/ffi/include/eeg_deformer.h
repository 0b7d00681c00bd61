/* C interface to the EEG-Deformer library (eeg-deformer-ffi).
 *
 * Conventions:
 *   - Handles are opaque; free them with the matching eegd_*_free, which
 *     tolerates NULL. Every other pointer argument must be non-NULL unless
 *     a function documents otherwise.
 *   - Functions return EEGD_OK (0) on success. On failure the message is
 *     available through eegd_last_error() on the same thread until the
 *     next call into the library from that thread.
 *   - Configuration is passed as TOML text, matching the CLI config files.
 *   - All functions are thread-compatible: distinct handles may be used
 *     from distinct threads, but one handle must not be used concurrently.
 */

#ifndef EEG_DEFORMER_H
#define EEG_DEFORMER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
    EEGD_OK = 0,
    /* Caller mistake: bad configuration, shape, domain, or name. */
    EEGD_ERR_USAGE = 1,
    /* Runtime failure: I/O, corrupt file, training breakdown. */
    EEGD_ERR_RUNTIME = 2,
    /* A required pointer argument was NULL. */
    EEGD_ERR_NULL = 3,
    /* A string argument was not valid UTF-8. */
    EEGD_ERR_UTF8 = 4,
    /* An internal panic was caught at the boundary. */
    EEGD_ERR_PANIC = 5
};

typedef struct EegdDataset EegdDataset;
typedef struct EegdModel EegdModel;
typedef struct EegdCheckpoint EegdCheckpoint;

/* Version of the library, as a static NUL-terminated string. */
const char *eegd_version(void);

/* Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next library call on the same thread. */
const char *eegd_last_error(void);

/* ---- datasets ---- */

/* Synthesizes a dataset from a TOML spec (NULL for the built-in default). */
int eegd_dataset_generate(const char *spec_toml, uint64_t seed,
                          EegdDataset **out);

int eegd_dataset_read(const char *path, EegdDataset **out);

int eegd_dataset_write(const EegdDataset *dataset, const char *path);

/* Reports dataset geometry; any output pointer may be NULL. */
int eegd_dataset_geometry(const EegdDataset *dataset, uint32_t *channels,
                          uint32_t *segment_len, double *sampling_rate,
                          uint32_t *n_classes, uint32_t *n_subjects);

void eegd_dataset_free(EegdDataset *dataset);

/* ---- models ---- */

/* Builds a freshly initialized network from a full model config in TOML. */
int eegd_model_new(const char *config_toml, uint64_t seed, EegdModel **out);

int eegd_model_param_count(const EegdModel *model, uint64_t *out);

/* Class logits for one segment of channels * segment_len samples, written
 * to logits_out[0..n_classes]. */
int eegd_model_logits(const EegdModel *model, const float *samples,
                      size_t len, float *logits_out, size_t logits_len);

/* Predicted class index for one segment. */
int eegd_model_predict(const EegdModel *model, const float *samples,
                       size_t len, uint32_t *class_out);

void eegd_model_free(EegdModel *model);

/* ---- training and evaluation ---- */

/* Trains the model in place on the dataset under a TOML train config (NULL
 * for defaults), holding out the configured validation fraction. The best
 * epoch's snapshot lands in best_out unless that pointer is NULL. */
int eegd_train(EegdModel *model, const EegdDataset *dataset,
               const char *train_toml, EegdCheckpoint **best_out);

/* Accuracy and macro F1 of a checkpoint over every segment of the dataset.
 * Either output pointer may be NULL. */
int eegd_evaluate(const EegdModel *model, const EegdCheckpoint *checkpoint,
                  const EegdDataset *dataset, double *accuracy,
                  double *macro_f1);

/* ---- checkpoints ---- */

int eegd_checkpoint_save(const EegdCheckpoint *checkpoint, const char *path);

int eegd_checkpoint_load(const char *path, EegdCheckpoint **out);

/* Rebuilds the network a checkpoint was taken from, weights included. */
int eegd_checkpoint_restore_model(const EegdCheckpoint *checkpoint,
                                  EegdModel **out);

void eegd_checkpoint_free(EegdCheckpoint *checkpoint);

/* ---- saliency ---- */

/* Gradient saliency of one segment toward class_idx. map_out, when not
 * NULL, receives channels * segment_len values in [0, 1]; scores_out, when
 * not NULL, receives one score per channel. */
int eegd_saliency(const EegdModel *model, const float *samples, size_t len,
                  uint32_t class_idx, float *map_out, float *scores_out);

#ifdef __cplusplus
}
#endif

#endif /* EEG_DEFORMER_H */
