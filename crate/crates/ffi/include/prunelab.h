/* C interface to the prunelab pruning engine.
 *
 * Handles are opaque and owned by the caller, who releases them with the
 * matching *_free function. Fallible calls return PRUNELAB_OK or an error
 * code; prunelab_last_error() then describes the failure. The message is
 * per thread and valid until the next prunelab call on that thread.
 */
#ifndef PRUNELAB_H
#define PRUNELAB_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PRUNELAB_OK 0
#define PRUNELAB_ERR_NULL_POINTER 1
#define PRUNELAB_ERR_INVALID_ARGUMENT 2
#define PRUNELAB_ERR_IO 3
#define PRUNELAB_ERR_FORMAT 4
#define PRUNELAB_ERR_NUMERIC 5
#define PRUNELAB_ERR_PANIC 6

#define PRUNELAB_GRANULARITY_DEFAULT (-1)
#define PRUNELAB_GRANULARITY_PER_LAYER 0
#define PRUNELAB_GRANULARITY_PER_ROW 1

typedef struct PrunelabModel PrunelabModel;
typedef struct PrunelabStats PrunelabStats;

const char *prunelab_last_error(void);
const char *prunelab_version(void);

int32_t prunelab_model_load(const char *path, PrunelabModel **out);
int32_t prunelab_model_save(const PrunelabModel *model, const char *path);
void prunelab_model_free(PrunelabModel *model);
int32_t prunelab_model_sparsity(const PrunelabModel *model, double *out);

/* Default model shape, batch 16, learning rate 1e-3. */
int32_t prunelab_train(const uint8_t *corpus, size_t len, uint64_t seed, size_t steps, PrunelabModel **out);

int32_t prunelab_perplexity(const PrunelabModel *model, const uint8_t *corpus, size_t len, double *out);

int32_t prunelab_stats_collect(const PrunelabModel *model, const uint8_t *corpus, size_t len, size_t samples,
                               PrunelabStats **out);
int32_t prunelab_stats_load(const char *path, PrunelabStats **out);
int32_t prunelab_stats_save(const PrunelabStats *stats, const char *path);
void prunelab_stats_free(PrunelabStats *stats);

/* method: "magnitude", "neg_magnitude", "wanda", "sparsegpt" or "mama".
 * stats may be NULL for the two magnitude criteria. */
int32_t prunelab_prune(const PrunelabModel *model, const PrunelabStats *stats, const char *method, double level,
                       int32_t granularity, double lambda, int32_t redistribute, PrunelabModel **out);

#ifdef __cplusplus
}
#endif

#endif /* PRUNELAB_H */
