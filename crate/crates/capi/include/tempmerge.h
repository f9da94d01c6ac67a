/* C interface for the tempmerge dense-retrieval library.
 *
 * All functions returning int use the TM_* status codes below; on any
 * non-zero return, tm_last_error() yields a human-readable message for
 * the calling thread. Handles are opaque and must be released with the
 * matching *_free function exactly once.
 */

#ifndef TEMPMERGE_H
#define TEMPMERGE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define TM_OK 0
#define TM_ERR_NULL_ARGUMENT 1
#define TM_ERR_IO 2
#define TM_ERR_INVALID_DATA 3
#define TM_ERR_UTF8 4
#define TM_ERR_DIMENSION 5

typedef struct TmModel TmModel;
typedef struct TmVocab TmVocab;
typedef struct TmIndex TmIndex;
typedef struct TmHits TmHits;

/* Copies the last error message into buffer (NUL-terminated, truncated
 * to capacity). Returns the untruncated message length. */
size_t tm_last_error(char *buffer, size_t capacity);

/* Encoder checkpoints (the binary format written by the CLI). */
int tm_model_load(const char *path, TmModel **out);
void tm_model_free(TmModel *model);
size_t tm_model_dim(const TmModel *model);

/* One-token-per-line vocabulary files. */
int tm_vocab_load(const char *path, TmVocab **out);
void tm_vocab_free(TmVocab *vocab);

/* Encodes UTF-8 text; out_embedding must hold tm_model_dim(model)
 * doubles. */
int tm_encode(const TmModel *model, const TmVocab *vocab, const char *text,
              double *out_embedding);

/* Binary index files written by the CLI. */
int tm_index_load(const char *path, TmIndex **out);
void tm_index_free(TmIndex *index);
size_t tm_index_len(const TmIndex *index);

/* Exact top-k dot-product search. The embedding length must equal the
 * index dimension. */
int tm_search(const TmIndex *index, const double *embedding, size_t dim,
              size_t k, TmHits **out);
void tm_hits_free(TmHits *hits);
size_t tm_hits_len(const TmHits *hits);
/* Pointers stay valid until tm_hits_free; rank_index is 0-based. */
const char *tm_hits_id(const TmHits *hits, size_t rank_index);
double tm_hits_score(const TmHits *hits, size_t rank_index);

#ifdef __cplusplus
}
#endif

#endif /* TEMPMERGE_H */
