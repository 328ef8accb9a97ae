/*
 * connectome: functional-connectivity graph learning, C API.
 *
 * Every function returns CNX_OK (0) on success or a nonzero status code;
 * cnx_last_error() describes the most recent failure on the calling thread.
 * Objects returned through cnx_cohort / cnx_model handles are opaque and
 * must be released with their close function. Strings returned through
 * char** out-parameters are heap-allocated; release them with
 * cnx_string_free().
 */
#ifndef CONNECTOME_H
#define CONNECTOME_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define CNX_OK 0
#define CNX_E_INVALID 1  /* bad argument or configuration */
#define CNX_E_IO 2       /* filesystem failure */
#define CNX_E_PARSE 3    /* malformed input data */
#define CNX_E_NUMERIC 4  /* numerical failure (divergence, non-finite) */
#define CNX_E_PARTIAL 5  /* finished, but some subjects failed; see summary */
#define CNX_E_INTERNAL 6

typedef struct cnx_cohort cnx_cohort; /* a loaded graph store */
typedef struct cnx_model cnx_model;   /* a model or soft-vote ensemble */

const char* cnx_version(void);

/* Message for the last failure on this thread; empty string if none. */
const char* cnx_last_error(void);

void cnx_string_free(char* s);

/*
 * Generate a synthetic cohort (manifest.jsonl, timeseries/*.csv,
 * planted_edges.json) under out_dir. spec_json keys (all optional):
 * n_subjects, n_rois, n_sites, timepoints, effect_size, seed,
 * planted_edges ([[i,j],...]).
 */
int cnx_synth(const char* spec_json, const char* out_dir);

/*
 * Build one thresholded connectivity graph per manifest subject and write
 * the store to out_graphs_path. options_json keys: density (default 0.20),
 * jobs. Per-subject failures are reported in *summary_json and turn the
 * status into CNX_E_PARTIAL; the successful graphs are still written.
 */
int cnx_build_graphs(const char* manifest_path, const char* options_json,
                     const char* out_graphs_path, char** summary_json);

/*
 * Site- and label-stratified 70/15/15 split of the manifest, written as a
 * JSON map subject_id -> "train"|"val"|"test". options_json keys: seed,
 * fractions ([train, val, test]).
 */
int cnx_split(const char* manifest_path, const char* options_json,
              const char* out_split_path);

int cnx_cohort_open(const char* graphs_path, cnx_cohort** out);
int cnx_cohort_size(const cnx_cohort* cohort, int32_t* out);
void cnx_cohort_close(cnx_cohort* cohort);

/*
 * Train on the train portion of the store (augmented in-memory per config)
 * and write member checkpoints plus history CSVs under out_dir.
 * config_json keys: arch, epochs, lr, batch_size, members, dropedge,
 * density, sigma, copies, seed, jobs. *summary_json reports the member
 * checkpoints and their best validation accuracy.
 */
int cnx_train(const char* graphs_path, const char* split_path,
              const char* config_json, const char* out_dir,
              char** summary_json);

/* Open checkpoint(s); more than one path forms a soft-vote ensemble. */
int cnx_model_open(const char* const* checkpoint_paths, int32_t count,
                   cnx_model** out);
void cnx_model_close(cnx_model* model);

/*
 * Metrics over the labeled graphs of a cohort, optionally restricted by a
 * split file plus subset name ("train"|"val"|"test"). *metrics_json gets
 * {accuracy, precision, recall, auc, confusion:{tn,fp,fn,tp}, n}.
 */
int cnx_evaluate(cnx_model* model, cnx_cohort* cohort,
                 const char* split_path_or_null, const char* subset_or_null,
                 char** metrics_json);

/*
 * Saliency and edge-mask explanations for every (or a subset of) cohort
 * subject, written under out_dir. options_json keys: seed, steps,
 * lambda_size, lambda_entropy, split_path, subset.
 */
int cnx_explain(cnx_model* model, cnx_cohort* cohort,
                const char* options_json, const char* out_dir,
                char** summary_json);

/*
 * Full pipeline: build graphs -> split -> augment(train) -> train ->
 * evaluate -> optional explain. config_json: see cnx_train plus manifest,
 * density and explain flags. *metrics_json gets {val: ..., test: ...}.
 */
int cnx_pipeline(const char* config_json, const char* out_dir,
                 char** metrics_json);

/* Convert run artifacts into plot-ready CSV tables under out_dir. */
int cnx_report(const char* run_dir, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* CONNECTOME_H */
