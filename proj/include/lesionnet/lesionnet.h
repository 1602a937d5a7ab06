/* C interface to the lesionnet library. Every call that can fail returns an
 * ln_status; on failure ln_last_error() describes the problem (per thread).
 * Strings returned through char** out-parameters are owned by the caller and
 * released with ln_string_free. */
#ifndef LESIONNET_H
#define LESIONNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(LESIONNET_BUILDING)
#define LN_API __attribute__((visibility("default")))
#else
#define LN_API
#endif

/* Numeric values match the command-line exit codes. */
typedef enum ln_status {
  LN_OK = 0,
  LN_ERR_USAGE = 2,
  LN_ERR_NUMERIC = 3,
  LN_ERR_IO = 4,
  LN_ERR_CONSISTENCY = 5,
  LN_ERR_INTERNAL = 70
} ln_status;

typedef struct ln_model ln_model;
typedef struct ln_dataset ln_dataset;
typedef struct ln_report ln_report;

LN_API const char* ln_version(void);
LN_API const char* ln_last_error(void);
LN_API void ln_string_free(char* s);

/* ---- models ------------------------------------------------------------ */

typedef struct ln_paper_options {
  int input_side;       /* default 512 */
  size_t num_classes;   /* default 7, at most 7 */
  double width;         /* channel multiplier, default 1 */
  double dropout_rate;  /* default 0.5 */
  int global_max_pool;  /* 0: average (default), 1: max */
  int sigmoid_head;     /* 0: softmax (default) */
  uint64_t seed;        /* weight init seed */
} ln_paper_options;

LN_API void ln_paper_options_default(ln_paper_options* options);
LN_API ln_status ln_model_create_paper(const ln_paper_options* options, ln_model** out);
/* Architecture JSON as written by ln_model_arch_json. */
LN_API ln_status ln_model_create_from_json(const char* arch_json, uint64_t seed, ln_model** out);
LN_API ln_status ln_model_load(const char* path, ln_model** out);
LN_API ln_status ln_model_save(const ln_model* model, const char* path);
/* Fresh output layer for the first num_classes lesion classes. */
LN_API ln_status ln_model_replace_head(ln_model* model, size_t num_classes, uint64_t seed);
LN_API ln_status ln_model_freeze(ln_model* model, double fraction);
LN_API size_t ln_model_num_classes(const ln_model* model);
LN_API int ln_model_input_side(const ln_model* model);
/* Human-readable layer table with output shapes, frozen flags and any
 * published-shape warnings. */
LN_API ln_status ln_model_summary(const ln_model* model, char** out);
LN_API ln_status ln_model_arch_json(const ln_model* model, char** out);
/* Inference on one C x H x W float input; writes num_classes probabilities. */
LN_API ln_status ln_model_forward(const ln_model* model, const float* input, size_t input_len,
                                  float* output, size_t output_len);
LN_API void ln_model_free(ln_model* model);

/* ---- data -------------------------------------------------------------- */

/* Writes <out_dir>/images/<id>.ppm and <out_dir>/metadata.csv. */
LN_API ln_status ln_synth_write(size_t n_per_class, size_t num_classes, int side, uint64_t seed,
                                const char* out_dir);

typedef struct ln_split_options {
  double train; /* default 0.70 */
  double val;   /* default 0.15 */
  double test;  /* default 0.15 */
  uint64_t seed;
  int group_by_lesion; /* keep every lesion's images in one part */
} ln_split_options;

LN_API void ln_split_options_default(ln_split_options* options);
/* Writes train.txt, val.txt, test.txt and split_summary.csv into out_dir.
 * summary (nullable) receives the per-class count table as CSV. */
LN_API ln_status ln_split_write(const char* metadata_csv, const ln_split_options* options,
                                const char* out_dir, char** summary);

/* equalize: 0 none, 1 per channel (default), 2 luminance. */
typedef struct ln_dataset_options {
  int input_side;
  int equalize;
  size_t num_classes;     /* labels index the first num_classes lesion classes */
  const char* image_dir;  /* NULL: <metadata dir>/images, then <metadata dir> */
} ln_dataset_options;

LN_API void ln_dataset_options_default(ln_dataset_options* options);
/* manifest NULL: every record in the metadata file. */
LN_API ln_status ln_dataset_open(const char* metadata_csv, const char* manifest,
                                 const ln_dataset_options* options, ln_dataset** out);
LN_API size_t ln_dataset_size(const ln_dataset* dataset);
LN_API size_t ln_dataset_num_classes(const ln_dataset* dataset);
LN_API void ln_dataset_free(ln_dataset* dataset);

/* ---- training ---------------------------------------------------------- */

typedef struct ln_epoch_stats {
  size_t epoch; /* 1-based */
  double train_loss;
  double train_accuracy;
  int has_val;
  double val_loss;
  double val_accuracy;
} ln_epoch_stats;

typedef void (*ln_epoch_callback)(const ln_epoch_stats* stats, void* user);

typedef struct ln_train_options {
  size_t epochs;          /* default 50 */
  size_t batch_size;      /* default 32 */
  double learning_rate;   /* default 1e-3 */
  double beta1;           /* default 0.9 */
  double beta2;           /* default 0.999 */
  double adam_epsilon;    /* default 1e-8 */
  double dropout_rate;    /* default 0.5; negative keeps the model's rates */
  double freeze_fraction; /* negative (default) keeps the model's frozen flags */
  int use_class_weights;  /* default 1 */
  int augment;            /* default 1 */
  uint64_t seed;
  ln_epoch_callback on_epoch;
  void* user;
  const char* history_csv; /* nullable */
} ln_train_options;

LN_API void ln_train_options_default(ln_train_options* options);
/* Trains model in place. summary_json (nullable) receives the class weights
 * used and the last epoch's statistics. */
LN_API ln_status ln_train(ln_model* model, const ln_dataset* train, const ln_dataset* val,
                          const ln_train_options* options, char** summary_json);

/* ---- evaluation and reports -------------------------------------------- */

LN_API ln_status ln_evaluate(const ln_model* model, const ln_dataset* dataset, ln_report** out);
/* counts: num_classes x num_classes, rows actual, columns predicted. */
LN_API ln_status ln_report_from_counts(size_t num_classes, const char* const* labels,
                                       const uint64_t* counts, ln_report** out);
LN_API ln_status ln_report_from_confusion_csv(const char* path, ln_report** out);
/* format: "text", "csv" or "svg". */
LN_API ln_status ln_report_render(const ln_report* report, const char* format, char** out);
LN_API ln_status ln_report_write_confusion_csv(const ln_report* report, const char* path);
LN_API double ln_report_accuracy(const ln_report* report);
/* Mean loss of an ln_evaluate report; NaN for reports built from counts. */
LN_API double ln_report_loss(const ln_report* report);
LN_API uint64_t ln_report_total(const ln_report* report);
LN_API void ln_report_free(ln_report* report);

#ifdef __cplusplus
}
#endif

#endif /* LESIONNET_H */
