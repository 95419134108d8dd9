/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the ttc library. All objects are opaque handles owned by the
 * caller and released with the matching *_free function. Every call that can
 * fail returns a ttc_status; on failure ttc_last_error() describes the cause
 * for the calling thread until its next failing call.
 */
#ifndef TTC_H
#define TTC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TTC_API __declspec(dllexport)
#else
#define TTC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ttc_status {
  TTC_OK = 0,
  TTC_E_DIMENSION = 1,
  TTC_E_CONFIG = 2,
  TTC_E_DIVERGENCE = 3,
  TTC_E_DEGENERATE_NORMALIZER = 4,
  TTC_E_FORMAT_MAGIC = 5,
  TTC_E_FORMAT_TRUNCATED = 6,
  TTC_E_FORMAT_INDEX = 7,
  TTC_E_FORMAT_HEADER = 8,
  TTC_E_IO = 9,
  TTC_E_INVALID_ARGUMENT = 10,
  TTC_E_INTERNAL = 11
} ttc_status;

typedef struct ttc_tensor ttc_tensor;
typedef struct ttc_inner_model ttc_inner_model;
typedef struct ttc_model ttc_model;
typedef struct ttc_report ttc_report;

TTC_API const char* ttc_version(void);
TTC_API const char* ttc_last_error(void);
TTC_API const char* ttc_status_name(ttc_status status);

/* ---- tensors (row-major, double precision on the boundary) ---- */

TTC_API ttc_status ttc_tensor_create(const size_t* shape, size_t rank, const double* data,
                                     ttc_tensor** out);
TTC_API ttc_status ttc_tensor_randn(const size_t* shape, size_t rank, uint64_t seed, double stddev,
                                    ttc_tensor** out);
TTC_API void ttc_tensor_free(ttc_tensor* t);
TTC_API size_t ttc_tensor_rank(const ttc_tensor* t);
/* Copies up to cap extents into shape; returns the rank. */
TTC_API size_t ttc_tensor_shape(const ttc_tensor* t, size_t* shape, size_t cap);
TTC_API size_t ttc_tensor_numel(const ttc_tensor* t);
/* Fails with TTC_E_DIMENSION unless n == numel. */
TTC_API ttc_status ttc_tensor_copy_data(const ttc_tensor* t, double* out, size_t n);

/* ---- token mixers; q, k, v are [N x d] ---- */

TTC_API ttc_status ttc_matmul(const ttc_tensor* a, const ttc_tensor* b, ttc_tensor** out);
TTC_API ttc_status ttc_softmax_attention(const ttc_tensor* q, const ttc_tensor* k,
                                         const ttc_tensor* v, ttc_tensor** out);
/* elu+1 feature map, no projection. */
TTC_API ttc_status ttc_linear_attention(const ttc_tensor* q, const ttc_tensor* k,
                                        const ttc_tensor* v, ttc_tensor** out);
TTC_API ttc_status ttc_neighborhood_attention(const ttc_tensor* q, const ttc_tensor* k,
                                              const ttc_tensor* v, size_t grid_height,
                                              size_t grid_width, size_t window, ttc_tensor** out);

typedef enum ttc_inner_loss { TTC_LOSS_L2 = 0, TTC_LOSS_INNER_PRODUCT = 1 } ttc_inner_loss;

typedef struct ttc_ttt_config {
  ttc_inner_loss loss;
  double inner_lr;
  size_t inner_steps;
  int scale_keys; /* nonzero: keys scaled by 1/sqrt(d) inside the update */
} ttc_ttt_config;

TTC_API ttc_ttt_config ttc_ttt_config_default(void);

/* variant: linear, one_layer_gate, two_layer, three_layer, swiglu. */
TTC_API ttc_status ttc_inner_model_random(const char* variant, size_t dim, uint64_t seed,
                                          double stddev, ttc_inner_model** out);
TTC_API void ttc_inner_model_free(ttc_inner_model* m);
TTC_API ttc_status ttc_ttt_forward(const ttc_inner_model* m, const ttc_tensor* q,
                                   const ttc_tensor* k, const ttc_tensor* v,
                                   const ttc_ttt_config* cfg, ttc_tensor** out);

TTC_API ttc_status ttc_instance_norm_keys(const ttc_tensor* k, ttc_tensor** out);
TTC_API ttc_status ttc_key_shift_ratio(const ttc_tensor* k, double* ratio);

/* ---- reports: text for people, json and csv for tools ---- */

TTC_API const char* ttc_report_text(const ttc_report* r);
TTC_API const char* ttc_report_json(const ttc_report* r);
TTC_API const char* ttc_report_csv(const ttc_report* r);
/* Secondary table; empty when the producer has none. */
TTC_API const char* ttc_report_csv2(const ttc_report* r);
TTC_API int ttc_report_passed(const ttc_report* r);
TTC_API void ttc_report_free(ttc_report* r);

/* suite: all, shift, degeneracy, gradients, implicit, norm. */
TTC_API ttc_status ttc_verify(const char* suite, uint64_t seed, ttc_report** out);

/* csv: arch,resolution,N,flops,params. archs is comma separated. */
TTC_API ttc_status ttc_bench_flops(const char* model, const char* archs, const size_t* resolutions,
                                   size_t count, ttc_report** out);

typedef struct ttc_scaling_options {
  const size_t* tokens;
  size_t count;
  size_t head_dim;
  size_t repeats;
  size_t warmup;
  int use_f64;
  size_t fit_min_tokens;
  uint64_t seed;
} ttc_scaling_options;

TTC_API ttc_scaling_options ttc_scaling_options_default(void);
/* archs: comma separated subset of softmax, linear, ttt.
 * csv: arch,N,seconds_median. csv2: arch,exponent. */
TTC_API ttc_status ttc_bench_scaling(const char* archs, const ttc_scaling_options* opts,
                                     ttc_report** out);

typedef struct ttc_attn_map_options {
  size_t grid_height;
  size_t grid_width;
  size_t head_dim;
  size_t window;
  uint64_t seed;
} ttc_attn_map_options;

TTC_API ttc_attn_map_options ttc_attn_map_options_default(void);
/* layers: comma separated subset of softmax, linear, ttt, nat, blend.
 * csv: layer,query,key,score. csv2: layer,locality_index. */
TTC_API ttc_status ttc_attn_map(const char* layers, const ttc_attn_map_options* opts,
                                ttc_report** out);

typedef struct ttc_fit_options {
  const char* student;
  const char* protocol; /* freeze | ft */
  size_t steps;
  double lr;
  double lr_multiplier;
  uint64_t teacher_seed;
  uint64_t data_seed;
  double key_shift;
  size_t dim;
  size_t heads;
  size_t grid_side;
  size_t batch;
  size_t eval_sequences;
} ttc_fit_options;

typedef struct ttc_fit_result {
  double initial_mse;
  double mse; /* +inf when diverged */
  int diverged;
} ttc_fit_result;

TTC_API ttc_fit_options ttc_fit_options_default(void);
TTC_API ttc_status ttc_fit_teacher(const ttc_fit_options* opts, ttc_fit_result* out);

/* ---- models and checkpoints ---- */

/* config: deit-t | deit-s. Tensors are f32 unless use_f64. */
TTC_API ttc_status ttc_model_random(const char* config, uint64_t seed, int use_f64, ttc_model** out);
TTC_API ttc_status ttc_model_read(const char* path, ttc_model** out);
/* precision: 0 keep, 32 or 64 force. */
TTC_API ttc_status ttc_model_write(const ttc_model* m, const char* path, int precision);
/* arch: label such as "ttt_swiglu+dwc+nat5"; see README. */
TTC_API ttc_status ttc_model_convert(const ttc_model* src, const char* arch,
                                     const ttc_ttt_config* cfg, uint64_t seed, ttc_model** out);
TTC_API void ttc_model_free(ttc_model* m);
TTC_API const char* ttc_model_arch(const ttc_model* m);
TTC_API size_t ttc_model_depth(const ttc_model* m);

TTC_API ttc_status ttc_model_param_counts(const ttc_model* m, size_t* total, size_t* inherited,
                                          size_t* added);
TTC_API ttc_status ttc_model_block_params(const ttc_model* m, size_t block, size_t* inherited,
                                          size_t* added);
TTC_API size_t ttc_model_tensor_count(const ttc_model* m);
/* Name of the i-th stored tensor, or NULL when out of range. */
TTC_API const char* ttc_model_tensor_name(const ttc_model* m, size_t i);
/* Returns 1 for tensors in the newly added group. */
TTC_API int ttc_model_tensor_is_new(const ttc_model* m, size_t i);
TTC_API ttc_status ttc_model_tensor(const ttc_model* m, const char* name, ttc_tensor** out);

/* Closed-form counts without building tensors. */
TTC_API ttc_status ttc_param_counts_for(const char* config, const char* arch, size_t* baseline,
                                        size_t* added);

#ifdef __cplusplus
}
#endif

#endif /* TTC_H */
