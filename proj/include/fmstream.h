/* SPDX-License-Identifier: Apache-2.0 */
/* C interface to the fmstream simulator. All strings returned through char**
 * out-parameters are heap allocated and must be released with
 * fms_string_free. Handles are opaque; every call returns an fms_status and,
 * on failure, leaves a message for fms_last_error (per thread). */
#ifndef FMSTREAM_H
#define FMSTREAM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FMS_API __declspec(dllexport)
#else
#define FMS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as CLI exit codes. */
typedef enum fms_status {
  FMS_OK = 0,
  FMS_ERR_VALIDATION = 1, /* bad network, arguments or files */
  FMS_ERR_CAPACITY = 2,   /* does not fit FMM, WBuf, BM/CM or link buffers */
  FMS_ERR_VERIFY = 3,     /* engine output differs from the reference */
  FMS_ERR_INTERNAL = 4    /* protocol violation or bug */
} fms_status;

typedef struct fms_network fms_network;

typedef struct fms_chip_config {
  int M;
  int N;
  int C;
  uint64_t fmm_words;
  uint64_t wbuf_bits;
  uint64_t bm_bits;
  uint64_t cm_bits;
} fms_chip_config;

typedef struct fms_simulate_options {
  const char* weights_path; /* NULL: random weights from weights_seed */
  uint64_t weights_seed;
  const char* input_path; /* NULL: random input from input_seed */
  uint64_t input_seed;
  int mesh_rows;
  int mesh_cols;
  int verify;          /* compare against the reference convolution */
  int trace;           /* write trace.jsonl (single chip only) */
  uint64_t max_trace_events;
  const char* out_dir; /* NULL: write nothing */
} fms_simulate_options;

FMS_API const char* fms_version(void);
FMS_API const char* fms_last_error(void);
/* Detailed error code name, e.g. "does-not-fit", and the layer it refers to
 * (-2 when none). */
FMS_API const char* fms_last_error_code(void);
FMS_API int fms_last_error_layer(void);
FMS_API void fms_string_free(char* s);

FMS_API void fms_chip_config_default(fms_chip_config* cfg);
FMS_API void fms_simulate_options_default(fms_simulate_options* opt);

FMS_API fms_status fms_network_load(const char* path, fms_network** out);
FMS_API fms_status fms_network_from_json(const char* json, fms_network** out);
/* name: resnet34, resnet50, shufflenet, yolov3; resolution <= 0 picks the default. */
FMS_API fms_status fms_network_builtin(const char* name, int resolution, fms_network** out);
FMS_API void fms_network_free(fms_network* net);
FMS_API fms_status fms_network_to_json(const fms_network* net, char** json);
FMS_API fms_status fms_network_layer_count(const fms_network* net, int* count);
/* Returns FMS_OK even for invalid networks; *report lists the issues. */
FMS_API fms_status fms_network_validate(const fms_network* net, int* ok, char** report);

/* Memory report as JSON plus a table. *fits is set even when it is 0. */
FMS_API fms_status fms_plan(const fms_network* net, const fms_chip_config* cfg, int* fits, char** json,
                            char** table);
FMS_API fms_status fms_perf(const fms_network* net, const fms_chip_config* cfg, const char* op_point, int mesh_rows,
                            int mesh_cols, int ws_crossings, char** json);
/* mesh side 0 picks the smallest square mesh that holds each resolution. */
FMS_API fms_status fms_sweep(const char* builtin, const int* resolutions, size_t n_resolutions,
                             const int* mesh_sides, size_t n_mesh_sides, const fms_chip_config* cfg,
                             int ws_crossings, char** csv);
/* Same rows for a loaded network at its own resolution; an empty network
 * yields the header only. */
FMS_API fms_status fms_sweep_network(const fms_network* net, const int* mesh_sides, size_t n_mesh_sides,
                                     const fms_chip_config* cfg, int ws_crossings, char** csv);
FMS_API fms_status fms_simulate(const fms_network* net, const fms_chip_config* cfg,
                                const fms_simulate_options* opt, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif
