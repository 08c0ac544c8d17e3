#ifndef WEARMIL_H
#define WEARMIL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wm_status {
    WM_OK = 0,
    WM_ERR_ARGUMENT = 1,
    WM_ERR_CONFIG = 2,
    WM_ERR_DATA = 3,
    WM_ERR_FORMAT = 4,
    WM_ERR_NUMERIC = 5,
    WM_ERR_IO = 6,
    WM_ERR_INTERNAL = 7
} wm_status;

typedef struct wm_config wm_config;
typedef struct wm_bag wm_bag;
typedef struct wm_model wm_model;

/* Message of the last failed call on this thread; "" after success. */
const char* wm_last_error(void);
const char* wm_status_name(wm_status s);
const char* wm_version(void);

/* Strings returned through char** are owned by the caller. */
void wm_string_free(char* s);

wm_status wm_config_new(wm_config** out);
wm_status wm_config_load(const char* path, wm_config** out);
wm_status wm_config_parse(const char* json_text, wm_config** out);
/* key is a dotted path such as "train.lr0"; value is JSON text or a bare string. */
wm_status wm_config_set(wm_config* cfg, const char* key, const char* value);
wm_status wm_config_to_json(const wm_config* cfg, char** json_text);
void wm_config_free(wm_config* cfg);

/* Pipeline stages. summary may be NULL. */
wm_status wm_simulate(const wm_config* cfg, const char* out_dir, char** summary);
wm_status wm_transform_ecg(const wm_config* cfg, const char* in_dir, const char* out_dir, char** summary);
wm_status wm_transform_watch(const wm_config* cfg, const char* in_dir, const char* out_dir, char** summary);
wm_status wm_embed(const wm_config* cfg, const char* const* in_dirs, size_t n_in, const char* out_dir,
                   char** summary);
wm_status wm_bag_build(const wm_config* cfg, const char* embeddings_dir, const char* assessments_csv,
                       const char* out_dir, char** summary);
wm_status wm_train(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary);
wm_status wm_evaluate(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary);
wm_status wm_ablate(const wm_config* cfg, const char* bags_dir, const char* out_dir, char** summary);
wm_status wm_report(const char* const* in_dirs, size_t n_in, const char* out_dir, char** summary);

wm_status wm_bag_read(const char* path, wm_bag** out);
size_t wm_bag_size(const wm_bag* bag);
size_t wm_bag_dim(const wm_bag* bag);
/* Copies the row-major n x dim embeddings into buf (capacity in floats). */
wm_status wm_bag_embeddings(const wm_bag* bag, float* buf, size_t capacity);
/* has_target is set to 0 for embedding caches without a label. */
wm_status wm_bag_target(const wm_bag* bag, double* target, int* has_target);
const char* wm_bag_patient_id(const wm_bag* bag);
void wm_bag_free(wm_bag* bag);

wm_status wm_model_load(const char* path, wm_model** out);
size_t wm_model_parameter_count(const wm_model* model);
wm_status wm_model_predict(const wm_model* model, const wm_bag* bag, double* prediction);
void wm_model_free(wm_model* model);

#ifdef __cplusplus
}
#endif

#endif
