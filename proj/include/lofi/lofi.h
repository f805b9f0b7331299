#ifndef LOFI_LOFI_H
#define LOFI_LOFI_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define LOFI_API __attribute__((visibility("default")))

typedef enum lofi_status {
  LOFI_OK = 0,
  LOFI_INVALID_INPUT = 1,
  LOFI_SHAPE = 2,
  LOFI_CONFIG = 3,
  LOFI_IO = 4,
  LOFI_CORRUPT = 5,
  LOFI_NUMERIC = 6,
  LOFI_CONVERGENCE = 7,
  LOFI_INTERNAL = 99
} lofi_status;

typedef struct lofi_image lofi_image;
typedef struct lofi_model lofi_model;

// Message of the last failing call on this thread ("" if none).
LOFI_API const char* lofi_last_error(void);
// Stable lowercase name, e.g. "invalid_input".
LOFI_API const char* lofi_status_name(lofi_status status);
LOFI_API const char* lofi_version(void);

// Runs a subcommand (simulate, train, infer, admm, eval, bench, ccpg-trace)
// from a JSON config. On success *summary_json (if non-null) receives a JSON
// summary to be released with lofi_string_free.
LOFI_API lofi_status lofi_run(const char* command, const char* config_json, char** summary_json);
LOFI_API void lofi_string_free(char* s);

// Images are H x W x C doubles, row-major [row][col][channel].
LOFI_API lofi_status lofi_image_create(int height, int width, int channels, const double* data,
                                       lofi_image** out);
// .png or LFT1 tensor, by extension.
LOFI_API lofi_status lofi_image_load(const char* path, lofi_image** out);
LOFI_API lofi_status lofi_image_save(const lofi_image* image, const char* path);
LOFI_API void lofi_image_free(lofi_image* image);
LOFI_API lofi_status lofi_image_shape(const lofi_image* image, int* height, int* width,
                                      int* channels);
// Borrowed pointer valid until the image is freed.
LOFI_API const double* lofi_image_data(const lofi_image* image);

// Model from a JSON model config (unknown keys rejected).
LOFI_API lofi_status lofi_model_create(const char* config_json, lofi_model** out);
LOFI_API lofi_status lofi_model_load(const char* path, lofi_model** out);
LOFI_API lofi_status lofi_model_save(lofi_model* model, const char* path);
LOFI_API void lofi_model_free(lofi_model* model);
// Reconstruction of `observation` at out_height x out_width. The result is
// independent of pixel_batch and threads.
LOFI_API lofi_status lofi_model_infer(const lofi_model* model, const lofi_image* observation,
                                      int out_height, int out_width, int pixel_batch, int threads,
                                      lofi_image** out);
// Resolved model config as JSON; release with lofi_string_free.
LOFI_API lofi_status lofi_model_config(const lofi_model* model, char** config_json);

// peak <= 0 selects 1 for references in [0, 1], else their range.
LOFI_API lofi_status lofi_psnr(const lofi_image* x, const lofi_image* ref, double peak,
                               double* out);
LOFI_API lofi_status lofi_ssim(const lofi_image* x, const lofi_image* ref, double peak,
                               double* out);

// 1 when allocation counting is wired into this process.
LOFI_API int lofi_memprobe_available(void);

#ifdef __cplusplus
}
#endif

#endif
