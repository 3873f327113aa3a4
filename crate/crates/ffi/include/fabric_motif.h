#ifndef FABRIC_MOTIF_H
#define FABRIC_MOTIF_H

#include <stddef.h>
#include <stdint.h>

typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_ARGUMENT = 1,
  FM_STATUS_INVALID_UTF8 = 2,
  FM_STATUS_IO = 3,
  FM_STATUS_DEGENERATE = 4,
  FM_STATUS_DIMENSION = 5,
  FM_STATUS_PARAMETER = 6,
  FM_STATUS_PERIOD_ESTIMATION = 7,
  FM_STATUS_TRAINING = 8,
  FM_STATUS_MODEL_FORMAT = 9,
  FM_STATUS_MODEL = 10,
  FM_STATUS_BUFFER_TOO_SMALL = 11,
  FM_STATUS_PANIC = 12,
} FmStatus;

typedef struct FmImage FmImage;

typedef struct FmMap FmMap;

typedef struct FmMask FmMask;

typedef struct FmModel FmModel;

// Training settings. `filter_size == 0` estimates it from the image.
typedef struct FmTrainConfig {
  uint32_t filter_size;
  uint32_t num_layers;
  uint32_t patch_stride;
  uint32_t layer_stride;
  double similarity_threshold;
  double contrast_threshold;
  uint64_t seed;
  // Nonzero applies histogram equalization.
  uint8_t equalize;
  // 0 = per-pixel maximum, 1 = mean.
  uint8_t aggregation;
} FmTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call into this library on the same thread.
const char *fm_last_error(void);

const char *fm_version(void);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FmStatus fm_image_load(const char *path, struct FmImage **out);

// Copies `width * height` row-major intensities.
//
// # Safety
// `pixels` must point to `width * height` readable doubles.
enum FmStatus fm_image_from_pixels(size_t width,
                                   size_t height,
                                   const double *pixels,
                                   struct FmImage **out);

// # Safety
// `image` must be a live handle or null.
size_t fm_image_width(const struct FmImage *image);

// # Safety
// `image` must be a live handle or null.
size_t fm_image_height(const struct FmImage *image);

// # Safety
// `image` must come from this library and not be used afterwards.
void fm_image_free(struct FmImage *image);

struct FmTrainConfig fm_train_config_default(void);

// Trains on one defect-free image. With `calibrate` nonzero the anomaly
// threshold is also calibrated on that image. `config` may be null for
// defaults.
//
// # Safety
// Handles must be live; `out` must be writable.
enum FmStatus fm_model_train(const struct FmImage *image,
                             const struct FmTrainConfig *config,
                             uint8_t calibrate,
                             struct FmModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FmStatus fm_model_load(const char *path, struct FmModel **out);

// # Safety
// `model` must be live; `path` must be a NUL-terminated string.
enum FmStatus fm_model_save(const struct FmModel *model, const char *path);

// Recalibrates the anomaly threshold on `image` and writes it to `out`
// when `out` is not null.
//
// # Safety
// Handles must be live.
enum FmStatus fm_model_calibrate(struct FmModel *model, const struct FmImage *image, double *out);

// # Safety
// `model` must be live; `out` must be writable.
enum FmStatus fm_model_anomaly_threshold(const struct FmModel *model, double *out);

// # Safety
// `model` must be a live handle or null.
size_t fm_model_feature_count(const struct FmModel *model);

// Feature count times the squared filter size, summed over layers.
//
// # Safety
// `model` must be a live handle or null.
size_t fm_model_parameter_count(const struct FmModel *model);

// # Safety
// `model` must be a live handle or null.
size_t fm_model_filter_size(const struct FmModel *model);

// # Safety
// `model` must come from this library and not be used afterwards.
void fm_model_free(struct FmModel *model);

// Defect probability map of a raw test image. A NaN `anomaly_threshold`
// uses the model's calibrated value; a NaN `sigma` uses the default spread.
//
// # Safety
// Handles must be live; `out` must be writable.
enum FmStatus fm_detect(const struct FmModel *model,
                        const struct FmImage *image,
                        double anomaly_threshold,
                        double sigma,
                        struct FmMap **out);

// # Safety
// `map` must be a live handle or null.
size_t fm_map_width(const struct FmMap *map);

// # Safety
// `map` must be a live handle or null.
size_t fm_map_height(const struct FmMap *map);

// Copies the row-major values into `buffer`, which holds `len` doubles.
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum FmStatus fm_map_values(const struct FmMap *map, double *buffer, size_t len);

// Writes a 16-bit PNG.
//
// # Safety
// `map` must be live; `path` must be a NUL-terminated string.
enum FmStatus fm_map_save(const struct FmMap *map, const char *path);

// # Safety
// `map` must come from this library and not be used afterwards.
void fm_map_free(struct FmMap *map);

// Two-dimensional maximum entropy binarization followed by an opening.
// Zero for any size argument selects its default.
//
// # Safety
// `map` must be live; `out` must be writable.
enum FmStatus fm_segment(const struct FmMap *map,
                         size_t levels,
                         size_t neighborhood,
                         size_t se,
                         struct FmMask **out);

// Number of defective pixels.
//
// # Safety
// `mask` must be a live handle or null.
size_t fm_mask_count(const struct FmMask *mask);

// Copies the mask as 0/1 bytes, row-major.
//
// # Safety
// `buffer` must point to `len` writable bytes.
enum FmStatus fm_mask_values(const struct FmMask *mask, uint8_t *buffer, size_t len);

// Writes an 8-bit image, 255 for defective pixels.
//
// # Safety
// `mask` must be live; `path` must be a NUL-terminated string.
enum FmStatus fm_mask_save(const struct FmMask *mask, const char *path);

// # Safety
// `mask` must come from this library and not be used afterwards.
void fm_mask_free(struct FmMask *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FABRIC_MOTIF_H */
