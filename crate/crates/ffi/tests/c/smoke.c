#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fabric_motif.h"

#define CHECK(call)                                                   \
    do {                                                              \
        FmStatus s_ = (call);                                         \
        if (s_ != FM_STATUS_OK) {                                     \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, fm_last_error()); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    enum { T = 8, N = 64 };
    double *pixels = malloc(sizeof(double) * N * N);
    unsigned state = 12345u;
    double tile[T * T];
    for (int i = 0; i < T * T; i++) {
        state = state * 1103515245u + 12345u;
        tile[i] = 40.0 + (state >> 16) % 176;
    }
    for (int r = 0; r < N; r++)
        for (int c = 0; c < N; c++)
            pixels[r * N + c] = tile[(r % T) * T + c % T];

    FmImage *image = NULL;
    CHECK(fm_image_from_pixels(N, N, pixels, &image));

    FmTrainConfig cfg = fm_train_config_default();
    cfg.filter_size = 9;
    FmModel *model = NULL;
    CHECK(fm_model_train(image, &cfg, 1, &model));

    double threshold = -1.0;
    CHECK(fm_model_anomaly_threshold(model, &threshold));

    FmMap *map = NULL;
    CHECK(fm_detect(model, image, NAN, NAN, &map));
    FmMask *mask = NULL;
    CHECK(fm_segment(map, 0, 0, 0, &mask));

    if (fm_model_parameter_count(model) != fm_model_feature_count(model) * 81) return 2;
    if (fm_mask_count(mask) != 0) return 3;

    FmModel *missing = NULL;
    if (fm_model_load("/nonexistent/model.json", &missing) != FM_STATUS_IO) return 4;
    if (fm_last_error()[0] == '\0') return 5;

    printf("features=%zu threshold=%g\n", fm_model_feature_count(model), threshold);
    fm_mask_free(mask);
    fm_map_free(map);
    fm_model_free(model);
    fm_image_free(image);
    free(pixels);
    return 0;
}
