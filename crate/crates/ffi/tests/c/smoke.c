#include <math.h>
#include <stdio.h>
#include "msinet.h"

int main(void) {
    MsinetMetrics m;
    if (msinet_confmat_metrics(6338, 1167, 792, 10936, 1, &m) != MSINET_STATUS_OK) return 1;
    if (fabs(m.accuracy - 0.8981) > 5e-5 || fabs(m.f1 - 0.9178) > 5e-5) return 2;

    MsinetModel *model = NULL;
    if (msinet_model_build("cnn5", 0.25, 32, 0, &model) != MSINET_STATUS_OK) return 3;
    size_t layers = 0;
    msinet_model_count_weight_layers(model, &layers);
    double x[3 * 32 * 32] = {0};
    double p = -1.0;
    if (msinet_model_predict(model, x, 1, &p) != MSINET_STATUS_OK || p < 0.0 || p > 1.0) return 4;
    msinet_model_free(model);

    if (msinet_model_build("nope", 1.0, 64, 0, &model) != MSINET_STATUS_INVALID_ARGUMENT) return 5;
    printf("layers=%zu p=%.6f err=%s\n", layers, p, msinet_last_error());
    return 0;
}
