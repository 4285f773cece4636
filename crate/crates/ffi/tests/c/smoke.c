#include <stdio.h>
#include <string.h>
#include "countdpd.h"

int main(void) {
    const char *spec =
        "{\"family\":{\"kind\":{\"kind\":\"poisson\"}},"
        "\"model\":{\"form\":\"linear_ingarch_x\",\"q\":1,\"p\":1,\"transforms\":[]},"
        "\"theta\":[1.0,0.3,0.4],\"driver\":{\"kind\":\"none\"},\"n\":400,\"burn_in\":500,\"seed\":3,\"stream\":0}";
    CdpdDataset *data = NULL;
    if (cdpd_simulate_json(spec, &data) != CDPD_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", cdpd_last_error());
        return 1;
    }
    CdpdFit *fit = NULL;
    if (cdpd_fit(data, "poisson", "ingarch:1,1", 0.2, &fit) != CDPD_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", cdpd_last_error());
        return 1;
    }
    double theta[3];
    if (cdpd_fit_theta(fit, theta, 3) != CDPD_STATUS_OK) return 1;
    printf("%.6f %.6f %.6f\n", theta[0], theta[1], theta[2]);
    if (cdpd_fit(data, "gamma", "ingarch:1,1", 0.2, &fit) != CDPD_STATUS_INVALID_SPEC) return 1;
    if (strstr(cdpd_last_error(), "InvalidSpec") == NULL) return 1;
    cdpd_fit_free(fit);
    cdpd_dataset_free(data);
    return 0;
}
