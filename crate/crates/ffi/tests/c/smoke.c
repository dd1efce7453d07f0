#include <math.h>
#include <stdio.h>
#include <string.h>

#include "adabatch.h"

#define CHECK(cond)                                                       \
    do {                                                                  \
        if (!(cond)) {                                                    \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, \
                    ab_last_error_message());                             \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int main(void) {
    AbDataset *ds = NULL;
    CHECK(ab_dataset_synthetic(AB_OBJECTIVE_LEAST_SQUARES, 200, 5, 1.0, 3, &ds) == AB_STATUS_OK);
    CHECK(ab_dataset_n_samples(ds) == 200 && ab_dataset_n_features(ds) == 5);

    const char *config =
        "step = { policy = \"adagrad\", alpha = 2.0, beta = 400.0 }\n"
        "batch = { policy = \"approx_tests\" }\n"
        "seed = 4\n"
        "max_epochs = 3.0\n";
    AbTrace *trace = NULL;
    CHECK(ab_run(ds, config, &trace) == AB_STATUS_OK);
    CHECK(ab_trace_status(trace) == AB_RUN_STATUS_BUDGET_EXHAUSTED);
    size_t n = ab_trace_len(trace);
    CHECK(n > 2);

    AbTraceRow first, last;
    CHECK(ab_trace_row(trace, 0, &first) == AB_STATUS_OK);
    CHECK(ab_trace_row(trace, n - 1, &last) == AB_STATUS_OK);
    CHECK(first.iter == 0 && isnan(first.step_size) && first.batch_size == 0);
    CHECK(last.f < first.f);
    CHECK(ab_trace_row(trace, n, &last) == AB_STATUS_INVALID_ARGUMENT);
    CHECK(strstr(ab_last_error_message(), "out of range") != NULL);

    double w[5];
    CHECK(ab_trace_final_weights(trace, w, 5) == AB_STATUS_OK);
    CHECK(ab_trace_final_weights(trace, w, 4) == AB_STATUS_INVALID_ARGUMENT);

    AbTrace *bad = NULL;
    CHECK(ab_run(ds, "step = 3", &bad) == AB_STATUS_CONFIG && bad == NULL);

    double eta = 0.0;
    CHECK(ab_adagrad_step_size(0.1, 100.0, 0.0, 0.0, &eta) == AB_STATUS_OK);
    CHECK(fabs(eta - 0.01) < 1e-15);

    double rows[20];
    for (int k = 0; k < 20; k++) rows[k] = k < 3 ? 1.5 : -0.5;
    AbTestConfig cfg = {1.0, 1.0, 1.0};
    AbTestVerdict v;
    CHECK(ab_approx_tests(rows, 20, 1, &cfg, &v) == AB_STATUS_OK);
    CHECK(v.inner_pass && v.recommended_size == 0);
    CHECK(fabs(v.rhs_inner - 0.0016) < 1e-15);

    ab_trace_free(trace);
    ab_dataset_free(ds);
    printf("ok %s\n", ab_version());
    return 0;
}
