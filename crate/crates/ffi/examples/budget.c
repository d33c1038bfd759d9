/* cc -Icrates/ffi/include crates/ffi/examples/budget.c target/release/libcavity_feedback_ffi.a -lm -lpthread -ldl */
#include <stdio.h>

#include "cavity_feedback.h"

int main(void) {
    CfParams *params = NULL;
    CfBudget *budget = NULL;
    double theta, total, post, erasure;

    if (cf_params_new(CF_PRESET_REPEATED, &params) != CF_STATUS_OK) {
        fprintf(stderr, "%s\n", cf_last_error());
        return 1;
    }
    if (cf_budget_new(params, &budget) != CF_STATUS_OK ||
        cf_budget_totals(budget, &theta, &total, &post, &erasure) != CF_STATUS_OK) {
        fprintf(stderr, "%s\n", cf_last_error());
        cf_params_free(params);
        return 1;
    }
    printf("feedback phase %.4f rad\n", theta);
    printf("Tphi %.2f ms, postselected %.1f ms, erasure time %.2f ms\n", 1e3 / total, 1e3 / post, 1e3 / erasure);

    cf_params_set(params, CF_PARAM_TM, -1.0);
    if (cf_params_validate(params) != CF_STATUS_OK)
        printf("rejected: %s\n", cf_last_error());

    cf_budget_free(budget);
    cf_params_free(params);
    return 0;
}
