#ifndef CAVITY_FEEDBACK_H
#define CAVITY_FEEDBACK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_PARAMS = 2,
  CF_STATUS_INVALID_INPUT = 3,
  CF_STATUS_NUMERICAL = 4,
  CF_STATUS_OUT_OF_RANGE = 5,
  CF_STATUS_PANIC = 6,
} CfStatus;

typedef enum {
  CF_PRESET_IDLE = 0,
  CF_PRESET_REPEATED = 1,
} CfPreset;

/**
 * Settable parameter fields. Units as in the Rust API; `ChiHz` is chi / 2 pi.
 */
typedef enum {
  CF_PARAM_CHI_HZ = 0,
  CF_PARAM_GAMMA = 1,
  CF_PARAM_GAMMA_UP = 2,
  CF_PARAM_T1_CAVITY = 3,
  CF_PARAM_TM = 4,
  CF_PARAM_TG = 5,
  CF_PARAM_THETA0 = 6,
  CF_PARAM_PE_GIVEN_G = 7,
  CF_PARAM_PG_GIVEN_E = 8,
  CF_PARAM_C_RO = 9,
  /**
   * Fixed feedback phase; see [`cf_params_use_optimal_phase`].
   */
  CF_PARAM_FEEDBACK_PHASE = 10,
} CfParam;

typedef enum {
  CF_MODE_IDLE = 0,
  CF_MODE_FEEDBACK = 1,
} CfMode;

typedef enum {
  CF_SELECTION_ALL = 0,
  CF_SELECTION_NO_DETECTION = 1,
} CfSelection;

typedef struct CfBudget CfBudget;

typedef struct CfEnsemble CfEnsemble;

typedef struct CfHmm CfHmm;

typedef struct CfParams CfParams;

typedef struct {
  /**
   * Index into 0a, 0b, 1a, 1b, 1c, 2a, 2b.
   */
  uint32_t label;
  double probability;
  double coherence_re;
  double coherence_im;
  double dephasing_rate;
} CfEventTerm;

typedef struct {
  double t;
  double re;
  double im;
  double std_err;
  uint64_t n_samples;
} CfCoherencePoint;

typedef struct {
  double p_e_given_g;
  double p_g_given_e;
  double gamma_up;
  double gamma;
} CfHmmParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
CfStatus cf_params_new(CfPreset preset, CfParams **out);

/**
 * # Safety
 * `params` must be null or a handle from [`cf_params_new`] not yet freed.
 */
void cf_params_free(CfParams *params);

/**
 * Sets one field. Values are validated when the parameters are used.
 *
 * # Safety
 * `params` must be a live handle.
 */
CfStatus cf_params_set(CfParams *params, CfParam field, double value);

/**
 * Reads one field. For `FeedbackPhase` in optimal mode this yields the
 * resolved optimal phase.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
CfStatus cf_params_get(const CfParams *params, CfParam field, double *out);

/**
 * Switches the feedback phase back to the budget-optimal value.
 *
 * # Safety
 * `params` must be a live handle.
 */
CfStatus cf_params_use_optimal_phase(CfParams *params);

/**
 * Checks the parameter invariants.
 *
 * # Safety
 * `params` must be a live handle.
 */
CfStatus cf_params_validate(const CfParams *params);

/**
 * Idle, ideal-feedback and no-phase-correction dephasing rates (1/s).
 *
 * # Safety
 * `params` must be a live handle; each output pointer must be writable.
 */
CfStatus cf_dephasing_rates(const CfParams *params,
                            double *idle,
                            double *feedback_ideal,
                            double *no_phase_correction);

/**
 * Budget-optimal feedback phase: exact minimizer and the small-angle value
 * (NaN when undefined).
 *
 * # Safety
 * `params` must be a live handle; outputs writable.
 */
CfStatus cf_optimal_phase(const CfParams *params, double *refined, double *small_angle);

/**
 * Event budget at the configured feedback phase.
 *
 * # Safety
 * `params` must be a live handle; `out` writable.
 */
CfStatus cf_budget_new(const CfParams *params, CfBudget **out);

/**
 * # Safety
 * `budget` must be null or a live handle.
 */
void cf_budget_free(CfBudget *budget);

/**
 * Totals of a budget: feedback phase (rad), total dephasing rate,
 * postselected rate and erasure rate (1/s).
 *
 * # Safety
 * `budget` must be a live handle; outputs writable.
 */
CfStatus cf_budget_totals(const CfBudget *budget,
                          double *theta_tilde,
                          double *total_rate,
                          double *postselected_rate,
                          double *erasure_rate);

/**
 * Number of event terms.
 *
 * # Safety
 * `budget` must be a live handle; `out` writable.
 */
CfStatus cf_budget_term_count(const CfBudget *budget, size_t *out);

/**
 * # Safety
 * `budget` must be a live handle; `out` writable.
 */
CfStatus cf_budget_term(const CfBudget *budget, size_t index, CfEventTerm *out);

/**
 * Simulates `shots` shots of `mode` for `duration` seconds and keeps the
 * state at `points` evenly spaced times. Deterministic in `seed` regardless
 * of the calling thread pool.
 *
 * # Safety
 * `params` must be a live handle; `out` writable.
 */
CfStatus cf_ensemble_run(const CfParams *params,
                         CfMode mode,
                         double duration,
                         size_t points,
                         size_t shots,
                         uint64_t seed,
                         CfEnsemble **out);

/**
 * # Safety
 * `ensemble` must be null or a live handle.
 */
void cf_ensemble_free(CfEnsemble *ensemble);

/**
 * Number of time points held by the ensemble.
 *
 * # Safety
 * `ensemble` must be a live handle; `out` writable.
 */
CfStatus cf_ensemble_point_count(const CfEnsemble *ensemble, size_t *out);

/**
 * Coherence at time point `index`.
 *
 * # Safety
 * `ensemble` must be a live handle; `out` writable.
 */
CfStatus cf_ensemble_coherence(const CfEnsemble *ensemble,
                               CfSelection selection,
                               size_t index,
                               CfCoherencePoint *out);

/**
 * Pure dephasing time from an exponential fit; infinite when the decay is
 * photon-loss limited.
 *
 * # Safety
 * `ensemble` must be a live handle; `out` writable.
 */
CfStatus cf_ensemble_fit_tphi(const CfEnsemble *ensemble, CfSelection selection, double *out);

/**
 * HMM from physical parameters at measurement interval `t_m`.
 *
 * # Safety
 * `params` must point to a readable struct; `out` writable.
 */
CfStatus cf_hmm_new(const CfHmmParams *params, double t_m, CfHmm **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void cf_hmm_free(CfHmm *model);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
CfStatus cf_hmm_params(const CfHmm *model, CfHmmParams *out);

/**
 * Simulates `n` observations (0 = g, 1 = e) into `obs`; hidden states go to
 * `states` unless it is null.
 *
 * # Safety
 * `obs` (and `states` if non-null) must hold `n` writable bytes.
 */
CfStatus cf_hmm_simulate(const CfHmm *model,
                         size_t n,
                         uint64_t seed,
                         uint8_t *obs,
                         uint8_t *states);

/**
 * Log-likelihood of `n` observations.
 *
 * # Safety
 * `obs` must hold `n` readable bytes; `out` writable.
 */
CfStatus cf_hmm_log_likelihood(const CfHmm *model, const uint8_t *obs, size_t n, double *out);

/**
 * Smoothed probability of the excited state at each step.
 *
 * # Safety
 * `obs` must hold `n` readable bytes and `posterior_e` `n` writable doubles.
 */
CfStatus cf_hmm_smooth(const CfHmm *model, const uint8_t *obs, size_t n, double *posterior_e);

/**
 * Baum-Welch from `guess`; the fitted model is returned as a new handle and
 * the iteration count in `iterations` (may be null).
 *
 * # Safety
 * `obs` must hold `n` readable bytes; `out` writable.
 */
CfStatus cf_hmm_fit(const CfHmm *guess,
                    const uint8_t *obs,
                    size_t n,
                    size_t max_iter,
                    double tol,
                    CfHmm **out,
                    size_t *iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAVITY_FEEDBACK_H */
