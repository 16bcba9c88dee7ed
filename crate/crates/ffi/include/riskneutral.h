#ifndef RISKNEUTRAL_H
#define RISKNEUTRAL_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum RnStatus {
  RN_STATUS_OK = 0,
  RN_STATUS_NULL_POINTER = 1,
  RN_STATUS_INVALID_PARAMETER = 2,
  RN_STATUS_INPUT_ERROR = 3,
  RN_STATUS_NUMERICAL_ERROR = 4,
  RN_STATUS_PANIC = 5,
} RnStatus;

typedef enum RnStrategy {
  RN_STRATEGY_TRADER = 0,
  RN_STRATEGY_BUYER = 1,
} RnStrategy;

typedef enum RnPriceMode {
  RN_PRICE_MODE_RAW = 0,
  RN_PRICE_MODE_FAIR = 1,
} RnPriceMode;

// Price ensemble on a time mesh.
typedef struct RnEnsemble RnEnsemble;

// Price densities of an ensemble.
typedef struct RnExperiment RnExperiment;

// Infinitely divisible limit law of the log-likelihood process.
typedef struct RnLaw RnLaw;

typedef struct RnLawSummary {
  double mu;
  double sigma2;
  double mu_interval;
  double sigma2_interval;
  size_t n_atoms_t0;
  size_t n_atoms_t;
} RnLawSummary;

typedef struct RnQuote {
  double trader_price;
  double buyer_lower_bound;
  double fair_trader_price;
  double fair_buyer_lower_bound;
  // 1 when priced with the calm formulas.
  int32_t calm;
} RnQuote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *rn_last_error(void);

// Library version as a static nul-terminated string.
const char *rn_version(void);

// Simulates GBM paths on a uniform mesh of `k` intervals over `[t0, t_end]`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum RnStatus rn_ensemble_gbm(double s0,
                              double mu,
                              double sigma,
                              double t0,
                              double t_end,
                              size_t k,
                              size_t n_paths,
                              uint64_t seed,
                              struct RnEnsemble **out);

// Simulates a jump diffusion; jump `i` has log size `log_jumps[i]` with
// probability `probs[i]`.
//
// # Safety
// `log_jumps` and `probs` must point to `n_jumps` readable doubles and
// `out` to writable storage for one handle.
enum RnStatus rn_ensemble_jump_diffusion(double s0,
                                         double mu,
                                         double sigma,
                                         double intensity,
                                         const double *log_jumps,
                                         const double *probs,
                                         size_t n_jumps,
                                         double t0,
                                         double t_end,
                                         size_t k,
                                         size_t n_paths,
                                         uint64_t seed,
                                         struct RnEnsemble **out);

// Reads a CSV or binary ensemble file.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum RnStatus rn_ensemble_read(const char *path, struct RnEnsemble **out);

// # Safety
// `ens` must be a live handle and `path` a nul-terminated string.
enum RnStatus rn_ensemble_write_csv(const struct RnEnsemble *ens, const char *path);

// Number of paths; 0 for a null handle.
//
// # Safety
// `ens` must be null or a live handle.
size_t rn_ensemble_n_paths(const struct RnEnsemble *ens);

// Number of mesh intervals; 0 for a null handle.
//
// # Safety
// `ens` must be null or a live handle.
size_t rn_ensemble_k(const struct RnEnsemble *ens);

// # Safety
// `ens` must be null or a handle not yet freed.
void rn_ensemble_free(struct RnEnsemble *ens);

// # Safety
// `ens` must be a live handle and `out` writable.
enum RnStatus rn_experiment_new(const struct RnEnsemble *ens, struct RnExperiment **out);

// Largest in-sample martingale deviation over the intervals.
//
// # Safety
// `exp` must be a live handle and `out` writable.
enum RnStatus rn_experiment_martingale_deviation(const struct RnExperiment *exp, double *out);

// `log(E S_T / E S_t0)`.
//
// # Safety
// `exp` must be a live handle and `out` writable.
enum RnStatus rn_experiment_log_a(const struct RnExperiment *exp, double *out);

// Runs the diagnostics with default settings and returns the report as a
// JSON string, to be released with [`rn_string_free`].
//
// # Safety
// `exp` must be a live handle and `out` writable.
enum RnStatus rn_diagnose_json(const struct RnExperiment *exp, char **out);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void rn_string_free(char *s);

// # Safety
// `exp` must be a live handle and `out` writable.
void rn_experiment_free(struct RnExperiment *exp);

// Estimates the limit law with truncation level `tau`.
//
// # Safety
// `exp` must be a live handle and `out` writable.
enum RnStatus rn_law_estimate(const struct RnExperiment *exp, double tau, struct RnLaw **out);

// Normal limit law with variance `sigma2_interval` and mean `-sigma2_interval / 2`.
//
// # Safety
// `out` must be writable.
enum RnStatus rn_law_calm(double sigma2_interval, struct RnLaw **out);

// Law with unit exponential moment under the trader strategy, with
// trader-side atoms at `ys[i]` of intensity `intensities[i]`.
//
// # Safety
// `ys` and `intensities` must point to `n_atoms` readable doubles and
// `out` must be writable.
enum RnStatus rn_law_martingale(double sigma2_interval,
                                const double *ys,
                                const double *intensities,
                                size_t n_atoms,
                                struct RnLaw **out);

// # Safety
// `law` must be a live handle and `out` writable.
enum RnStatus rn_law_summary(const struct RnLaw *law, struct RnLawSummary *out);

// Log moment generating function of the limit law at `s`.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum RnStatus rn_law_log_mgf(const struct RnLaw *law,
                             double s,
                             enum RnStrategy strategy,
                             double *out);

// # Safety
// `law` must be null or a handle not yet freed.
void rn_law_free(struct RnLaw *law);

// Prices a European call from a limit law. `log_a` is `log(E S_T / E S_t0)`.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum RnStatus rn_price_call(const struct RnLaw *law,
                            double spot,
                            double strike,
                            double rate,
                            double delta_t,
                            double log_a,
                            enum RnPriceMode mode,
                            struct RnQuote *out);

// Black-Scholes-Merton call price; `sigma_total = sigma * sqrt(delta_t)`.
double rn_bsm(double spot, double strike, double rate, double sigma_total, double delta_t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISKNEUTRAL_H */
