#ifndef ULISSE_GP_H
#define ULISSE_GP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call. Values 2 to 9 match the CLI exit codes.
typedef enum UgpStatus {
  UGP_STATUS_OK = 0,
  UGP_STATUS_NULL_POINTER = 1,
  UGP_STATUS_INVALID_ARGUMENT = 2,
  UGP_STATUS_NUMERICAL = 3,
  UGP_STATUS_CAPACITY = 4,
  UGP_STATUS_CONVERGENCE = 5,
  UGP_STATUS_DIVERGENCE = 6,
  UGP_STATUS_IO = 7,
  UGP_STATUS_PARSE = 8,
  UGP_STATUS_CONFIG = 9,
  // A Rust panic was caught at the boundary.
  UGP_STATUS_PANIC = 10,
} UgpStatus;

// A sampled chain in log space.
typedef struct UgpChain UgpChain;

// A standardized (or raw) regression dataset.
typedef struct UgpDataset UgpDataset;

// Covariance parameters in natural units.
typedef struct UgpHyperParams {
  double sigma;
  double tau;
  double lambda;
} UgpHyperParams;

// Gamma(shape, rate) prior on one parameter.
typedef struct UgpGammaPrior {
  double shape;
  double rate;
} UgpGammaPrior;

typedef struct UgpPriors {
  struct UgpGammaPrior sigma;
  struct UgpGammaPrior tau;
  struct UgpGammaPrior lambda;
} UgpPriors;

// SGLD settings. Fill with [`ugp_sgld_options_default`] and adjust.
typedef struct UgpSgldOptions {
  double eps_start;
  double eps_end;
  double gamma;
  size_t total_iters;
  // Non-positive or infinite disables freezing.
  double freeze_threshold;
  size_t variance_batch;
  size_t probe_redraw_period;
  size_t num_probes;
  // Row-major 3×3 preconditioner.
  double preconditioner[9];
  double q;
  double beta;
  // Residual threshold of the inner solves.
  double epsilon;
  bool warm_start;
} UgpSgldOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays valid
// until the next failing call on the same thread.
const char *ugp_last_error(void);

// Library version as a static NUL-terminated string.
const char *ugp_version(void);

// Builds a dataset from `x` (`n × d`, row-major) and labels `y` (`n`). With
// `standardize`, inputs are scaled per column and labels centred and scaled.
//
// # Safety
// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to writable
// storage for one pointer.
enum UgpStatus ugp_dataset_new(const double *x,
                               const double *y,
                               size_t n,
                               size_t d,
                               bool standardize,
                               struct UgpDataset **out);

// Reads a CSV file (label in the last column, optional header) and
// standardizes it.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum UgpStatus ugp_dataset_load_csv(const char *path, struct UgpDataset **out);

// Number of points, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t ugp_dataset_n(const struct UgpDataset *ds);

// Input dimension, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t ugp_dataset_d(const struct UgpDataset *ds);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void ugp_dataset_free(struct UgpDataset *ds);

// `out = K(θ) v`; `v` and `out` hold `n` doubles.
//
// # Safety
// Pointers must be valid for the lengths above; `theta` must be readable.
enum UgpStatus ugp_cmvp(const struct UgpDataset *ds,
                        const struct UgpHyperParams *params,
                        const double *v,
                        double *out);

// Solves `K(θ) x = b` by conjugate gradients to residual norm `epsilon`.
// Returns `UGP_STATUS_CONVERGENCE` if the iteration cap (`10 n`) is hit; `x`
// then holds the last iterate.
//
// # Safety
// `b` and `x` must hold `n` doubles; `iterations` may be NULL.
enum UgpStatus ugp_cg_solve(const struct UgpDataset *ds,
                            const struct UgpHyperParams *params,
                            const double *b,
                            double epsilon,
                            double *x,
                            size_t *iterations);

// One unbiased estimate of `K(θ)⁻¹ b` with early-stop scale `q` and roulette
// rate `beta`, driven by `seed`.
//
// # Safety
// `b` and `x` must hold `n` doubles; `iterations` may be NULL.
enum UgpStatus ugp_ulisse_solve(const struct UgpDataset *ds,
                                const struct UgpHyperParams *params,
                                const double *b,
                                double q,
                                double beta,
                                double epsilon,
                                uint64_t seed,
                                double *x,
                                size_t *iterations);

// Exact log-marginal likelihood by dense Cholesky (capacity-guarded).
//
// # Safety
// `out` must be writable.
enum UgpStatus ugp_log_marginal_likelihood(const struct UgpDataset *ds,
                                           const struct UgpHyperParams *params,
                                           double *out);

// Exact gradient of the log-marginal likelihood with respect to
// `(log σ, log τ, log λ)`.
//
// # Safety
// `out` must hold 3 doubles.
enum UgpStatus ugp_exact_log_gradient(const struct UgpDataset *ds,
                                      const struct UgpHyperParams *params,
                                      double *out);

// Unbiased stochastic estimate of the log-space gradient with `num_probes`
// Rademacher probes and early-stopped solves.
//
// # Safety
// `out` must hold 3 doubles.
enum UgpStatus ugp_stochastic_log_gradient(const struct UgpDataset *ds,
                                           const struct UgpHyperParams *params,
                                           size_t num_probes,
                                           double q,
                                           double beta,
                                           uint64_t seed,
                                           double *out);

// Condition number of `K(θ)`: dense eigenvalues when `exact`, otherwise a
// 100-step Lanczos estimate.
//
// # Safety
// `out` must be writable.
enum UgpStatus ugp_condition_number(const struct UgpDataset *ds,
                                    const struct UgpHyperParams *params,
                                    bool exact,
                                    double *out);

// Predictive mean and variance at `m` test inputs (`m × d`, row-major, in the
// same units as the stored inputs). Outputs are in the stored label units.
//
// # Safety
// `x_star` must hold `m * d` doubles, `mean` and `variance` `m` doubles each.
enum UgpStatus ugp_predict(const struct UgpDataset *ds,
                           const struct UgpHyperParams *params,
                           const double *x_star,
                           size_t m,
                           double *mean,
                           double *variance);

// Converts standardized predictive moments back to original label units.
// Fails with `UGP_STATUS_INVALID_ARGUMENT` for unstandardized datasets.
//
// # Safety
// `mean` and `variance` must hold `m` doubles each; they are updated in place.
enum UgpStatus ugp_dataset_unscale(const struct UgpDataset *ds,
                                   double *mean,
                                   double *variance,
                                   size_t m);

// Maximum a posteriori parameters from `init` by gradient ascent in log space.
//
// # Safety
// `out` must be writable; `converged` may be NULL.
enum UgpStatus ugp_map_estimate(const struct UgpDataset *ds,
                                const struct UgpPriors *prior,
                                const struct UgpHyperParams *init,
                                size_t max_steps,
                                struct UgpHyperParams *out,
                                bool *converged);

// Defaults: ε from 0.1 to 1e-4 over 40000 iterations, γ = 1, freeze threshold
// 0.002 checked every 100 iterations, 4 probes redrawn every 20 iterations,
// identity preconditioner, q = 0.01, β = 1, inner residual 1e-8, warm starts on.
//
// # Safety
// `out` must be writable.
enum UgpStatus ugp_sgld_options_default(struct UgpSgldOptions *out);

// Runs one preconditioned SGLD chain from log-space `init_psi`. If the chain
// diverges, the samples produced so far are still returned through `out` and
// the status reports the failure.
//
// # Safety
// `init_psi` must hold 3 doubles; `out` must be writable. A non-NULL `*out`
// must be released with [`ugp_chain_free`].
enum UgpStatus ugp_sgld_run(const struct UgpDataset *ds,
                            const struct UgpPriors *prior,
                            const struct UgpSgldOptions *options,
                            const double *init_psi,
                            uint64_t seed,
                            struct UgpChain **out);

// Runs one adaptive random-walk Metropolis–Hastings chain on the exact
// posterior (dense, capacity-guarded). The first `burn_in` samples are marked
// as burn-in.
//
// # Safety
// `out` must be writable; release the chain with [`ugp_chain_free`].
enum UgpStatus ugp_mh_run(const struct UgpDataset *ds,
                          const struct UgpPriors *prior,
                          const struct UgpHyperParams *init,
                          size_t num_iters,
                          size_t burn_in,
                          double proposal_scale,
                          uint64_t seed,
                          struct UgpChain **out);

// Number of samples, or 0 for NULL.
//
// # Safety
// `chain` must be NULL or a live chain handle.
size_t ugp_chain_len(const struct UgpChain *chain);

// Index of the first post-burn-in sample.
//
// # Safety
// `chain` must be NULL or a live chain handle.
size_t ugp_chain_burn_in(const struct UgpChain *chain);

// Iteration at which the step size froze, or -1 if it never did.
//
// # Safety
// `chain` must be NULL or a live chain handle.
int64_t ugp_chain_frozen_at(const struct UgpChain *chain);

// Copies all samples (`len × 3`, log space) into `out`, which must hold at
// least `capacity` doubles.
//
// # Safety
// `out` must be valid for `capacity` doubles.
enum UgpStatus ugp_chain_samples(const struct UgpChain *chain, double *out, size_t capacity);

// # Safety
// `chain` must be NULL or a handle not yet freed.
void ugp_chain_free(struct UgpChain *chain);

// Potential scale reduction factor of one scalar quantity over `num_chains`
// chains of length `len`, stored one chain after another. `split` halves each
// chain first. An infinite value means zero within-chain variance.
//
// # Safety
// `samples` must hold `num_chains * len` doubles; `out` must be writable.
enum UgpStatus ugp_psrf(const double *samples,
                        size_t num_chains,
                        size_t len,
                        bool split,
                        double *out);

// Effective sample size of one chain of length `len`.
//
// # Safety
// `samples` must hold `len` doubles; `out` must be writable.
enum UgpStatus ugp_effective_sample_size(const double *samples, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ULISSE_GP_H */
