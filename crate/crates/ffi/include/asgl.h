#ifndef ASGL_H
#define ASGL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AsglStatus {
  ASGL_STATUS_OK = 0,
  ASGL_STATUS_NULL_POINTER = 1,
  ASGL_STATUS_INVALID_ARGUMENT = 2,
  ASGL_STATUS_DIMENSION_MISMATCH = 3,
  ASGL_STATUS_IO = 4,
  ASGL_STATUS_PARSE = 5,
  /**
   * The computation ran but could not produce a result (e.g. weights that need a
   * converged auxiliary fit).
   */
  ASGL_STATUS_RUNTIME = 6,
  ASGL_STATUS_PANIC = 7,
} AsglStatus;

typedef enum AsglScheme {
  ASGL_SCHEME_PCA_D = 0,
  ASGL_SCHEME_PCA1 = 1,
  ASGL_SCHEME_PLS_D = 2,
  ASGL_SCHEME_PLS1 = 3,
  ASGL_SCHEME_UNPENALIZED = 4,
} AsglScheme;

/**
 * Opaque dataset handle.
 */
typedef struct AsglDataset AsglDataset;

/**
 * Opaque fit result handle.
 */
typedef struct AsglFit AsglFit;

/**
 * Opaque group structure handle.
 */
typedef struct AsglGroups AsglGroups;

/**
 * Solver settings; obtain defaults from [`asgl_solver_options_default`].
 */
typedef struct AsglSolverOptions {
  size_t max_iter;
  double tol_kkt;
  double rho;
  bool adaptive_rho;
  bool intercept;
} AsglSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *asgl_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *asgl_last_error_message(void);

struct AsglSolverOptions asgl_solver_options_default(void);

/**
 * Copies an `n x p` row-major matrix and a length-`n` response.
 */
enum AsglStatus asgl_dataset_new(const double *x,
                                 size_t n,
                                 size_t p,
                                 const double *y,
                                 struct AsglDataset **out);

/**
 * Loads a numeric CSV; `response` names the response column (null means `y`).
 */
enum AsglStatus asgl_dataset_load_csv(const char *path,
                                      bool has_header,
                                      const char *response,
                                      struct AsglDataset **out);

size_t asgl_dataset_n(const struct AsglDataset *d);

size_t asgl_dataset_p(const struct AsglDataset *d);

void asgl_dataset_free(struct AsglDataset *d);

/**
 * Groups from a 0-based group index per covariate; indices must cover `0..k`.
 */
enum AsglStatus asgl_groups_new(const size_t *group_of, size_t p, struct AsglGroups **out);

enum AsglStatus asgl_groups_singletons(size_t p, struct AsglGroups **out);

/**
 * Groups each covariate by the principal component of largest absolute loading.
 */
enum AsglStatus asgl_groups_pca_cluster(const struct AsglDataset *d, struct AsglGroups **out);

size_t asgl_groups_k(const struct AsglGroups *g);

/**
 * Writes the 0-based group of each covariate into `out` (length `p`).
 */
enum AsglStatus asgl_groups_assignment(const struct AsglGroups *g, size_t *out, size_t len);

void asgl_groups_free(struct AsglGroups *g);

/**
 * Adaptive weights for `scheme`: writes `p` variable weights into `w_out` and `k` group
 * weights into `v_out` (`w_len` and `v_len` must equal `p` and `k`).
 */
enum AsglStatus asgl_adaptive_weights(const struct AsglDataset *d,
                                      const struct AsglGroups *g,
                                      double tau,
                                      enum AsglScheme scheme,
                                      double gamma1,
                                      double gamma2,
                                      const struct AsglSolverOptions *opts,
                                      double *w_out,
                                      size_t w_len,
                                      double *v_out,
                                      size_t v_len);

/**
 * Smallest lambda with an all-zero solution; null weights mean unit weights.
 */
enum AsglStatus asgl_lambda_max(const struct AsglDataset *d,
                                const struct AsglGroups *g,
                                double tau,
                                const double *w,
                                const double *v,
                                bool intercept,
                                double *out);

/**
 * Fits the weighted sparse group lasso quantile regression. `w` (length `p`) and `v`
 * (length `k`) may be null for unit weights; `opts` may be null for defaults. A fit that
 * stops at the iteration limit still succeeds; check [`asgl_fit_converged`].
 */
enum AsglStatus asgl_fit(const struct AsglDataset *d,
                         const struct AsglGroups *g,
                         double tau,
                         double lambda,
                         double alpha,
                         const double *w,
                         const double *v,
                         const struct AsglSolverOptions *opts,
                         struct AsglFit **out);

size_t asgl_fit_p(const struct AsglFit *f);

/**
 * Copies the `p` coefficients into `out`.
 */
enum AsglStatus asgl_fit_coefficients(const struct AsglFit *f, double *out, size_t len);

double asgl_fit_intercept(const struct AsglFit *f);

double asgl_fit_objective(const struct AsglFit *f);

double asgl_fit_kkt_residual(const struct AsglFit *f);

size_t asgl_fit_iterations(const struct AsglFit *f);

bool asgl_fit_converged(const struct AsglFit *f);

void asgl_fit_free(struct AsglFit *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASGL_H */
