#ifndef KSFLOW_H
#define KSFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsflowStatus {
  KSFLOW_STATUS_OK = 0,
  KSFLOW_STATUS_NULL_POINTER = 1,
  KSFLOW_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The run stopped at the step cap before meeting the energy tolerance.
   */
  KSFLOW_STATUS_UNCONVERGED = 3,
  KSFLOW_STATUS_SOLVER_FAILURE = 4,
  /**
   * Results were requested before a successful run.
   */
  KSFLOW_STATUS_NOT_RUN = 5,
  KSFLOW_STATUS_PANIC = 6,
} KsflowStatus;

/**
 * Opaque solver handle.
 */
typedef struct KsflowSolver KsflowSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a solver for the preset `"he"`, `"lih"` or `"ch4"` and stores the
 * handle in `out`. The handle must be released with [`ksflow_solver_free`].
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum KsflowStatus ksflow_solver_new_preset(const char *name, struct KsflowSolver **out);

/**
 * Releases a solver. Null is ignored.
 *
 * # Safety
 * `solver` must be null or a handle from [`ksflow_solver_new_preset`] that
 * has not been freed.
 */
void ksflow_solver_free(struct KsflowSolver *solver);

/**
 * Sets a fixed time step, replacing the preset schedule.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_set_dt(struct KsflowSolver *solver, double dt);

/**
 * Switches to the two-level adaptive step rule.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_set_adaptive_dt(struct KsflowSolver *solver);

/**
 * Enables or disables the Hartree term.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_set_hartree(struct KsflowSolver *solver, bool enabled);

/**
 * Caps the number of interior degrees of freedom.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_set_mesh_budget(struct KsflowSolver *solver, size_t budget);

/**
 * Sets the energy-difference stopping tolerance and the step cap.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_set_stopping(struct KsflowSolver *solver,
                                             double outer_tol,
                                             size_t max_steps);

/**
 * Builds the mesh and runs the flow from the preset's initial orbitals.
 * Returns `Unconverged` when the step cap was hit; the results are
 * available either way.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum KsflowStatus ksflow_solver_run(struct KsflowSolver *solver);

/**
 * Total energy of the final orbitals.
 *
 * # Safety
 * `solver` must be a live handle and `out` writable.
 */
enum KsflowStatus ksflow_solver_energy(const struct KsflowSolver *solver, double *out);

/**
 * Number of completed time steps.
 *
 * # Safety
 * `solver` must be a live handle and `out` writable.
 */
enum KsflowStatus ksflow_solver_step_count(const struct KsflowSolver *solver, size_t *out);

/**
 * Largest Gram deviation over the run, initial state included.
 *
 * # Safety
 * `solver` must be a live handle and `out` writable.
 */
enum KsflowStatus ksflow_solver_orthonormality_error(const struct KsflowSolver *solver,
                                                     double *out);

/**
 * Interior degrees of freedom of the mesh used by the last run.
 *
 * # Safety
 * `solver` must be a live handle and `out` writable.
 */
enum KsflowStatus ksflow_solver_dof_count(const struct KsflowSolver *solver, size_t *out);

/**
 * Copies the per-step energies into `buf` (at most `len` values) and
 * stores the full trace length in `total`. `buf` may be null when `len`
 * is 0, which queries the length only.
 *
 * # Safety
 * `solver` must be a live handle, `buf` valid for `len` writes and
 * `total` writable.
 */
enum KsflowStatus ksflow_solver_energy_trace(const struct KsflowSolver *solver,
                                             double *buf,
                                             size_t len,
                                             size_t *total);

/**
 * The two-level adaptive step for a given last energy drop.
 */
double ksflow_adaptive_dt(double last_energy_drop);

/**
 * External potential `-Σ Z_j / |p - R_j|` of `count` nuclei. `charges`
 * holds `count` values and `positions` `3 * count` coordinates.
 *
 * # Safety
 * The pointers must be valid for the stated lengths and `out` writable.
 */
enum KsflowStatus ksflow_external_potential(const double *charges,
                                            const double *positions,
                                            size_t count,
                                            const double *point,
                                            double *out);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to fit, into `buf`. Returns the full message length without
 * the terminator; pass a null `buf` to query it.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t ksflow_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSFLOW_H */
