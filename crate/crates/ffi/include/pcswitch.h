#ifndef PCSWITCH_H
#define PCSWITCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum PcsStatus {
  PCS_STATUS_OK = 0,
  PCS_STATUS_NULL_POINTER = 1,
  PCS_STATUS_INVALID_ARGUMENT = 2,
  PCS_STATUS_SOLVER_FAILED = 3,
  PCS_STATUS_PANIC = 4,
} PcsStatus;

/**
 * Opaque device handle.
 */
typedef struct PcsBridge PcsBridge;

/**
 * Response periods.
 */
typedef struct PcsPeriods {
  /**
   * Circulating-current period (A).
   */
  double i_c;
  /**
   * Loop-phase period (rad).
   */
  double phi_c;
  /**
   * Actuation-current period (A).
   */
  double i_z;
  /**
   * Fluxoid quanta per period.
   */
  int64_t quanta;
} PcsPeriods;

/**
 * Solved operating point. Arrays are ordered NW, SW, SE, NE; `mode_phases`
 * is X, Y, Z, C.
 */
typedef struct PcsBiasState {
  double mode_phases[4];
  double junction_phases[4];
  double arm_currents[4];
  double arm_inductances[4];
  double i_c;
  double residual_norm;
} PcsBiasState;

/**
 * Port environment for transmission queries.
 */
typedef struct PcsPort {
  /**
   * Reference impedance (Ω).
   */
  double z0;
  /**
   * Insertion loss applied to |τ| (dB).
   */
  double insertion_loss_db;
} PcsPort;

/**
 * Trapped state.
 */
typedef struct PcsTrap {
  int64_t j;
  double phi_ext;
  double i_c;
} PcsTrap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pcs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pcs_version(void);

/**
 * Creates a device. `beta` is the screening parameter `L_sh I_0 / φ0r`;
 * inductances are in henry.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PcsStatus pcs_bridge_new(double l_sh,
                              double beta,
                              uint32_t n,
                              double l_str,
                              double l_pcs,
                              struct PcsBridge **out);

/**
 * Releases a device. Null is ignored.
 *
 * # Safety
 * `bridge` must come from [`pcs_bridge_new`] and not be used afterwards.
 */
void pcs_bridge_free(struct PcsBridge *bridge);

/**
 * # Safety
 * `bridge` must be a live handle and `out` valid for writes.
 */
enum PcsStatus pcs_bridge_periods(const struct PcsBridge *bridge, struct PcsPeriods *out);

/**
 * Operating point on fluxoid branch `j`.
 *
 * # Safety
 * `bridge` must be a live handle and `out` valid for writes.
 */
enum PcsStatus pcs_solve_fluxoid(const struct PcsBridge *bridge,
                                 int64_t j,
                                 double phi_ext,
                                 double i_z,
                                 struct PcsBiasState *out);

/**
 * Operating point with the circulating current prescribed.
 *
 * # Safety
 * `bridge` must be a live handle and `out` valid for writes.
 */
enum PcsStatus pcs_solve_current(const struct PcsBridge *bridge,
                                 double i_z,
                                 double i_c,
                                 struct PcsBiasState *out);

/**
 * Transmission τ on fluxoid branch `j` at frequency `freq` (Hz).
 *
 * # Safety
 * `bridge` must be a live handle; `tau_re` and `tau_im` valid for writes.
 */
enum PcsStatus pcs_s21_fluxoid(const struct PcsBridge *bridge,
                               int64_t j,
                               double phi_ext,
                               double i_z,
                               double freq,
                               struct PcsPort port,
                               double *tau_re,
                               double *tau_im);

/**
 * Circulating current on branch `j` (A).
 *
 * # Safety
 * `bridge` must be a live handle and `out` valid for writes.
 */
enum PcsStatus pcs_i_c_of_j(const struct PcsBridge *bridge,
                            int64_t j,
                            double phi_ext,
                            double i_z,
                            double *out);

/**
 * Deterministic trap at target current `i_trg` (no failures, sharp
 * boundaries).
 *
 * # Safety
 * `bridge` must be a live handle and `out` valid for writes.
 */
enum PcsStatus pcs_trap_ideal(const struct PcsBridge *bridge, double i_trg, struct PcsTrap *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCSWITCH_H */
