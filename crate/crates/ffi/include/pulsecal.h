/* Copyright 2026 Pulsecal Contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PULSECAL_H
#define PULSECAL_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  // A required pointer argument was NULL.
  PC_STATUS_NULL_POINTER = 1,
  // Bad argument, unreadable file or malformed data.
  PC_STATUS_INVALID_INPUT = 2,
  // Arguments disagree with each other, e.g. different sample periods.
  PC_STATUS_CONSISTENCY = 3,
  // Singular system, failed fit or all-zero spectrum.
  PC_STATUS_NUMERICAL = 4,
  // Internal panic; the library state is otherwise unaffected.
  PC_STATUS_PANIC = 5,
} PcStatus;

// Complex baseband drive on a uniform grid.
typedef struct PcEnvelope PcEnvelope;

// Transfer function sampled on a DFT grid.
typedef struct PcTransfer PcTransfer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next pulsecal call on the same thread.
const char *pc_last_error(void);

// Library version as a static NUL-terminated string.
const char *pc_version(void);

// Envelope of `n` samples at `t0 + k dt` from in-phase and quadrature
// arrays in rad/s.
//
// # Safety
// `i` and `q` are valid for `n` reads; `out` is valid for one write.
enum PcStatus pc_envelope_new(double dt,
                              double t0,
                              const double *i,
                              const double *q,
                              size_t n,
                              struct PcEnvelope **out);

// Sampled Gaussian π pulse of width `t_pw` centered at `center`.
//
// # Safety
// `out` is valid for one write.
enum PcStatus pc_envelope_gaussian_pi(double t_pw,
                                      double center,
                                      double dt,
                                      double t0,
                                      size_t n,
                                      struct PcEnvelope **out);

// Number of samples; 0 for NULL.
//
// # Safety
// `env` is NULL or a live handle.
size_t pc_envelope_len(const struct PcEnvelope *env);

// Copies the samples into `i` and `q`, which must hold `n` values each,
// where `n` equals `pc_envelope_len`.
//
// # Safety
// `env` is a live handle; `i` and `q` are valid for `n` writes.
enum PcStatus pc_envelope_copy_iq(const struct PcEnvelope *env, double *i, double *q, size_t n);

// # Safety
// `env` is NULL or a handle not yet freed.
void pc_envelope_free(struct PcEnvelope *env);

// Distortion-free transfer function of `len` bins.
//
// # Safety
// `out` is valid for one write.
enum PcStatus pc_transfer_identity(double dt, size_t len, struct PcTransfer **out);

// Transfer function of the complex impulse response `re + i im`
// (`n_taps` taps) on a DFT grid of `len` bins.
//
// # Safety
// `re` and `im` are valid for `n_taps` reads; `out` for one write.
enum PcStatus pc_transfer_from_impulse(double dt,
                                       const double *re,
                                       const double *im,
                                       size_t n_taps,
                                       size_t len,
                                       struct PcTransfer **out);

// Loads a transfer function JSON file.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string; `out` is valid for one write.
enum PcStatus pc_transfer_read_json(const char *path_, struct PcTransfer **out);

// Writes a transfer function JSON file atomically.
//
// # Safety
// `h` is a live handle; `path` is a NUL-terminated UTF-8 string.
enum PcStatus pc_transfer_write_json(const struct PcTransfer *h, const char *path_);

// Number of DFT bins; 0 for NULL.
//
// # Safety
// `h` is NULL or a live handle.
size_t pc_transfer_len(const struct PcTransfer *h);

// Tikhonov-regularized inverse; `eps = 0` inverts exactly.
//
// # Safety
// `h` is a live handle; `out` is valid for one write.
enum PcStatus pc_transfer_invert(const struct PcTransfer *h, double eps, struct PcTransfer **out);

// # Safety
// `h` is NULL or a handle not yet freed.
void pc_transfer_free(struct PcTransfer *h);

// Filters `env` through `h`. Use an inverted transfer function to
// predistort. `h` must have at least as many bins as `env` has samples.
//
// # Safety
// `env` and `h` are live handles; `out` is valid for one write.
enum PcStatus pc_apply_transfer(const struct PcEnvelope *env,
                                const struct PcTransfer *h,
                                struct PcEnvelope **out);

// Side length of the sign matrix for size `n` and pulse width `w`
// samples, i.e. `n - w`.
//
// # Safety
// `dim` is valid for one write.
enum PcStatus pc_sign_matrix_dim(size_t n, size_t w, size_t *dim);

// Fills `entries` (row-major, `len = dim * dim`) with the ±1/0 sign
// matrix. Rows and columns both run over periods `w+1..=n`.
//
// # Safety
// `entries` is valid for `len` writes.
enum PcStatus pc_sign_matrix(size_t n, size_t w, int8_t *entries, size_t len);

// Solves for the quadrature tail from θ values (radians) measured at
// periods of `period_steps[k] * dt`. Writes `q_len = n - w` values in
// rad/s; `q[i]` sits `*t0_out + i dt` after the pulse center.
//
// # Safety
// `period_steps` and `theta` are valid for `n_rows` reads, `q` for
// `q_len` writes and `t0_out` for one write.
enum PcStatus pc_solve_quadrature(const size_t *period_steps,
                                  const double *theta,
                                  size_t n_rows,
                                  double dt,
                                  size_t n,
                                  size_t w,
                                  double *q,
                                  size_t q_len,
                                  double *t0_out);

// Evolves the Bloch vector `xyz` (3 values, updated in place) under the
// envelope's drive. `t1` and `t2` in seconds; pass 0 or a negative value
// to disable a relaxation channel.
//
// # Safety
// `env` is a live handle; `xyz` is valid for 3 reads and writes.
enum PcStatus pc_bloch_evolve(const struct PcEnvelope *env, double t1, double t2, double *xyz);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PULSECAL_H */
