# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled chain integrator kernel. Same contract as ``_kernels_py.run_chunk``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline void _force(double[::1] q, double[::1] out, double stiff, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double left, right
    for j in range(n):
        left = q[j - 1] if j > 0 else 0.0
        right = q[j + 1] if j < n - 1 else 0.0
        out[j] = (left + right) - stiff * q[j]


def compute_force(double[::1] q, double[::1] out, double stiff):
    _force(q, out, stiff, q.shape[0])


cdef inline Py_ssize_t _noise(double[::1] p, Py_ssize_t slot, const long[::1] bath_sites,
                              const double[::1] bath_decay, const double[::1] bath_amp,
                              const double[:, ::1] bath_noise, const long[::1] flip_sites,
                              const long[::1] flip_events, Py_ssize_t ev_ptr) noexcept nogil:
    cdef Py_ssize_t b, s
    cdef Py_ssize_t nb = bath_sites.shape[0]
    cdef Py_ssize_t nf = flip_sites.shape[0]
    cdef Py_ssize_t n_ev = flip_events.shape[0]
    cdef long limit = (slot + 1) * nf
    for b in range(nb):
        s = bath_sites[b]
        p[s] = bath_decay[b] * p[s] + bath_amp[b] * bath_noise[slot, b]
    while ev_ptr < n_ev and flip_events[ev_ptr] < limit:
        s = flip_sites[flip_events[ev_ptr] - slot * nf]
        p[s] = -p[s]
        ev_ptr += 1
    return ev_ptr


cdef inline double _sample(double[::1] q, double[::1] p, double nu2, double[::1] sums_p2,
                           double[::1] sums_e, double[::1] sums_j, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double h_site = 0.0, h_bond = 0.0
    cdef double r, r_prev, qj, pj, q_prev = 0.0, p_prev = 0.0
    # bond 0
    r_prev = q[0]
    h_bond += 0.5 * r_prev * r_prev
    sums_j[0] += -0.5 * r_prev * (p[0] + 0.0)
    for j in range(n):
        qj = q[j]
        pj = p[j]
        if j < n - 1:
            r = q[j + 1] - qj
            sums_j[j + 1] += -0.5 * r * (p[j + 1] + pj)
        else:
            r = 0.0 - qj
            sums_j[n] += -0.5 * r * (0.0 + pj)
        h_bond += 0.5 * r * r
        h_site += 0.5 * pj * pj + 0.5 * nu2 * qj * qj
        sums_p2[j] += pj * pj
        sums_e[j] += 0.5 * pj * pj + 0.5 * nu2 * qj * qj + 0.25 * (r_prev * r_prev) + 0.25 * (r * r)
        r_prev = r
    return h_site + h_bond


def run_chunk(double[::1] q, double[::1] p, double[::1] force, Py_ssize_t n_steps, double dt,
              double nu2, const long[::1] bath_sites, const double[::1] bath_decay,
              const double[::1] bath_amp, const double[:, ::1] bath_noise,
              const long[::1] flip_sites, const long[::1] flip_events, Py_ssize_t stride,
              double[::1] h_out, double[::1] sums_p2, double[::1] sums_e, double[::1] sums_j,
              Py_ssize_t snap_stride, double[:, ::1] snaps):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t k, j
    cdef Py_ssize_t ev_ptr = 0, n_samples = 0, n_snaps = 0
    cdef double half = 0.5 * dt
    cdef double stiff = 2.0 + nu2
    with nogil:
        for k in range(n_steps):
            ev_ptr = _noise(p, 2 * k, bath_sites, bath_decay, bath_amp, bath_noise,
                            flip_sites, flip_events, ev_ptr)
            for j in range(n):
                p[j] += half * force[j]
            for j in range(n):
                q[j] += dt * p[j]
            _force(q, force, stiff, n)
            for j in range(n):
                p[j] += half * force[j]
            ev_ptr = _noise(p, 2 * k + 1, bath_sites, bath_decay, bath_amp, bath_noise,
                            flip_sites, flip_events, ev_ptr)
            if (k + 1) % stride == 0:
                h_out[n_samples] = _sample(q, p, nu2, sums_p2, sums_e, sums_j, n)
                n_samples += 1
            if snap_stride > 0 and (k + 1) % snap_stride == 0:
                for j in range(n):
                    snaps[n_snaps, j] = q[j]
                    snaps[n_snaps, n + j] = p[j]
                n_snaps += 1
    return ev_ptr


def spde_chunk(double[:, :, ::1] fields, const double[:, :, :, ::1] z, double dt, double d_r,
               double d_y, double dx, double amp, const double[::1] u, const double[::1] sig_r,
               const double[::1] sig_yu, const double[::1] sig_y, long first_step, long n_burn,
               long sample_every, const double[:, ::1] wts, double[:, :, :, ::1] out):
    """Euler-Maruyama steps of the (R, Y) system for every replica; see ``_kernels_py``."""
    cdef Py_ssize_t m = z.shape[1], n_rep = fields.shape[0], n = fields.shape[2]
    cdef Py_ssize_t n_tests = wts.shape[0]
    cdef Py_ssize_t rep, s, i, k, slot
    cdef double h2 = 1.0 / (dx * dx), idx = amp / dx
    cdef double left, right, vl, vr, vc, fl, fr, acc_r, acc_y
    cdef long step
    cdef double[::1] r0 = np.empty(n), v0 = np.empty(n)
    cdef Py_ssize_t written = 0
    with nogil:
        for rep in range(n_rep):
            slot = 0
            for s in range(m):
                for i in range(n):
                    r0[i] = fields[rep, 0, i]
                    v0[i] = fields[rep, 1, i] + u[i] * r0[i]
                for i in range(n):
                    left = r0[i - 1] if i > 0 else 0.0
                    right = r0[i + 1] if i < n - 1 else 0.0
                    fl = sig_r[i] * z[rep, s, 0, i]
                    fr = sig_r[i + 1] * z[rep, s, 0, i + 1]
                    fields[rep, 0, i] = r0[i] + dt * d_r * h2 * (left - 2.0 * r0[i] + right) - idx * (fr - fl)
                    vl = v0[i - 1] if i > 0 else 0.0
                    vr = v0[i + 1] if i < n - 1 else 0.0
                    vc = v0[i]
                    fl = sig_yu[i] * z[rep, s, 0, i] + sig_y[i] * z[rep, s, 1, i]
                    fr = sig_yu[i + 1] * z[rep, s, 0, i + 1] + sig_y[i + 1] * z[rep, s, 1, i + 1]
                    fields[rep, 1, i] += dt * d_y * h2 * (vl - 2.0 * vc + vr) - idx * (fr - fl)
                step = first_step + s
                if step > n_burn and (step - n_burn) % sample_every == 0:
                    for k in range(n_tests):
                        acc_r = 0.0
                        acc_y = 0.0
                        for i in range(n):
                            acc_r = acc_r + wts[k, i] * fields[rep, 0, i]
                            acc_y = acc_y + wts[k, i] * fields[rep, 1, i]
                        out[slot, rep, 0, k] = acc_r
                        out[slot, rep, 1, k] = acc_y
                    slot += 1
            written = slot
    return written
