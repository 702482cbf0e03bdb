"""NumPy fallback for the chain integrator kernel.

Performs the same floating-point operations per site as ``_kernels.pyx`` and
consumes the same pre-generated random numbers, so both backends follow the
same trajectory (sampled energies may differ in the last bits because of the
summation order).
"""

import numpy as np

BACKEND = "python"


def compute_force(q, out, stiff):
    left = np.concatenate(([0.0], q[:-1]))
    right = np.concatenate((q[1:], [0.0]))
    out[:] = (left + right) - stiff * q


def _noise(p, slot, bath_sites, bath_decay, bath_amp, bath_noise, flip_sites, flip_events, ev_ptr):
    if bath_sites.size:
        p[bath_sites] = bath_decay * p[bath_sites] + bath_amp * bath_noise[slot]
    nf = flip_sites.size
    if nf:
        end = np.searchsorted(flip_events, (slot + 1) * nf, side="left")
        if end > ev_ptr:
            s = flip_sites[flip_events[ev_ptr:end] - slot * nf]
            p[s] = -p[s]
        ev_ptr = end
    return ev_ptr


def sample_observables(q, p, nu2, sums_p2, sums_e, sums_j):
    r = np.diff(np.concatenate(([0.0], q, [0.0])))
    pp = np.concatenate(([0.0], p, [0.0]))
    r2 = r * r
    sums_p2 += p * p
    sums_e += 0.5 * p * p + 0.5 * nu2 * q * q + 0.25 * r2[:-1] + 0.25 * r2[1:]
    sums_j += -0.5 * r * (pp[1:] + pp[:-1])
    return float(np.sum(0.5 * p * p + 0.5 * nu2 * q * q) + np.sum(0.5 * r2))


def run_chunk(q, p, force, n_steps, dt, nu2, bath_sites, bath_decay, bath_amp,
              bath_noise, flip_sites, flip_events, stride, h_out, sums_p2, sums_e,
              sums_j, snap_stride, snaps):
    """Advance ``n_steps`` integrator steps in place.

    Each step is: noise half step (slot ``2k``), velocity Verlet, noise half
    step (slot ``2k + 1``). ``force`` must hold the force at the incoming
    ``q`` and is left holding the force at the outgoing ``q``.
    ``flip_events`` are sorted flat indices ``slot * len(flip_sites) + i``.
    Every ``stride`` steps the energy is written to ``h_out`` and the profile
    sums are accumulated; every ``snap_stride`` steps (if > 0) the state is
    copied to ``snaps``. Returns the number of flip events consumed.
    """
    n = q.size
    half = 0.5 * dt
    stiff = 2.0 + nu2
    ev_ptr = 0
    n_samples = 0
    n_snaps = 0
    for k in range(n_steps):
        ev_ptr = _noise(p, 2 * k, bath_sites, bath_decay, bath_amp, bath_noise,
                        flip_sites, flip_events, ev_ptr)
        p += half * force
        q += dt * p
        compute_force(q, force, stiff)
        p += half * force
        ev_ptr = _noise(p, 2 * k + 1, bath_sites, bath_decay, bath_amp, bath_noise,
                        flip_sites, flip_events, ev_ptr)
        if (k + 1) % stride == 0:
            h_out[n_samples] = sample_observables(q, p, nu2, sums_p2, sums_e, sums_j)
            n_samples += 1
        if snap_stride > 0 and (k + 1) % snap_stride == 0:
            snaps[n_snaps, :n] = q
            snaps[n_snaps, n:] = p
            n_snaps += 1
    return ev_ptr


def spde_chunk(fields, z, dt, d_r, d_y, dx, amp, u, sig_r, sig_yu, sig_y, first_step, n_burn,
               sample_every, wts, out):
    """Advance ``fields`` (replicas, 2, M-1) through ``len(z)`` Euler-Maruyama steps.

    ``z`` holds standard normals of shape (replicas, steps, 2, M) on cell faces,
    scaled by ``amp``; step ``first_step + s`` is sampled into ``out`` when it is
    past ``n_burn`` and on the ``sample_every`` grid. Returns the number of
    sample slots written.
    """
    h2 = 1.0 / (dx * dx)
    slot = 0
    for s in range(z.shape[1]):
        r = fields[:, 0]
        v = fields[:, 1] + u * r
        w1, w2 = z[:, s, 0], z[:, s, 1]
        flux_r = sig_r * w1
        flux_y = sig_yu * w1 + sig_y * w2
        lap_r = -2.0 * r
        lap_r[:, 1:] += r[:, :-1]
        lap_r[:, :-1] += r[:, 1:]
        lap_v = -2.0 * v
        lap_v[:, 1:] += v[:, :-1]
        lap_v[:, :-1] += v[:, 1:]
        fields[:, 0] = r + dt * d_r * h2 * lap_r - amp / dx * (flux_r[:, 1:] - flux_r[:, :-1])
        fields[:, 1] += dt * d_y * h2 * lap_v - amp / dx * (flux_y[:, 1:] - flux_y[:, :-1])
        step = first_step + s
        if step > n_burn and (step - n_burn) % sample_every == 0:
            out[slot] = fields @ wts.T
            slot += 1
    return slot
