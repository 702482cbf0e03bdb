"""Crank-Nicolson solver for the deformation/energy hydrodynamic equations

    u_t   = (1/g) u_xx,                 u_x(0) = u_x(1) = 0
    eps_t = (1/(2g)) (eps + u^2/2)_xx,  (eps - u^2/2)(0) = T_L, (eps - u^2/2)(1) = T_R

on ``M + 1`` uniform nodes of [0, 1]. ``g`` is the momentum damping rate of
the bulk noise (twice the flip rate of the chain). The u equation does not
involve eps, so u is advanced first and the eps boundary values at the new
time level are known exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded


class HydroError(RuntimeError):
    pass


@dataclass
class HydroState:
    u: np.ndarray
    eps: np.ndarray
    time: float = 0.0
    gamma: float = 1.0
    temp_left: float = 1.0
    temp_right: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.eps = np.asarray(self.eps, dtype=float)
        if self.u.shape != self.eps.shape or self.u.ndim != 1 or self.u.size < 3:
            raise ValueError("u and eps must be 1-d grids of equal length >= 3")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.eps))):
            raise ValueError("fields must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")

    @property
    def mesh(self) -> int:
        return self.u.size - 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.u.size)

    @property
    def temperature(self) -> np.ndarray:
        return self.eps - 0.5 * self.u**2

    def enforce_boundary(self) -> "HydroState":
        eps = self.eps.copy()
        eps[0] = self.temp_left + 0.5 * self.u[0] ** 2
        eps[-1] = self.temp_right + 0.5 * self.u[-1] ** 2
        return replace(self, eps=eps)


def linear_temperature(x, temp_left: float, temp_right: float) -> np.ndarray:
    return temp_left + (temp_right - temp_left) * np.asarray(x, dtype=float)


def stationary_state(mesh: int, gamma: float, temp_left: float, temp_right: float) -> HydroState:
    x = np.linspace(0.0, 1.0, mesh + 1)
    return HydroState(np.zeros_like(x), linear_temperature(x, temp_left, temp_right), 0.0,
                      gamma, temp_left, temp_right)


def _laplacian(v, dx):
    out = np.zeros_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx**2
    return out


def _neumann_laplacian(v, dx):
    out = _laplacian(v, dx)
    out[0] = 2.0 * (v[1] - v[0]) / dx**2
    out[-1] = 2.0 * (v[-2] - v[-1]) / dx**2
    return out


def _step_u(u, a, dx, theta=0.5):
    # (I - theta a L_N) u+ = (I + (1-theta) a L_N) u with ghost-node Neumann rows
    m = u.size
    c = theta * a / dx**2
    ab = np.zeros((3, m))
    ab[0, 1:] = -c
    ab[1, :] = 1.0 + 2.0 * c
    ab[2, :-1] = -c
    ab[0, 1] = -2.0 * c
    ab[2, -2] = -2.0 * c
    rhs = u + (1.0 - theta) * a * _neumann_laplacian(u, dx)
    return solve_banded((1, 1), ab, rhs)


def _step_eps(eps, v_old, v_new, left, right, a, dx, theta=0.5):
    # theta-scheme for eps with the source a L((1-theta) v_old + theta v_new), Dirichlet ends
    m = eps.size
    c = theta * a / dx**2
    k = m - 2
    rhs = eps[1:-1] + a * (1.0 - theta) * _laplacian(eps + v_old, dx)[1:-1] \
        + a * theta * _laplacian(v_new, dx)[1:-1]
    rhs[0] += c * left
    rhs[-1] += c * right
    ab = np.zeros((3, k))
    ab[0, 1:] = -c
    ab[1, :] = 1.0 + 2.0 * c
    ab[2, :-1] = -c
    out = np.empty(m)
    out[0], out[-1] = left, right
    out[1:-1] = solve_banded((1, 1), ab, rhs)
    return out


def hydro_step(hs: HydroState, dt_macro: float, theta: float = 0.5) -> HydroState:
    """One theta-scheme step; ``theta=0.5`` is Crank-Nicolson, ``theta=1`` backward Euler.

    Both are unconditionally stable for ``theta >= 1/2``.
    """
    if not 0.5 <= theta <= 1.0:
        raise ValueError("theta must lie in [0.5, 1]")
    if dt_macro <= 0:
        raise ValueError("dt_macro must be > 0")
    dx = 1.0 / hs.mesh
    a = dt_macro / hs.gamma
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            u_new = _step_u(hs.u, a, dx, theta)
            left = hs.temp_left + 0.5 * u_new[0] ** 2
            right = hs.temp_right + 0.5 * u_new[-1] ** 2
            eps_new = _step_eps(hs.eps, 0.5 * hs.u**2, 0.5 * u_new**2, left, right, 0.5 * a,
                                dx, theta)
    except ValueError:      # solve_banded refuses non-finite input
        u_new = eps_new = np.array([np.nan])
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(eps_new))):
        raise HydroError(f"hydrodynamic fields became non-finite at t={hs.time + dt_macro:.6g}")
    return replace(hs, u=u_new, eps=eps_new, time=hs.time + dt_macro)


def hydro_evolve(hs: HydroState, t_final: float, dt_macro: float, sample_every: float | None = None,
                 startup: int = 2):
    """Integrate to ``t_final``; returns the list of sampled states (first and last included).

    The first ``startup`` steps are each replaced by two backward-Euler half
    steps (Rannacher start-up), which damps the grid-scale oscillations that
    plain Crank-Nicolson leaves behind for rough or BC-incompatible data
    without lowering the global order.
    """
    out = [hs]
    n_steps = int(np.ceil((t_final - hs.time) / dt_macro - 1e-12))
    if n_steps <= 0:
        return out
    dt = (t_final - hs.time) / n_steps
    next_sample = hs.time + (sample_every if sample_every else np.inf)
    state = hs
    for k in range(n_steps):
        if k < startup:
            state = hydro_step(hydro_step(state, 0.5 * dt, 1.0), 0.5 * dt, 1.0)
        else:
            state = hydro_step(state, dt)
        if state.time >= next_sample - 1e-12 and k < n_steps - 1:
            out.append(state)
            next_sample += sample_every
    out.append(state)
    return out


def trapezoid(values, dx) -> float:
    v = np.asarray(values, dtype=float)
    return float(dx * (v.sum() - 0.5 * (v[0] + v[-1])))


def snapshots_to_csv(states, path=None, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "u", "eps"])
    for s in states:
        for x, u, e in zip(s.x, s.u, s.eps):
            w.writerow([repr(float(s.time)), repr(float(x)), repr(float(u)), repr(float(e))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
