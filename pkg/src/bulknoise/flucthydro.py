"""Gaussian fluctuation fields around the hydrodynamic background.

Closed-form stationary covariances of the deformation field R and the energy
field Y, the resulting limit ``s_inf`` of the normalised energy variance, an
Euler-Maruyama simulator for the linear SPDEs

    dR = g^{-1} R_xx dt - d_x(c dW1)
    dY = (2g)^{-1} (Y + u R)_xx dt - d_x(c u dW1 + c sqrt(T/2) dW2),   c = sqrt(2 T / g),

and estimators of the microscopic fluctuation fields from chain snapshots.

Discretisation: nodes ``x_i = i/M``; both fields vanish at ``x = 0, 1``; the
noise lives on the ``M`` cell faces and enters through the discrete
divergence, so the divergence-gradient pair reproduces the grid Dirichlet
Laplacian exactly and the equilibrium covariance of the semi-discrete system is
``T^2 / dx`` times the identity.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import solve_banded, solve_continuous_lyapunov, solve_discrete_lyapunov

from .chain import site_energies
from .kernels import get_backend
from .stats import batch_means

QUAD_MESH = 2000


class SPDEInstabilityError(RuntimeError):
    """Raised when the explicit scheme is (or becomes) unstable."""

    def __init__(self, message, suggested_dt):
        super().__init__(f"{message}; try dt <= {suggested_dt:.3g}")
        self.suggested_dt = suggested_dt


@dataclass(frozen=True)
class FieldCovariance:
    r_variance: float
    y_variance: float
    cross: float = 0.0


def grid(mesh: int) -> np.ndarray:
    if mesh < 2:
        raise ValueError("mesh must be >= 2")
    return np.linspace(0.0, 1.0, mesh + 1)


def _sample(f, x):
    if callable(f):
        v = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()
    elif np.ndim(f) == 0:
        v = np.full(x.shape, float(f))
    else:
        v = np.asarray(f, dtype=float)
        if v.shape != x.shape:
            raise ValueError(f"test function has {v.size} values, grid has {x.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("test function values must be finite")
    return v


def _integrate(values, x):
    if (x.size - 1) % 2 == 0:
        return float(simpson(values, x=x))
    return float(np.trapezoid(values, x))


def inv_dirichlet_laplacian(g) -> np.ndarray:
    """Solve ``-w'' = g``, ``w(0) = w(1) = 0`` on the uniform grid carrying ``g``.

    Second-order central differences; exact for quadratic ``w``.
    """
    g = np.asarray(g, dtype=float)
    m = g.size - 1
    if m < 2:
        raise ValueError("need at least 3 grid nodes")
    dx = 1.0 / m
    ab = np.zeros((3, m - 1))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[2, :-1] = -1.0
    w = np.zeros(m + 1)
    w[1:-1] = solve_banded((1, 1), ab, dx * dx * g[1:-1])
    return w


def linear_profile(x, temp_left, temp_right):
    return temp_left + (temp_right - temp_left) * np.asarray(x, dtype=float)


def ness_field_covariance(F, G, temp_left: float, temp_right: float, mesh: int = QUAD_MESH) -> FieldCovariance:
    """Stationary variances of ``R(F)`` and ``Y(G)`` around the linear profile.

    ``F`` and ``G`` are callables or arrays on ``mesh + 1`` nodes. Integrals use
    Simpson's rule on an even mesh, which is exact for the polynomial cases.
    """
    if temp_left <= 0 or temp_right <= 0:
        raise ValueError("temperatures must be positive")
    x = grid(mesh)
    f, g = _sample(F, x), _sample(G, x)
    tb = linear_profile(x, temp_left, temp_right)
    r_var = _integrate(tb * f * f, x)
    long_range = _integrate(g * inv_dirichlet_laplacian(g), x)
    y_var = _integrate(tb**2 * g * g, x) + (temp_left - temp_right) ** 2 * long_range
    return FieldCovariance(r_var, y_var, 0.0)


def s_infinity(temp_left: float, temp_right: float) -> float:
    """Thermodynamic limit of ``N <H;H> / <H>^2`` in the unpinned flip NESS."""
    if temp_left <= 0 or temp_right <= 0:
        raise ValueError("temperatures must be positive")
    d = temp_left - temp_right
    return (4.0 * temp_left * temp_right + 5.0 / 3.0 * d * d) / (temp_left + temp_right) ** 2


def s_infinity_from_fields(temp_left: float, temp_right: float, mesh: int = QUAD_MESH) -> float:
    """Same quantity via ``Var Y(1) / (int T)^2`` (``<H> / N -> (T_L + T_R)/2``)."""
    cov = ness_field_covariance(1.0, 1.0, temp_left, temp_right, mesh)
    return 4.0 * cov.y_variance / (temp_left + temp_right) ** 2


# --------------------------------------------------------------------------- SPDE


@dataclass
class _Coefficients:
    dx: float
    d_r: float
    d_y: float
    u: np.ndarray          # interior nodes
    sig_r: np.ndarray      # faces, W1 in the R equation
    sig_yu: np.ndarray     # faces, W1 in the Y equation
    sig_y: np.ndarray      # faces, W2 in the Y equation


def _coefficients(temp_left, temp_right, gamma, mesh, u=None, eps=None, noise=1.0):
    x = grid(mesh)
    dx = 1.0 / mesh
    u_n = np.zeros_like(x) if u is None else _sample(u, x)
    eps_n = linear_profile(x, temp_left, temp_right) + 0.5 * u_n**2 if eps is None else _sample(eps, x)
    temp = eps_n - 0.5 * u_n**2
    if np.any(temp <= 0):
        raise ValueError("background temperature must be positive")
    tf = 0.5 * (temp[1:] + temp[:-1])
    uf = 0.5 * (u_n[1:] + u_n[:-1])
    c = np.sqrt(2.0 * tf / gamma)
    return _Coefficients(dx, 1.0 / gamma, 0.5 / gamma, u_n[1:-1].copy(), noise * c,
                         noise * c * uf, noise * c * np.sqrt(0.5 * tf))


def _lap(v, dx):
    # Dirichlet-zero Laplacian on interior nodes, last axis
    out = -2.0 * v
    out[..., 1:] += v[..., :-1]
    out[..., :-1] += v[..., 1:]
    return out / (dx * dx)


def _div(flux, dx):
    # faces (M) -> interior nodes (M-1)
    return (flux[..., 1:] - flux[..., :-1]) / dx


def max_stable_dt(gamma: float, mesh: int, cfl: float = 0.5) -> float:
    """Explicit-Euler bound ``dt * D_max / dx^2 <= cfl`` (``D_max = 1/gamma``)."""
    return cfl * gamma / mesh**2


def _matrices(co: _Coefficients):
    n = co.u.size
    lap = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / co.dx**2
    div = (np.eye(n, n + 1, 1) - np.eye(n, n + 1)) / co.dx
    z = np.zeros((n, n))
    drift = np.block([[co.d_r * lap, z], [co.d_y * lap @ np.diag(co.u), co.d_y * lap]])
    b1 = np.vstack([div * co.sig_r, div * co.sig_yu])
    b2 = np.vstack([np.zeros((n, n + 1)), div * co.sig_y])
    diff = (b1 @ b1.T + b2 @ b2.T) / co.dx
    return drift, diff


def spde_stationary_covariance(temp_left, temp_right, gamma, mesh, dt=None, u=None, eps=None):
    """Exact stationary covariance of the discretised SPDE, state ``(R_1.., Y_1..)``.

    ``dt=None`` gives the semi-discrete (continuous-time) covariance; otherwise
    the covariance of the Euler-Maruyama chain with that step.
    """
    co = _coefficients(temp_left, temp_right, gamma, mesh, u, eps)
    drift, diff = _matrices(co)
    if dt is None:
        return solve_continuous_lyapunov(drift, -diff)
    step = np.eye(drift.shape[0]) + dt * drift
    return solve_discrete_lyapunov(step, dt * diff)


def functional_weights(F, mesh):
    """Weights ``dx * F(x_i)`` on interior nodes, so that ``X(F) = w @ field``."""
    x = grid(mesh)
    return _sample(F, x)[1:-1] / mesh


@dataclass
class SPDEResult:
    r_variance: list
    y_variance: list
    cross: list
    test_names: list
    mesh: int
    dt: float
    n_samples: int
    replicas: int
    config: dict = field(default_factory=dict)

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "test_function", "value", "std_error", "n_batches"])
        for name, r, y, c in zip(self.test_names, self.r_variance, self.y_variance, self.cross):
            for q, e in (("r_variance", r), ("y_variance", y), ("cross", c)):
                w.writerow([q, name, repr(e.value), repr(e.std_error), e.n_batches])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def spde_simulate(temp_left, temp_right, gamma, mesh, dt=None, t_final=100.0, seed=0, replicas=16,
                  tests=None, t_burn=None, sample_every=None, u=None, eps=None, noise=1.0,
                  init=None, chunk=256, n_batches=32, return_fields=False, backend=None):
    """Euler-Maruyama integration of the (R, Y) system; stationary variance estimates.

    Parameters
    ----------
    tests : dict name -> test function, default ``{"1": 1, "sin": sin(pi x)}``
    dt : float, optional
        Defaults to 0.4 of the explicit stability bound.
    t_burn : float, optional
        Discarded relaxation time, default five slowest relaxation times of Y.
    noise : float
        Multiplies all noise amplitudes (``0`` gives the deterministic heat flow).
    init : array, optional
        Initial ``(R, Y)`` interior values, shape ``(2, M-1)``; zero by default.
    backend : {"cython", "python"}, optional
        Kernel implementation; both consume the same random numbers.

    Returns
    -------
    SPDEResult, or ``(SPDEResult, final_fields)`` when ``return_fields`` is set.
    Each replica consumes its own stream ``SeedSequence(seed, spawn_key=(r,))``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    co = _coefficients(temp_left, temp_right, gamma, mesh, u, eps, noise)
    limit = max_stable_dt(gamma, mesh)
    if dt is None:
        dt = 0.8 * limit
    if dt > limit:
        raise SPDEInstabilityError(f"dt={dt:.3g} exceeds the explicit stability bound", 0.8 * limit)
    if tests is None:
        tests = {"1": 1.0, "sin": lambda x: np.sin(np.pi * x)}
    names = list(tests)
    wts = np.array([functional_weights(tests[k], mesh) for k in names])      # (k, M-1)
    if t_burn is None:
        t_burn = 5.0 / (np.pi**2 * co.d_y)
    if sample_every is None:
        sample_every = max(1, int(round(0.01 / (np.pi**2 * co.d_y) / dt)))
    n_burn = int(np.ceil(t_burn / dt))
    n_steps = int(np.ceil(t_final / dt))
    n = mesh - 1
    fields = np.zeros((replicas, 2, n))
    chunk = max(chunk, sample_every)
    if init is not None:
        fields[:] = np.asarray(init, dtype=float).reshape(2, n)
    rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))
            for r in range(replicas)]
    amp = np.sqrt(dt / co.dx)
    scale = 1e3 * np.sqrt(max(temp_left, temp_right) ** 2 / co.dx) * np.sqrt(n) + 1e3 * (
        np.abs(fields).max() + 1.0)
    kern = get_backend(backend)
    buf = np.empty((chunk // sample_every + 1, replicas, 2, len(names)))
    zbuf = np.empty((replicas, chunk, 2, mesh))
    samples = []
    total = n_burn + n_steps
    k = 0
    while k < total:
        m = min(chunk, total - k)
        z = zbuf[:, :m] if m == chunk else np.empty((replicas, m, 2, mesh))
        for i, g in enumerate(rngs):
            g.standard_normal(out=z[i])
        got = kern.spde_chunk(fields, z, dt, co.d_r, co.d_y, co.dx, amp, co.u, co.sig_r, co.sig_yu,
                              co.sig_y, k + 1, n_burn, sample_every, wts, buf)
        samples.append(buf[:got].copy())
        k += m
        peak = np.abs(fields).max()
        if not np.isfinite(peak) or peak > scale:
            raise SPDEInstabilityError(f"field norm blew up at t={k * dt:.4g}", 0.5 * dt)
    samples = np.concatenate(samples)
    if len(samples) < 2 * n_batches:
        raise ValueError("t_final too short for the requested batching; increase t_final")
    x = samples                                         # (S, R, 2, k)
    r_est, y_est, c_est = [], [], []
    for i in range(len(names)):
        xr, xy = x[:, :, 0, i], x[:, :, 1, i]
        r_est.append(batch_means((xr * xr).mean(axis=1), n_batches))
        y_est.append(batch_means((xy * xy).mean(axis=1), n_batches))
        c_est.append(batch_means((xr * xy).mean(axis=1), n_batches))
    cfg = dict(temp_left=temp_left, temp_right=temp_right, gamma=gamma, mesh=mesh, dt=dt,
               t_final=t_final, t_burn=t_burn, seed=seed, replicas=replicas, sample_every=sample_every)
    res = SPDEResult(r_est, y_est, c_est, names, mesh, dt, len(samples), replicas, cfg)
    return (res, fields) if return_fields else res


# ------------------------------------------------------------- microscopic fields


def microscopic_fluctuation_fields(snapshots, n_sites: int, F=None, G=None, background=None,
                                   temp_left=None, temp_right=None, pinning: float = 0.0):
    """``R^N(F)`` and ``Y^N(G)`` for chain snapshots of shape ``(..., 2N)``.

    ``R^N(F) = N^{-1/2} sum_j F(j/N) [r_j - u(j/N)]`` and likewise for ``Y``
    with the local energies ``E_j``, ``j = 1..N``. The background is a
    :class:`~bulknoise.hydro.HydroState` whose mesh is a multiple of ``N`` (site
    ``j`` sits on node ``j M/N``), or the stationary ``(0, T_bar)`` when omitted.
    """
    snaps = np.asarray(snapshots, dtype=float)
    if snaps.shape[-1] != 2 * n_sites:
        raise ValueError(f"snapshots have {snaps.shape[-1]} coordinates, expected {2 * n_sites}")
    xs = np.arange(1, n_sites + 1) / n_sites
    if background is None:
        if temp_left is None or temp_right is None:
            raise ValueError("give a background state or the bath temperatures")
        u_bg = np.zeros(n_sites)
        eps_bg = linear_profile(xs, temp_left, temp_right)
    else:
        mesh = background.mesh
        if mesh % n_sites:
            raise ValueError(f"hydro mesh M={mesh} is not a multiple of N={n_sites}")
        idx = np.arange(1, n_sites + 1) * (mesh // n_sites)
        u_bg, eps_bg = background.u[idx], background.eps[idx]
    f = np.zeros(n_sites) if F is None else _sample(F, xs)
    g = np.zeros(n_sites) if G is None else _sample(G, xs)
    q, p = snaps[..., :n_sites], snaps[..., n_sites:]
    qn = np.concatenate([q[..., 1:], np.zeros(q.shape[:-1] + (1,))], axis=-1)
    r = qn - q                                          # r_j = q_{j+1} - q_j, j = 1..N
    e = site_energies(q, p, pinning)
    scale = 1.0 / np.sqrt(n_sites)
    return scale * ((r - u_bg) @ f), scale * ((e - eps_bg) @ g)
