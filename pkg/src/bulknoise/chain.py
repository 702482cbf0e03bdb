"""Harmonic chain with fixed ends: parameters, phase-space state, local
observables and the stochastic generator acting on quadratic observables.

Coordinates are ordered ``x = (q_1..q_N, p_1..p_N)``. The boundary particles
``0`` and ``N+1`` are frozen at ``q = p = 0`` and never stored explicitly.

Noise conventions
-----------------
* velocity flips: each flip site carries a Poisson clock of rate ``flip_rate``
  (gamma); a ring sends ``p_j -> -p_j``. On observables this is
  ``gamma * [f(..., -p_j, ...) - f(x)]`` so that a mean momentum decays at
  the rate ``2 * gamma`` (the *damping rate*).
* Langevin baths: ``dp_j = F_j dt - lam p_j dt + sqrt(2 lam T_j) dW_j``.

In the velocity-flip model the baths sit at sites 1 and N and, by default,
flips act on the bulk sites 2..N-1 only. In the self-consistent model every
site carries a bath with friction ``bath_coupling``. With
``bath_coupling == 2 * flip_rate`` the two models share the same closed
second-moment equations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


class Model(str, enum.Enum):
    VELOCITY_FLIP = "VelocityFlip"
    SELF_CONSISTENT = "SelfConsistent"


@dataclass(frozen=True)
class ChainParams:
    n_sites: int
    pinning: float = 0.0
    flip_rate: float = 0.5
    bath_coupling: float = 1.0
    temp_left: float = 1.0
    temp_right: float = 1.0
    model: Model = Model.VELOCITY_FLIP
    flip_at_baths: bool = False

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        if self.pinning < 0:
            raise ValueError("pinning must be >= 0")
        if self.flip_rate < 0 or self.bath_coupling < 0:
            raise ValueError("flip_rate and bath_coupling must be >= 0")
        if self.temp_left <= 0 or self.temp_right <= 0:
            raise ValueError("temperatures must be > 0")

    @property
    def damping_rate(self) -> float:
        """Rate at which the bulk noise damps a mean momentum."""
        if self.model is Model.VELOCITY_FLIP:
            return 2.0 * self.flip_rate
        return self.bath_coupling

    def bath_sites(self) -> np.ndarray:
        """0-based indices of thermostatted sites."""
        n = self.n_sites
        if self.model is Model.SELF_CONSISTENT:
            return np.arange(n)
        return np.array([0, n - 1])

    def flip_sites(self) -> np.ndarray:
        n = self.n_sites
        if self.model is Model.SELF_CONSISTENT or self.flip_rate == 0:
            return np.array([], dtype=int)
        if self.flip_at_baths:
            return np.arange(n)
        return np.arange(1, n - 1)

    def end_profile(self) -> np.ndarray:
        """Bath temperatures for the velocity-flip model, one per bath site."""
        return np.array([self.temp_left, self.temp_right], dtype=float)

    def with_(self, **changes) -> "ChainParams":
        return replace(self, **changes)


@dataclass
class ChainState:
    positions: np.ndarray
    momenta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)
        if self.positions.shape != self.momenta.shape or self.positions.ndim != 1:
            raise ValueError("positions and momenta must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.momenta))):
            raise ValueError("state contains non-finite entries")

    @property
    def n_sites(self) -> int:
        return self.positions.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.positions, self.momenta])

    @classmethod
    def from_vector(cls, x, time=0.0) -> "ChainState":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n].copy(), x[n:].copy(), time)

    @classmethod
    def zeros(cls, n: int) -> "ChainState":
        return cls(np.zeros(n), np.zeros(n))


@dataclass
class LocalObservables:
    """Local fields of a chain state, including the frozen boundary sites.

    ``local_energy[j]`` and ``energy_current[j]`` for j = 0..N+1,
    ``deformation[j] = q_{j+1} - q_j`` for j = 0..N and
    ``deformation_current[j] = -p_j`` for j = 0..N+1. ``energy_current[j]``
    is the energy flowing from site j-1 into site j (positive to the right);
    ``energy_current[0]`` is identically zero.
    """

    local_energy: np.ndarray
    deformation: np.ndarray
    energy_current: np.ndarray
    deformation_current: np.ndarray


def stiffness_matrix(n: int, pinning: float = 0.0) -> np.ndarray:
    """``-Delta_Dirichlet + nu^2`` on n sites."""
    phi = (2.0 + pinning**2) * np.eye(n)
    idx = np.arange(n - 1)
    phi[idx, idx + 1] = -1.0
    phi[idx + 1, idx] = -1.0
    return phi


def difference_matrix(n: int) -> np.ndarray:
    """Maps ``q_1..q_N`` to bond stretches ``r_0..r_N`` with fixed ends."""
    d = np.zeros((n + 1, n))
    d[np.arange(n), np.arange(n)] = 1.0
    d[np.arange(1, n + 1), np.arange(n)] = -1.0
    return d


def energy_quadratic_form(n: int, pinning: float = 0.0) -> np.ndarray:
    """Symmetric W with ``H = x^T W x``."""
    w = np.zeros((2 * n, 2 * n))
    w[:n, :n] = 0.5 * stiffness_matrix(n, pinning)
    w[n:, n:] = 0.5 * np.eye(n)
    return w


def hamiltonian(q, p, pinning: float = 0.0) -> float:
    """Total energy ``sum_{j=0}^{N+1} E_j`` of a fixed-end chain."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    r = np.diff(np.concatenate([[0.0], q, [0.0]]))
    return float(0.5 * p @ p + 0.5 * pinning**2 * q @ q + 0.5 * r @ r)


def total_energy(state: ChainState, params: ChainParams) -> float:
    return hamiltonian(state.positions, state.momenta, params.pinning)


def local_observables(state: ChainState, params: ChainParams) -> LocalObservables:
    q = np.concatenate([[0.0], state.positions, [0.0]])
    p = np.concatenate([[0.0], state.momenta, [0.0]])
    r = np.diff(q)
    r2 = r * r
    energy = 0.5 * p * p + 0.5 * params.pinning**2 * q * q
    energy[:-1] += 0.25 * r2
    energy[1:] += 0.25 * r2
    current = np.zeros_like(p)
    current[1:] = -0.5 * r * (p[1:] + p[:-1])
    return LocalObservables(energy, r, current, -p)


def site_energies(q, p, pinning: float = 0.0) -> np.ndarray:
    """Local energies ``E_1..E_N`` for batches of configurations, shape ``(..., N)``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    pad = np.zeros(q.shape[:-1] + (1,))
    r = np.diff(np.concatenate([pad, q, pad], axis=-1), axis=-1)
    r2 = r * r
    return 0.5 * p * p + 0.5 * pinning**2 * q * q + 0.25 * (r2[..., :-1] + r2[..., 1:])


# --------------------------------------------------------------------------
# quadratic observables and the generator


@dataclass
class QuadraticObservable:
    """``f(x) = const + linear . x + x^T quad x`` with ``quad`` symmetric."""

    const: float
    linear: np.ndarray
    quad: np.ndarray
    degree: int = field(default=2)

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        self.quad = np.asarray(self.quad, dtype=float)
        if self.degree > 2:
            raise ValueError("only observables of degree <= 2 are supported")
        m = self.linear.size
        if self.quad.shape != (m, m):
            raise ValueError("quad must be a square matrix matching linear")
        self.quad = 0.5 * (self.quad + self.quad.T)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.const + self.linear @ x + x @ self.quad @ x)

    def __add__(self, other: "QuadraticObservable") -> "QuadraticObservable":
        return QuadraticObservable(self.const + other.const, self.linear + other.linear,
                                   self.quad + other.quad)

    def scale(self, c: float) -> "QuadraticObservable":
        return QuadraticObservable(c * self.const, c * self.linear, c * self.quad)

    @classmethod
    def zero(cls, n: int) -> "QuadraticObservable":
        return cls(0.0, np.zeros(2 * n), np.zeros((2 * n, 2 * n)))

    @classmethod
    def monomial(cls, n: int, a: int, b: int | None = None) -> "QuadraticObservable":
        """``x_a`` or ``x_a x_b`` (indices into the (q, p) vector)."""
        f = cls.zero(n)
        if b is None:
            f.linear[a] = 1.0
        else:
            f.quad[a, b] += 0.5
            f.quad[b, a] += 0.5
        return f


def drift_matrix(params: ChainParams) -> np.ndarray:
    """Linear drift ``A`` of ``dx = A x dt + noise`` (flips not included)."""
    n = params.n_sites
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -stiffness_matrix(n, params.pinning)
    sites = params.bath_sites()
    a[n + sites, n + sites] = -params.bath_coupling
    return a


def bath_temperatures(params: ChainParams, profile=None) -> np.ndarray:
    """Temperatures of the thermostatted sites, aligned with ``bath_sites()``."""
    if params.model is Model.VELOCITY_FLIP:
        if profile is None:
            return params.end_profile()
        profile = np.asarray(profile, dtype=float)
        if profile.size == 2:
            return profile.copy()
        return np.array([profile[0], profile[-1]])
    if profile is None:
        raise ValueError("the self-consistent model needs a temperature profile")
    profile = np.asarray(profile, dtype=float)
    if profile.shape != (params.n_sites,):
        raise ValueError("profile must have one temperature per site")
    return profile.copy()


def generator_quadratic(f: QuadraticObservable, params: ChainParams,
                        profile=None) -> QuadraticObservable:
    """Exact image ``Lf`` of a quadratic observable, again quadratic."""
    n = params.n_sites
    if f.linear.size != 2 * n:
        raise ValueError("observable dimension does not match the chain")
    a = drift_matrix(params)
    # Hamiltonian drift and friction: (A x) . grad f
    linear = a.T @ f.linear
    quad = f.quad @ a
    quad = quad + quad.T
    const = 0.0
    # bath diffusion: lam T d^2/dp^2
    sites = params.bath_sites()
    temps = bath_temperatures(params, profile) if params.bath_coupling > 0 else np.zeros(sites.size)
    for s, t in zip(sites, temps):
        const += 2.0 * params.bath_coupling * t * f.quad[n + s, n + s]
    out = QuadraticObservable(const, linear, quad)
    for s in params.flip_sites():
        k = n + s
        flip_lin = np.zeros(2 * n)
        flip_lin[k] = -2.0 * f.linear[k]
        flip_quad = np.zeros((2 * n, 2 * n))
        flip_quad[k, :] = -2.0 * f.quad[k, :]
        flip_quad[:, k] = -2.0 * f.quad[:, k]
        flip_quad[k, k] = 0.0
        out = out + QuadraticObservable(0.0, flip_lin, flip_quad).scale(params.flip_rate)
    return out


def generator_apply(f: QuadraticObservable, state: ChainState, params: ChainParams,
                    profile=None) -> float:
    """``(Lf)(state)`` for a quadratic observable ``f``."""
    if f.degree > 2:
        raise ValueError("generator_apply only handles degree <= 2")
    return generator_quadratic(f, params, profile)(state.vector())


def energy_current_observable(n: int, j: int) -> QuadraticObservable:
    """``j^e_j = -(1/2) r_{j-1} (p_j + p_{j-1})`` for 1-based site j."""
    f = QuadraticObservable.zero(n)

    def q_idx(i):
        return i - 1 if 1 <= i <= n else None

    def p_idx(i):
        return n + i - 1 if 1 <= i <= n else None

    # r_{j-1} = q_j - q_{j-1}
    r_terms = [(q_idx(j), 1.0), (q_idx(j - 1), -1.0)]
    p_terms = [(p_idx(j), 1.0), (p_idx(j - 1), 1.0)]
    for a, ca in r_terms:
        for b, cb in p_terms:
            if a is None or b is None:
                continue
            f.quad[a, b] += -0.25 * ca * cb
            f.quad[b, a] += -0.25 * ca * cb
    return f


def check_current_decomposition(state: ChainState, params: ChainParams, site: int) -> float:
    """Residual of ``j^e_j = -(grad phi)_j + L(h_j)`` at a bulk site.

    ``phi_j = (p_{j-1}^2 + r_{j-1} r_{j-2}) / (2 g)`` and ``h_j = -j^e_j / g``
    where ``g`` is the damping rate of the bulk noise (``2 * flip_rate`` for
    velocity flips). ``site`` is 1-based and must not neighbour a bath or a
    site without flip noise.
    """
    n = params.n_sites
    if params.model is not Model.VELOCITY_FLIP:
        raise ValueError("the current decomposition is a velocity-flip identity")
    if params.pinning != 0:
        raise ValueError("the current decomposition holds for the unpinned chain")
    flips = set(params.flip_sites().tolist())
    baths = set(params.bath_sites().tolist()) if params.bath_coupling > 0 else set()
    if not (2 <= site <= n - 1) or {site - 1, site - 2} & baths or not {site - 1, site - 2} <= flips:
        raise ValueError(f"site {site} is not a bulk site with flip noise on both neighbours")
    g = params.damping_rate
    x = state.vector()
    obs = local_observables(state, params)
    r = obs.deformation
    p = np.concatenate([[0.0], state.momenta, [0.0]])

    def phi(j):
        # r_{-1} only appears for j = 1, where the product vanishes anyway
        rr = r[j - 1] * r[j - 2] if j >= 2 else 0.0
        return (p[j - 1] ** 2 + rr) / (2.0 * g)

    current = energy_current_observable(n, site)
    h = current.scale(-1.0 / g)
    rhs = -(phi(site + 1) - phi(site)) + generator_quadratic(h, params)(x)
    return abs(current(x) - rhs)


def conservation_check(segments, params: ChainParams, dt: float) -> np.ndarray:
    """Per-site defect of the local energy balance along a trajectory.

    ``segments`` has shape ``(n_steps, 2, 2N)``: the state at the start and at
    the end of each deterministic sub-flow of the integrator (noise acts only
    between segments). The time integral of ``j^e_j - j^e_{j+1}`` is taken with
    the trapezoidal rule over each segment. Returns
    ``|E_j(t) - E_j(0) - integral|`` for j = 0..N+1.
    """
    segments = np.asarray(segments, dtype=float)
    if segments.ndim != 3 or segments.shape[1] != 2:
        raise ValueError("segments must have shape (n_steps, 2, 2N)")
    if len(segments) == 0:
        return np.zeros(params.n_sites + 2)
    integral = 0.0
    for start, end in segments:
        j0 = local_observables(ChainState.from_vector(start), params).energy_current
        j1 = local_observables(ChainState.from_vector(end), params).energy_current
        div0 = j0 - np.append(j0[1:], 0.0)
        div1 = j1 - np.append(j1[1:], 0.0)
        integral = integral + 0.5 * dt * (div0 + div1)
    e0 = local_observables(ChainState.from_vector(segments[0, 0]), params).local_energy
    e1 = local_observables(ChainState.from_vector(segments[-1, 1]), params).local_energy
    return np.abs(e1 - e0 - integral)
