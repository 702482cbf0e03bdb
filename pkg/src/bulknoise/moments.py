"""Exact stationary second moments of both chain models.

The second moments ``C = <x x^T>`` close under the generator:
``dC/dt = A C + C A^T + Flip(C) + S`` with ``A`` the drift matrix, ``S`` the
bath noise and ``Flip`` the velocity-flip decoherence, which damps
``<q_i p_j>`` at ``2 gamma`` and ``<p_i p_j>`` (i != j) at ``4 gamma`` for
flip sites and leaves ``<p_j^2>`` untouched.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import (ChainParams, Model, bath_temperatures, difference_matrix, drift_matrix,
                    energy_quadratic_form)


class SingularSystemError(RuntimeError):
    pass


@dataclass
class SecondMoments:
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)

    @property
    def n(self) -> int:
        return self.cov.shape[0] // 2

    @property
    def qq(self):
        return self.cov[: self.n, : self.n]

    @property
    def qp(self):
        return self.cov[: self.n, self.n:]

    @property
    def pp(self):
        return self.cov[self.n:, self.n:]

    @property
    def rr(self):
        d = difference_matrix(self.n)
        return d @ self.qq @ d.T

    @property
    def rp(self):
        return difference_matrix(self.n) @ self.qp

    def temperatures(self) -> np.ndarray:
        return np.diag(self.pp).copy()

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))[0])

    def is_psd(self, tol: float = 1e-10) -> bool:
        return self.min_eigenvalue() >= -tol

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        """Row-major CSV with a header row naming the coordinates."""
        names = [f"q{j}" for j in range(1, self.n + 1)] + [f"p{j}" for j in range(1, self.n + 1)]
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        buf.write(",".join(["coord"] + names) + "\n")
        for name, row in zip(names, self.cov):
            buf.write(",".join([name] + [repr(float(v)) for v in row]) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "SecondMoments":
        rows = [line for line in open(path) if not line.startswith("#")]
        data = [list(map(float, r.strip().split(",")[1:])) for r in rows[1:]]
        return cls(np.array(data))


# --------------------------------------------------------------------------
# operator assembly


def _flip_mask(params: ChainParams) -> np.ndarray:
    n = params.n_sites
    m = np.zeros(2 * n)
    m[n + params.flip_sites()] = 1.0
    return m


def flip_decoherence(params: ChainParams, cov) -> np.ndarray:
    """``Flip(C)``: the velocity-flip part of ``dC/dt``."""
    m = _flip_mask(params)
    rate = -2.0 * params.flip_rate * (m[:, None] + m[None, :])
    np.fill_diagonal(rate, 0.0)
    return rate * cov


def noise_source(params: ChainParams, profile=None) -> np.ndarray:
    n = params.n_sites
    s = np.zeros((2 * n, 2 * n))
    if params.bath_coupling == 0:
        return s
    sites = params.bath_sites()
    s[n + sites, n + sites] = 2.0 * params.bath_coupling * bath_temperatures(params, profile)
    return s


def moment_drift(params: ChainParams, cov, profile=None) -> np.ndarray:
    """``dC/dt`` evaluated densely at a given second-moment matrix."""
    a = drift_matrix(params)
    return a @ cov + cov @ a.T + flip_decoherence(params, cov) + noise_source(params, profile)


def _sym_maps(dim: int):
    iu, ju = np.triu_indices(dim)
    m = iu.size
    cols = np.arange(m)
    full_a = iu * dim + ju
    full_b = ju * dim + iu
    lift = sp.csr_matrix((np.ones(2 * m), (np.concatenate([full_a, full_b]),
                                            np.concatenate([cols, cols]))), shape=(dim * dim, m))
    lift.data[:] = 1.0  # diagonal entries appear twice in the triplets
    select = sp.csr_matrix((np.ones(m), (cols, full_a)), shape=(m, dim * dim))
    return lift, select, (iu, ju)


@dataclass
class MomentOperator:
    """Sparse ``M`` and source ``s`` with ``dC/dt = M(C) + S`` on the upper
    triangle of the symmetric ``2N x 2N`` second-moment matrix."""

    matrix: sp.csr_matrix
    source: np.ndarray
    index: tuple
    dim: int

    def unpack(self, vec) -> np.ndarray:
        c = np.zeros((self.dim, self.dim))
        iu, ju = self.index
        c[iu, ju] = vec
        c[ju, iu] = vec
        return c

    def pack(self, cov) -> np.ndarray:
        iu, ju = self.index
        return np.asarray(cov)[iu, ju]

    def apply(self, cov) -> np.ndarray:
        return self.unpack(self.matrix @ self.pack(cov) + self.source)


def moment_drift_operator(params: ChainParams, profile=None) -> MomentOperator:
    dim = 2 * params.n_sites
    a = sp.csr_matrix(drift_matrix(params))
    eye = sp.identity(dim, format="csr")
    full = sp.kron(a, eye) + sp.kron(eye, a)
    m = _flip_mask(params)
    rate = -2.0 * params.flip_rate * (m[:, None] + m[None, :])
    np.fill_diagonal(rate, 0.0)
    full = full + sp.diags(rate.ravel())
    lift, select, index = _sym_maps(dim)
    matrix = (select @ full @ lift).tocsr()
    source = noise_source(params, profile)[index]
    return MomentOperator(matrix, source, index, dim)


# --------------------------------------------------------------------------
# stationary solutions


def _solve_lyapunov(params: ChainParams, profile) -> np.ndarray:
    a = drift_matrix(params)
    c = scipy.linalg.solve_continuous_lyapunov(a, -noise_source(params, profile))
    return 0.5 * (c + c.T)


def stationary_covariance(params: ChainParams, profile=None, method: str = "auto") -> SecondMoments:
    """Solve ``M(C) + S = 0``.

    ``method``: ``"operator"`` (sparse LU on the vectorised moment operator),
    ``"lyapunov"`` (Bartels-Stewart, only without flips) or ``"auto"``.
    For the self-consistent model a missing profile is replaced by the
    self-consistent one.
    """
    if params.model is Model.SELF_CONSISTENT and profile is None:
        profile = self_consistent_profile(params)
    has_flips = params.flip_sites().size > 0 and params.flip_rate > 0
    if method == "auto":
        method = "operator" if has_flips else "lyapunov"
    if method == "lyapunov":
        if has_flips:
            raise ValueError("the Lyapunov route cannot represent velocity flips")
        cov = _solve_lyapunov(params, profile)
    elif method == "operator":
        op = moment_drift_operator(params, profile)
        lu = spla.splu(op.matrix.tocsc())
        vec = lu.solve(-op.source)
        if not np.all(np.isfinite(vec)):
            raise SingularSystemError("moment operator is singular for these parameters")
        cov = op.unpack(vec)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(cov)):
        raise SingularSystemError("stationary covariance is not finite; is the chain damped?")
    return SecondMoments(cov)


def _unit_responses(params: ChainParams) -> np.ndarray:
    """Covariances for unit temperature at each bath site, shape (n_bath, 2N, 2N)."""
    a = drift_matrix(params)
    n = params.n_sites
    sites = params.bath_sites()
    out = np.empty((sites.size, 2 * n, 2 * n))
    if params.flip_sites().size and params.flip_rate > 0:
        op = moment_drift_operator(params, np.ones(sites.size) if sites.size == 2 else np.ones(n))
        lu = spla.splu(op.matrix.tocsc())
        for k, s in enumerate(sites):
            src = np.zeros((2 * n, 2 * n))
            src[n + s, n + s] = 2.0 * params.bath_coupling
            out[k] = op.unpack(lu.solve(-op.pack(src)))
        return out
    for k, s in enumerate(sites):
        src = np.zeros((2 * n, 2 * n))
        src[n + s, n + s] = -2.0 * params.bath_coupling
        c = scipy.linalg.solve_continuous_lyapunov(a, src)
        out[k] = 0.5 * (c + c.T)
    return out


def self_consistent_profile(params: ChainParams, method: str = "linear", tol: float = 1e-12,
                            max_iter: int = 100000) -> np.ndarray:
    """Bath temperatures with no mean particle-bath energy flux at interior sites.

    ``method="linear"`` solves one linear system built from the unit responses;
    ``method="iterate"`` is the fixed-point iteration ``T_j <- <p_j^2>``.
    """
    if params.model is not Model.SELF_CONSISTENT:
        raise ValueError("self_consistent_profile needs model=SelfConsistent")
    n = params.n_sites
    resp = _unit_responses(params)
    k = np.array([np.diag(r[n:, n:]) for r in resp]).T     # k[j, m] = d<p_j^2>/dT_m
    ends = np.array([0, n - 1])
    interior = np.arange(1, n - 1)
    t_ends = np.array([params.temp_left, params.temp_right])
    if method == "linear":
        lhs = np.eye(interior.size) - k[np.ix_(interior, interior)]
        rhs = k[np.ix_(interior, ends)] @ t_ends
        try:
            t_int = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("interior self-consistency system is singular") from exc
    elif method == "iterate":
        t_int = np.full(interior.size, t_ends.mean())
        for _ in range(max_iter):
            new = k[np.ix_(interior, interior)] @ t_int + k[np.ix_(interior, ends)] @ t_ends
            if np.max(np.abs(new - t_int)) < tol:
                t_int = new
                break
            t_int = new
        else:
            raise SingularSystemError("fixed-point iteration did not converge")
    else:
        raise ValueError(f"unknown method {method!r}")
    profile = np.empty(n)
    profile[ends] = t_ends
    profile[interior] = t_int
    return profile


def self_consistency_residual(params: ChainParams, profile) -> float:
    cov = stationary_covariance(params, profile)
    return float(np.max(np.abs(cov.temperatures()[1:-1] - np.asarray(profile)[1:-1])))


@dataclass
class BKernel:
    """Linear response of NESS two-point functions to each bath temperature.

    Arrays are indexed ``[n, i, j]`` with n the (0-based) bath site.
    """

    qq: np.ndarray
    qp: np.ndarray
    pp: np.ndarray

    @property
    def n(self) -> int:
        return self.pp.shape[1]

    @property
    def rr(self) -> np.ndarray:
        d = difference_matrix(self.n)
        return np.einsum("ai,nij,bj->nab", d, self.qq, d)

    @property
    def rp(self) -> np.ndarray:
        return np.einsum("ai,nij->naj", difference_matrix(self.n), self.qp)

    def get(self, x: str, y: str) -> np.ndarray:
        if x + y == "pq":
            return np.swapaxes(self.qp, 1, 2)
        if x + y == "pr":
            return np.swapaxes(self.rp, 1, 2)
        return getattr(self, x + y)

    def covariance(self, profile) -> np.ndarray:
        t = np.asarray(profile, dtype=float)
        top = np.concatenate([np.tensordot(t, self.qq, 1), np.tensordot(t, self.qp, 1)], axis=1)
        bottom = np.concatenate([np.tensordot(t, self.qp, 1).T, np.tensordot(t, self.pp, 1)], axis=1)
        return np.concatenate([top, bottom], axis=0)


def b_kernel(params: ChainParams) -> BKernel:
    if params.model is not Model.SELF_CONSISTENT:
        raise ValueError("b_kernel is defined for the self-consistent model")
    n = params.n_sites
    resp = _unit_responses(params)
    return BKernel(resp[:, :n, :n].copy(), resp[:, :n, n:].copy(), resp[:, n:, n:].copy())


def decay_envelope(kernel: np.ndarray, max_m: int | None = None):
    """Largest ``|B^(n)(i, j)|`` at each ``M = 1 + |i-j| + |i-n| + |j-n|``."""
    nb, ni, nj = kernel.shape
    n_idx, i_idx, j_idx = np.meshgrid(np.arange(nb), np.arange(ni), np.arange(nj), indexing="ij")
    m = 1 + np.abs(i_idx - j_idx) + np.abs(i_idx - n_idx) + np.abs(j_idx - n_idx)
    vals = np.abs(kernel)
    top = m.max() if max_m is None else max_m
    ms = np.arange(1, top + 1)
    env = np.array([vals[m == k].max() if np.any(m == k) else 0.0 for k in ms])
    return ms, env


# --------------------------------------------------------------------------
# relaxation


def spectral_gap(params: ChainParams, method: str = "auto", dense_max_dim: int = 1300,
                 n_eigs: int = 12) -> float:
    """Smallest decay rate ``min |Re z|`` over the spectrum of the moment operator.

    Without flip terms the operator is ``C -> AC + CA^T``, whose spectrum is
    ``{a + b}`` over eigenvalue pairs of the drift matrix ``A``; the gap is then
    ``2 min |Re a|`` and is computed from ``A`` directly.
    """
    if len(params.flip_sites()) == 0 or params.flip_rate == 0:
        return float(2.0 * np.min(np.abs(np.linalg.eigvals(drift_matrix(params)).real)))
    op = moment_drift_operator(params)
    dim = op.matrix.shape[0]
    if method == "auto":
        method = "dense" if dim <= dense_max_dim else "sparse"
    if method == "dense":
        eig = scipy.linalg.eigvals(op.matrix.toarray())
    elif method == "sparse":
        eig = spla.eigs(op.matrix.tocsc(), k=min(n_eigs, dim - 2), sigma=0.0,
                        return_eigenvectors=False)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.min(np.abs(eig.real)))


# --------------------------------------------------------------------------
# currents and energy fluctuations


def current_profile(cov: SecondMoments) -> np.ndarray:
    """``<j^e_j>`` for j = 1..N+1 (energy flowing from site j-1 into j)."""
    n = cov.n
    rp = cov.rp          # rp[b, k] = <r_b p_{k+1}>, b = 0..N
    out = np.zeros(n + 1)
    for j in range(1, n + 2):
        acc = 0.0
        if j <= n:
            acc += rp[j - 1, j - 1]
        if j >= 2:
            acc += rp[j - 1, j - 2]
        out[j - 1] = -0.5 * acc
    return out


def steady_current_and_s(params: ChainParams, cov: SecondMoments) -> tuple[float, float]:
    """Bulk mean energy current and the Gaussian (Wick) value of ``s_N``.

    The current is averaged over the bonds between sites 1..N and is positive
    for a flow from left to right. ``s_N`` is exact for the Gaussian NESS of
    the self-consistent model and a diagnostic otherwise.
    """
    n = params.n_sites
    current = float(np.mean(current_profile(cov)[1:n]))
    w = energy_quadratic_form(n, params.pinning)
    sw = cov.cov @ w
    mean_h = float(np.trace(sw))
    var_h = 2.0 * float(np.trace(sw @ sw))
    return current, n * var_h / mean_h**2


# --------------------------------------------------------------------------
# exact second moments of the discrete-time integrator


def discrete_stationary_covariance(params: ChainParams, dt: float, profile=None) -> SecondMoments:
    """Stationary second moments of the splitting integrator used in
    :mod:`bulknoise.dynamics` (half noise step, velocity Verlet, half noise
    step). Comparing with :func:`stationary_covariance` isolates the
    time-step bias."""
    n = params.n_sites
    dim = 2 * n
    h = 0.5 * dt
    # velocity Verlet as a linear map
    phi = -drift_matrix(params.with_(bath_coupling=0.0))[n:, :n]
    kick = np.eye(dim)
    kick[n:, :n] = -h * phi
    drift = np.eye(dim)
    drift[:n, n:] = dt * np.eye(n)
    verlet = kick @ drift @ kick
    # noise half step acts multiplicatively plus an additive diagonal
    factor = np.ones(dim)
    diag_factor = np.ones(dim)
    add = np.zeros(dim)
    sites = params.bath_sites()
    if params.bath_coupling > 0:
        temps = bath_temperatures(params, profile)
        decay = np.exp(-params.bath_coupling * h)
        factor[n + sites] *= decay
        diag_factor[n + sites] *= decay**2
        add[n + sites] = temps * (1.0 - decay**2)
    flips = params.flip_sites()
    if flips.size and params.flip_rate > 0:
        factor[n + flips] *= np.exp(-2.0 * params.flip_rate * h)
    mult = np.outer(factor, factor)
    np.fill_diagonal(mult, diag_factor)

    def noise_map(c):
        return mult * c + np.diag(add)

    def step_map(c):
        return noise_map(verlet @ noise_map(c) @ verlet.T)

    const = step_map(np.zeros((dim, dim))).ravel()
    cols = []
    for k in range(dim * dim):
        e = np.zeros(dim * dim)
        e[k] = 1.0
        cols.append(step_map(e.reshape(dim, dim)).ravel() - const)
    lin = np.array(cols).T
    vec = np.linalg.solve(np.eye(dim * dim) - lin, const)
    c = vec.reshape(dim, dim)
    return SecondMoments(0.5 * (c + c.T))
