"""Trajectory simulation of the velocity-flip and self-consistent chains.

One integrator step of length ``dt`` is a symmetric splitting: a noise half
step, a velocity-Verlet step of the harmonic force, another noise half step.
A noise half step of length ``h`` applies the exact Ornstein-Uhlenbeck update
``p <- e^{-lam h} p + sqrt(T (1 - e^{-2 lam h})) xi`` at bath sites and flips
each flip site with probability ``(1 - e^{-2 gamma h}) / 2``, the chance of an
odd number of rings of its Poisson clock.

Random numbers are drawn in chunks with NumPy and handed to the kernel
(:mod:`bulknoise.kernels`), so the compiled and the fallback backends follow
identical trajectories. Replica ``k`` of seed ``s`` uses the stream
``SeedSequence(s, spawn_key=(k,))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .chain import ChainParams, ChainState, Model, bath_temperatures, total_energy
from .gibbs import gibbs_covariance


class SimulationError(RuntimeError):
    pass


def default_dt(params: ChainParams) -> float:
    return 0.01 / max(1.0, params.pinning, params.bath_coupling, params.flip_rate)


@dataclass
class SimConfig:
    dt: float | None = None
    t_burn: float | None = None
    t_sample: float = 100.0
    sample_stride: int = 10
    seed: int = 0
    replicas: int = 1
    snapshot_stride: int = 0
    chunk_steps: int = 50_000
    init: str = "stationary"
    allow_large_dt: bool = False

    def resolve(self, params: ChainParams) -> "SimConfig":
        """Fill in defaults that depend on the chain and check the step guard."""
        dt = default_dt(params) if self.dt is None else float(self.dt)
        if dt <= 0:
            raise ValueError("dt must be > 0")
        scale = max(1.0, params.pinning, params.bath_coupling, params.flip_rate)
        if dt * scale > 0.1 and not self.allow_large_dt:
            raise ValueError(f"dt={dt} violates dt * max(1, nu, lam, gamma) <= 0.1; "
                             "set allow_large_dt to override")
        if self.t_burn is None:
            rate = params.flip_rate if params.flip_rate > 0 else 1.0
            t_burn = 20.0 * params.n_sites**2 / rate
        else:
            t_burn = float(self.t_burn)
        if self.sample_stride < 1 or self.replicas < 1 or self.t_sample <= 0:
            raise ValueError("sample_stride, replicas and t_sample must be positive")
        return SimConfig(dt, t_burn, self.t_sample, self.sample_stride, int(self.seed),
                         self.replicas, self.snapshot_stride, self.chunk_steps, self.init,
                         self.allow_large_dt)


@dataclass
class TrajectoryStats:
    """Time averages of one simulation (all replicas merged).

    ``h_samples`` has shape ``(replicas, n_samples)``; the ``block_*`` arrays
    hold per-chunk means with shape ``(replicas, n_blocks, ...)`` for error
    estimation. ``current_profile[j-1]`` is the mean of ``j^e_j``, j = 1..N+1.
    """

    mean_p_sq_profile: np.ndarray
    mean_energy_profile: np.ndarray
    mean_current: float
    h_samples: np.ndarray
    flip_count: int
    current_profile: np.ndarray
    block_p_sq: np.ndarray
    block_current: np.ndarray
    snapshots: np.ndarray | None = None
    dt: float = 0.0
    sample_interval: float = 0.0
    final_states: list = field(default_factory=list)


# --------------------------------------------------------------------------
# random numbers


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


def _flip_probability(params: ChainParams, h: float) -> float:
    return 0.5 * (1.0 - math.exp(-2.0 * params.flip_rate * h))


def bernoulli_positions(rng: np.random.Generator, total: int, prob: float) -> np.ndarray:
    """Sorted indices of successes among ``total`` i.i.d. Bernoulli(prob) trials.

    Sampled through geometric gaps, so the cost scales with the number of
    successes rather than with ``total``.
    """
    if prob <= 0 or total <= 0:
        return np.empty(0, dtype=np.int64)
    if prob >= 1:
        return np.arange(total, dtype=np.int64)
    expected = total * prob
    size = int(expected + 6.0 * math.sqrt(expected) + 16)
    pos = np.cumsum(rng.geometric(prob, size=size)) - 1
    while pos[-1] < total:
        more = np.cumsum(rng.geometric(prob, size=size)) + pos[-1]
        pos = np.concatenate([pos, more])
    return pos[pos < total].astype(np.int64)


@dataclass
class _StepPlan:
    dt: float
    nu2: float
    bath_sites: np.ndarray
    bath_decay: np.ndarray
    bath_amp: np.ndarray
    flip_sites: np.ndarray
    flip_prob: float

    @classmethod
    def build(cls, params: ChainParams, dt: float, profile=None) -> "_StepPlan":
        h = 0.5 * dt
        if params.bath_coupling > 0:
            sites = params.bath_sites().astype(np.int64)
            temps = bath_temperatures(params, profile)
            decay = math.exp(-params.bath_coupling * h)
            dec = np.full(sites.size, decay)
            amp = np.sqrt(temps * (1.0 - decay**2))
        else:
            sites = np.empty(0, dtype=np.int64)
            dec = amp = np.empty(0)
        flips = params.flip_sites().astype(np.int64)
        return cls(dt, params.pinning**2, sites, dec, amp, flips, _flip_probability(params, h))

    def randomness(self, rng: np.random.Generator, n_steps: int):
        noise = rng.standard_normal((2 * n_steps, self.bath_sites.size))
        events = bernoulli_positions(rng, 2 * n_steps * self.flip_sites.size, self.flip_prob)
        return noise, events


def _check_finite(q, p, time):
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise SimulationError(f"state became non-finite at t={time:.6g}; reduce dt")


def _initial_force(q, nu2):
    f = np.empty_like(q)
    kernels._kernels_py.compute_force(q, f, 2.0 + nu2)
    return f


# --------------------------------------------------------------------------
# public API


def step(state: ChainState, params: ChainParams, cfg: SimConfig, rng: np.random.Generator,
         profile=None) -> ChainState:
    """Advance ``state`` by one integrator step of length ``cfg.dt``."""
    cfg = cfg.resolve(params)
    plan = _StepPlan.build(params, cfg.dt, _profile_for(params, profile))
    q = state.positions.copy()
    p = state.momenta.copy()
    force = _initial_force(q, plan.nu2)
    noise, events = plan.randomness(rng, 1)
    _run(kernels.backend, q, p, force, 1, plan, noise, events, 2, None, None)
    _check_finite(q, p, state.time + cfg.dt)
    return ChainState(q, p, state.time + cfg.dt)


def simulate_segments(state: ChainState, params: ChainParams, dt: float, n_steps: int,
                      rng: np.random.Generator, profile=None) -> np.ndarray:
    """States bracketing each deterministic Verlet sub-step, shape ``(n_steps, 2, 2N)``.

    Input for :func:`bulknoise.chain.conservation_check`.
    """
    plan = _StepPlan.build(params, dt, _profile_for(params, profile))
    ref = kernels._kernels_py
    q = state.positions.copy()
    p = state.momenta.copy()
    force = _initial_force(q, plan.nu2)
    noise, events = plan.randomness(rng, n_steps)
    out = np.empty((n_steps, 2, 2 * q.size))
    ptr = 0
    half = 0.5 * dt
    for k in range(n_steps):
        ptr = ref._noise(p, 2 * k, plan.bath_sites, plan.bath_decay, plan.bath_amp, noise,
                         plan.flip_sites, events, ptr)
        out[k, 0, : q.size], out[k, 0, q.size:] = q, p
        p += half * force
        q += dt * p
        ref.compute_force(q, force, 2.0 + plan.nu2)
        p += half * force
        out[k, 1, : q.size], out[k, 1, q.size:] = q, p
        ptr = ref._noise(p, 2 * k + 1, plan.bath_sites, plan.bath_decay, plan.bath_amp, noise,
                         plan.flip_sites, events, ptr)
    return out


def _profile_for(params: ChainParams, profile):
    if params.model is Model.SELF_CONSISTENT and profile is None:
        from .moments import self_consistent_profile
        return self_consistent_profile(params)
    return profile


def _run(backend, q, p, force, n_steps, plan, noise, events, stride, sums, snaps,
         snap_stride=0):
    n = q.size
    n_samples = n_steps // stride
    h_out = np.empty(n_samples)
    if sums is None:
        sums = (np.zeros(n), np.zeros(n), np.zeros(n + 1))
    if snaps is None:
        snaps = np.empty((0, 2 * n))
    used = backend.run_chunk(q, p, force, n_steps, plan.dt, plan.nu2, plan.bath_sites,
                             plan.bath_decay, plan.bath_amp, noise, plan.flip_sites, events,
                             stride, h_out, sums[0], sums[1], sums[2], snap_stride, snaps)
    return h_out, int(used)


def initial_state(params: ChainParams, mode, rng: np.random.Generator, profile=None) -> ChainState:
    """``"zero"``, ``"gibbs"`` (equilibrium at the mean end temperature) or
    ``"stationary"`` (Gaussian with the exact NESS covariance)."""
    if isinstance(mode, ChainState):
        return ChainState(mode.positions.copy(), mode.momenta.copy(), mode.time)
    n = params.n_sites
    if mode == "zero":
        return ChainState.zeros(n)
    if mode == "gibbs":
        cov = gibbs_covariance(n, 0.5 * (params.temp_left + params.temp_right), params.pinning)
    elif mode == "stationary":
        from .moments import stationary_covariance
        cov = stationary_covariance(params, profile).cov
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    x = rng.multivariate_normal(np.zeros(2 * n), cov, method="eigh")
    return ChainState.from_vector(x)


def _simulate_replica(params, cfg, profile, replica, backend_name):
    backend = kernels.get_backend(backend_name)
    rng = replica_rng(cfg.seed, replica)
    n = params.n_sites
    plan = _StepPlan.build(params, cfg.dt, profile)
    state = initial_state(params, cfg.init, rng, profile)
    q, p = state.positions, state.momenta
    force = _initial_force(q, plan.nu2)
    stride = cfg.sample_stride
    snap_stride = cfg.snapshot_stride
    unit = stride if snap_stride <= 0 else math.lcm(stride, snap_stride)
    chunk = max(unit, (cfg.chunk_steps // unit) * unit)

    burn_steps = int(round(cfg.t_burn / cfg.dt))
    flips = 0
    done = 0
    while done < burn_steps:
        k = min(chunk, burn_steps - done)
        noise, events = plan.randomness(rng, k)
        _, used = _run(backend, q, p, force, k, plan, noise, events, k + 1, None, None)
        flips += used
        done += k
        _check_finite(q, p, done * cfg.dt)

    sample_steps = (int(round(cfg.t_sample / cfg.dt)) // stride) * stride
    h_all, block_p2, block_e, block_j, block_w, snaps_all = [], [], [], [], [], []
    done = 0
    while done < sample_steps:
        k = min(chunk, sample_steps - done)
        noise, events = plan.randomness(rng, k)
        sums = (np.zeros(n), np.zeros(n), np.zeros(n + 1))
        snaps = np.empty((k // snap_stride if snap_stride > 0 else 0, 2 * n))
        h, used = _run(backend, q, p, force, k, plan, noise, events, stride, sums, snaps,
                       snap_stride)
        flips += used
        done += k
        _check_finite(q, p, cfg.t_burn + done * cfg.dt)
        m = k // stride
        h_all.append(h)
        block_p2.append(sums[0] / m)
        block_e.append(sums[1] / m)
        block_j.append(sums[2] / m)
        block_w.append(m)
        if snap_stride > 0:
            snaps_all.append(snaps)
    w = np.array(block_w, dtype=float)
    return dict(
        h=np.concatenate(h_all),
        p2=np.array(block_p2), e=np.array(block_e), j=np.array(block_j), w=w,
        snaps=np.concatenate(snaps_all) if snap_stride > 0 else None,
        flips=flips, final=ChainState(q.copy(), p.copy(), cfg.t_burn + done * cfg.dt))


def run(params: ChainParams, cfg: SimConfig, profile=None, backend: str | None = None,
        n_jobs: int = 1) -> TrajectoryStats:
    """Burn in, then sample; deterministic given ``(cfg.seed, replica index)``."""
    cfg = cfg.resolve(params)
    profile = _profile_for(params, profile)
    name = kernels.get_backend(backend).BACKEND
    if n_jobs == 1:
        results = [_simulate_replica(params, cfg, profile, r, name) for r in range(cfg.replicas)]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_simulate_replica, params, cfg, profile, r, name)
                       for r in range(cfg.replicas)]
            results = [f.result() for f in futures]
    return _merge(results, cfg, params)


def _merge(results, cfg: SimConfig, params: ChainParams) -> TrajectoryStats:
    w = np.concatenate([r["w"] for r in results])
    p2 = np.concatenate([r["p2"] for r in results])
    e = np.concatenate([r["e"] for r in results])
    j = np.concatenate([r["j"] for r in results])
    mean_p2 = w @ p2 / w.sum()
    mean_e = w @ e / w.sum()
    mean_j = w @ j / w.sum()
    n = params.n_sites
    snaps = None
    if results[0]["snaps"] is not None:
        snaps = np.stack([r["snaps"] for r in results])
    return TrajectoryStats(
        mean_p_sq_profile=mean_p2,
        mean_energy_profile=mean_e,
        mean_current=float(np.mean(mean_j[1:n])),
        h_samples=np.stack([r["h"] for r in results]),
        flip_count=int(sum(r["flips"] for r in results)),
        current_profile=mean_j,
        block_p_sq=np.stack([r["p2"] for r in results]),
        block_current=np.stack([r["j"] for r in results]),
        snapshots=snaps,
        dt=cfg.dt,
        sample_interval=cfg.dt * cfg.sample_stride,
        final_states=[r["final"] for r in results],
    )


def flip_preserves_energy(state: ChainState, params: ChainParams, site: int) -> bool:
    """True when flipping ``p_site`` leaves the total energy bit-identical."""
    flipped = ChainState(state.positions, state.momenta.copy(), state.time)
    flipped.momenta[site] = -flipped.momenta[site]
    return total_energy(flipped, params) == total_energy(state, params)
