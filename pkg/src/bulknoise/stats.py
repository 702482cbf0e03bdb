"""Time-series estimators with batch-means error bars."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BATCHES = 32


@dataclass
class EstimateWithError:
    value: float
    std_error: float
    n_batches: int
    batch_len: int
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"value": self.value, "std_error": self.std_error,
                           "n_batches": self.n_batches, "batch_len": self.batch_len,
                           "warnings": list(self.warnings)})

    @classmethod
    def from_json(cls, text: str) -> "EstimateWithError":
        d = json.loads(text)
        return cls(d["value"], d["std_error"], d["n_batches"], d["batch_len"], d.get("warnings", []))

    def __str__(self):
        return f"{self.value:.6g} +/- {self.std_error:.2g}"


def integrated_autocorr_time(series, window_factor: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    if n < 4 or not np.any(x):
        return 0.5
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n]
    acf /= acf[0]
    tau = 0.5
    for m in range(1, n):
        tau += acf[m]
        if m >= window_factor * tau:
            break
    return max(float(tau), 0.5)


def _batch(series, n_batches):
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if n_batches < 2 or x.size < 2 * n_batches:
        raise ValueError(f"series of length {x.size} is too short for {n_batches} batches "
                         "(need at least 2 samples per batch)")
    blen = x.size // n_batches
    return x[: blen * n_batches].reshape(n_batches, blen), blen


def batch_means(series, n_batches: int = DEFAULT_BATCHES, check_autocorr: bool = True) -> EstimateWithError:
    """Mean with the batch-means standard error."""
    batches, blen = _batch(series, n_batches)
    means = batches.mean(axis=1)
    value = float(means.mean())
    err = float(means.std(ddof=1) / np.sqrt(n_batches))
    notes = []
    if n_batches < 8:
        notes.append("fewer than 8 batches; error bar unreliable")
    if check_autocorr and err > 0:
        tau = integrated_autocorr_time(np.asarray(series, dtype=float)[: 200 * blen])
        if blen < 10 * tau:
            notes.append(f"batch length {blen} below 10x autocorrelation time {tau:.1f}")
    return EstimateWithError(value, err, n_batches, blen, notes)


def estimate_s(h_samples, n_sites: int, n_batches: int = DEFAULT_BATCHES) -> EstimateWithError:
    """``s_N = N Var(H) / <H>^2`` with an error from joint batching of (H, H^2).

    ``h_samples`` may be 2-d (independent replicas along axis 0); batches are
    then formed within each replica.
    """
    h = np.asarray(h_samples, dtype=float)
    if h.ndim == 1:
        h = h[None, :]
    per = max(2, n_batches // h.shape[0])
    m1, m2, blens = [], [], []
    for row in h:
        b, blen = _batch(row, per)
        m1.append(b.mean(axis=1))
        m2.append((b * b).mean(axis=1))
        blens.append(blen)
    m1 = np.concatenate(m1)
    m2 = np.concatenate(m2)
    k = m1.size
    a, b2 = m1.mean(), m2.mean()
    var = b2 - a * a
    notes = []
    if a == 0:
        raise ValueError("mean energy is zero")
    s = n_sites * var / a**2
    # delta method on the batch means of (H, H^2)
    grad = np.array([-2.0 * n_sites * b2 / a**3, n_sites / a**2])
    cov = np.cov(np.vstack([m1, m2]), ddof=1) / k
    err = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    if k < 8:
        notes.append("fewer than 8 batches; error bar unreliable")
    tau = integrated_autocorr_time(h[0][: 200 * blens[0]])
    if min(blens) < 10 * tau:
        notes.append(f"batch length {min(blens)} below 10x autocorrelation time {tau:.1f}")
    return EstimateWithError(float(s), err, k, min(blens), notes)


def block_profile_estimate(blocks) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of per-block profile means, shape ``(..., n_blocks, L)``."""
    b = np.asarray(blocks, dtype=float)
    b = b.reshape(-1, b.shape[-1])
    return b.mean(axis=0), b.std(axis=0, ddof=1) / np.sqrt(b.shape[0])
