"""Projection-noise simulation and sample-count bookkeeping.

Each measured configuration produces +-1 outcomes whose mean is the exact
trace value, so shot noise is drawn at the expectation level (binomial around
the exact value), which is distribution-exact for the two-outcome estimator.
Streams are keyed by (master seed, setting id, time index) so results are
bit-identical under any execution order.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import EnsembleSpec


def shots_needed(epsilon: float, delta: float) -> int:
    """Hoeffding count ceil(2/eps^2 log(2/delta)) for one +-1 estimator."""
    if not 0 < epsilon <= 2:
        raise ValueError("precision must be in (0, 2]")
    if not 0 < delta < 1:
        raise ValueError("failure probability must be in (0, 1)")
    return math.ceil(2.0 / epsilon**2 * math.log(2.0 / delta))


def _stable_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def stream(master_seed: int, setting_id: str, time_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(_stable_key(setting_id), time_index)
    )
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class TimeTrace:
    sid: str
    times: np.ndarray
    means: np.ndarray
    shots_per_time: int
    seed: int
    batch_means: np.ndarray | None = None  # (n_batches, n_times)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.abs(self.means) > 1 + 1e-12):
            raise ValueError("trace means must lie in [-1, 1]")


def _check_range(value: float, sid: str) -> float:
    if abs(value) > 1 + 1e-9:
        raise ValueError(f"exact value {value} out of [-1, 1] for {sid}: simulator bug")
    return min(1.0, max(-1.0, value))


def sample_trace(
    exact_values,
    sid: str,
    times,
    shots: int,
    seed: int,
    n_batches: int = 1,
) -> TimeTrace:
    """Bernoulli projection noise around exact trace values.

    exact_values: callable t -> value or a precomputed array matching times.
    shots = 0 returns the exact means (noise-free dry run).
    """
    times = np.asarray(times, dtype=float)
    if callable(exact_values):
        exact = np.array([exact_values(t) for t in times], dtype=float)
    else:
        exact = np.asarray(exact_values, dtype=float)
    exact = np.array([_check_range(v, sid) for v in exact])
    if shots == 0:
        return TimeTrace(sid, times, exact, 0, seed)
    batch_sizes = [shots // n_batches + (1 if i < shots % n_batches else 0) for i in range(n_batches)]
    means = np.empty(len(times))
    batches = np.empty((n_batches, len(times)))
    for k in range(len(times)):
        rng = stream(seed, sid, k)
        p_up = (1.0 + exact[k]) / 2.0
        total = 0
        for bi, bs in enumerate(batch_sizes):
            ups = rng.binomial(bs, p_up) if bs else 0
            batches[bi, k] = 2.0 * ups / bs - 1.0 if bs else 0.0
            total += ups
        means[k] = 2.0 * total / shots - 1.0
    return TimeTrace(sid, times, means, shots, seed, batch_means=batches if n_batches > 1 else None)


def sample_ensemble_trace(
    values_fn,
    ensemble: EnsembleSpec,
    sid: str,
    times,
    shots: int,
    seed: int,
    n_batches: int = 1,
) -> TimeTrace:
    """Fresh coefficient draw for every shot, then one projective outcome.

    values_fn(lams, t) must return the exact trace values for a (shots, k)
    array of coefficient draws at time t, each in [-1, 1].
    """
    times = np.asarray(times, dtype=float)
    factor = ensemble.factor()
    kdim = factor.shape[1]
    if shots == 0:
        raise ValueError("ensemble dry runs need an explicit averaged evaluator")
    means = np.empty(len(times))
    batches = np.empty((n_batches, len(times)))
    edges = np.linspace(0, shots, n_batches + 1).astype(int)
    for k in range(len(times)):
        rng = stream(seed, sid, k)
        z = rng.standard_normal((shots, kdim))
        lams = z @ factor.T + ensemble.means[None, :]
        vals = np.asarray(values_fn(lams, float(times[k])), dtype=float)
        if np.any(np.abs(vals) > 1 + 1e-9):
            raise ValueError(f"ensemble trace value out of range for {sid}")
        vals = np.clip(vals, -1.0, 1.0)
        u = rng.random(shots)
        outcomes = np.where(u < (1.0 + vals) / 2.0, 1.0, -1.0)
        means[k] = outcomes.mean()
        for bi in range(n_batches):
            seg = outcomes[edges[bi]: edges[bi + 1]]
            batches[bi, k] = seg.mean() if len(seg) else 0.0
    return TimeTrace(sid, times, means, shots, seed, batch_means=batches if n_batches > 1 else None)


def run_schedule(
    sched,
    evaluate,
    times,
    shots: int,
    seed: int,
    n_batches: int = 1,
    workers: int = 1,
) -> dict[str, TimeTrace]:
    """Execute a round schedule: evaluate(setting, trace) -> exact values.

    Settings within a round are independent; traces are keyed by
    "setting-id/trace-id", and the RNG keying makes the result identical for
    any execution order or worker count.
    """
    out: dict[str, TimeTrace] = {}

    def one(setting, trace):
        tid = f"{setting.sid}/{trace.trace_id()}"
        exact = evaluate(setting, trace)
        return tid, sample_trace(exact, tid, times, shots, seed, n_batches=n_batches)

    for rnd in sched.rounds:
        jobs = [(s, t) for _, group in rnd for s in group for t in s.traces]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda st: one(*st), jobs))
        else:
            results = [one(*job) for job in jobs]
        for tid, trace in results:
            if tid in out:
                raise ValueError(f"duplicate trace id {tid}")
            out[tid] = trace
    return dict(sorted(out.items()))
