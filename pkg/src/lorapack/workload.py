"""Workload definitions and seeded request-trace synthesis.

Arrival processes are either plain Poisson (the predictable setting) or a
regime-switching process that re-draws its distribution and rate on a fixed
epoch cadence (the unpredictable setting).  All generators are pure
functions of their inputs and a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "LengthSource",
    "AdapterSpec",
    "WorkloadSpec",
    "RequestEvent",
    "RequestTrace",
    "UnpredictableRegime",
    "gen_poisson_arrivals",
    "gen_unpredictable_arrivals",
    "synthesize_trace",
    "mean_lengths",
    "corpus_sampler",
    "load_length_corpus",
    "save_trace",
    "load_trace",
]

#: shape parameter of log-normal inter-arrival gaps (mean stays 1/rate)
LOGNORMAL_SIGMA = 1.0

#: default clip interval for the unpredictable regime, relative to the
#: initial rate
DEFAULT_BOUND_FACTOR = 8.0


class LengthSource(Enum):
    PER_REQUEST_SAMPLED = "per_request_sampled"
    MEAN_ONLY = "mean_only"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AdapterSpec:
    """One adapter: its rank (``size``) and mean arrival rate in req/s."""

    id: str
    size: int
    rate: float

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"adapter {self.id}: size must be > 0")
        if self.rate < 0:
            raise ValueError(f"adapter {self.id}: rate must be >= 0")


@dataclass(frozen=True)
class WorkloadSpec:
    adapters: tuple[AdapterSpec, ...]
    duration: float
    input_len_mean: float
    output_len_mean: float
    length_source: LengthSource = LengthSource.MEAN_ONLY

    def __post_init__(self) -> None:
        if not self.adapters:
            raise ValueError("workload needs at least one adapter")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.input_len_mean <= 0 or self.output_len_mean <= 0:
            raise ValueError("token length means must be > 0")
        ids = [a.id for a in self.adapters]
        if len(set(ids)) != len(ids):
            raise ValueError("adapter ids must be unique within a workload")
        object.__setattr__(self, "adapters", tuple(self.adapters))

    @property
    def rate_sum(self) -> float:
        return float(sum(a.rate for a in self.adapters))

    def to_dict(self) -> dict:
        return {
            "adapters": [[a.id, a.size, a.rate] for a in self.adapters],
            "duration": self.duration,
            "input_len_mean": self.input_len_mean,
            "output_len_mean": self.output_len_mean,
            "length_source": self.length_source.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        return cls(
            adapters=tuple(AdapterSpec(i, int(s), float(r)) for i, s, r in d["adapters"]),
            duration=float(d["duration"]),
            input_len_mean=float(d["input_len_mean"]),
            output_len_mean=float(d["output_len_mean"]),
            length_source=LengthSource(d["length_source"]),
        )


@dataclass(frozen=True)
class RequestEvent:
    arrival_time: float
    adapter_id: str
    input_len: int
    output_len: int


@dataclass
class RequestTrace:
    """A sorted request trace, stored column-wise for simulation speed.

    ``adapter`` holds indices into ``workload.adapters``; use ``events``
    for a record-oriented view.
    """

    workload: WorkloadSpec
    seed: int
    arrival: np.ndarray  # float64, nondecreasing
    adapter: np.ndarray  # int32 index into workload.adapters
    input_len: np.ndarray  # int32
    output_len: np.ndarray  # int32

    def __post_init__(self) -> None:
        n = len(self.arrival)
        if not (len(self.adapter) == len(self.input_len) == len(self.output_len) == n):
            raise ValueError("trace columns must have equal length")
        if n and np.any(np.diff(self.arrival) < 0):
            raise ValueError("trace must be sorted by arrival_time")
        if n and (self.adapter.min() < 0 or self.adapter.max() >= len(self.workload.adapters)):
            raise ValueError("trace references an adapter outside the workload")

    def __len__(self) -> int:
        return len(self.arrival)

    @property
    def events(self) -> list[RequestEvent]:
        ids = [a.id for a in self.workload.adapters]
        return [
            RequestEvent(float(t), ids[int(a)], int(i), int(o))
            for t, a, i, o in zip(self.arrival, self.adapter, self.input_len, self.output_len)
        ]


@dataclass(frozen=True)
class UnpredictableRegime:
    """Regime-switching arrival process: every ``epoch_length`` seconds the
    rate is multiplied or divided by ``factor`` (fair seeded coin), clipped
    to ``rate_bounds``, and the gap distribution is re-drawn."""

    epoch_length: float = 300.0
    factor: float = 2.0
    rate_bounds: tuple[float, float] | None = None
    distributions: tuple[str, ...] = ("poisson", "lognormal")

    def __post_init__(self) -> None:
        if self.epoch_length <= 0:
            raise ValueError("epoch_length must be > 0")
        if self.factor <= 1:
            raise ValueError("factor must be > 1")
        if self.rate_bounds is not None and self.rate_bounds[0] > self.rate_bounds[1]:
            raise ValueError("rate_bounds must satisfy min <= max")
        for d in self.distributions:
            if d not in ("poisson", "lognormal"):
                raise ValueError(f"unknown distribution {d!r}")

    def bounds_for(self, initial_rate: float) -> tuple[float, float]:
        if self.rate_bounds is not None:
            return self.rate_bounds
        return (initial_rate / DEFAULT_BOUND_FACTOR, initial_rate * DEFAULT_BOUND_FACTOR)


def gen_poisson_arrivals(rate: float, duration: float, seed: int) -> np.ndarray:
    """Arrival times of a Poisson process with the given rate on [0, duration)."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if rate == 0:
        return np.empty(0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return _gaps_until(duration, lambda n: rng.exponential(1.0 / rate, n), rate, start=0.0)


def _gaps_until(
    end: float, draw: Callable[[int], np.ndarray], rate: float, start: float
) -> np.ndarray:
    """Cumulative-sum gap draws from ``start`` until ``end`` is passed."""
    chunks: list[np.ndarray] = []
    t = start
    # oversample ~10%, then top up until the horizon is crossed
    n_guess = max(16, int(rate * (end - start) * 1.1) + 8)
    while True:
        times = t + np.cumsum(draw(n_guess))
        chunks.append(times)
        t = times[-1]
        if t >= end:
            break
        n_guess = max(16, n_guess // 4)
    out = np.concatenate(chunks)
    return out[out < end]


def _lognormal_gaps(rng: np.random.Generator, rate: float, n: int) -> np.ndarray:
    # mean of lognormal(mu, sigma) is exp(mu + sigma^2/2); solve for 1/rate
    mu = -math.log(rate) - 0.5 * LOGNORMAL_SIGMA**2
    return rng.lognormal(mu, LOGNORMAL_SIGMA, n)


def gen_unpredictable_arrivals(
    initial_rate: float,
    duration: float,
    regime: UnpredictableRegime,
    seed: int,
    forced_updates: Sequence[bool] | None = None,
) -> tuple[np.ndarray, list[tuple[str, float]]]:
    """Arrival times under the regime-switching process.

    Returns the merged arrival times and a per-epoch log of
    ``(distribution, rate)``.  ``forced_updates`` optionally replays a fixed
    sequence of rate-update coins (True = multiply) instead of drawing them.
    """
    if initial_rate <= 0:
        raise ValueError("initial_rate must be > 0")
    if duration <= 0:
        raise ValueError("duration must be > 0")
    lo, hi = regime.bounds_for(initial_rate)
    if not (lo <= initial_rate <= hi):
        raise ValueError(f"initial_rate {initial_rate} outside rate_bounds [{lo}, {hi}]")

    rng = np.random.default_rng(seed)
    n_epochs = int(math.ceil(duration / regime.epoch_length))
    rate = initial_rate
    pieces: list[np.ndarray] = []
    log: list[tuple[str, float]] = []
    for k in range(n_epochs):
        if k > 0:
            if forced_updates is not None:
                up = bool(forced_updates[k - 1])
            else:
                up = bool(rng.random() < 0.5)
            rate = rate * regime.factor if up else rate / regime.factor
            rate = min(max(rate, lo), hi)
        dist = regime.distributions[int(rng.integers(len(regime.distributions)))]
        log.append((dist, rate))
        t0 = k * regime.epoch_length
        t1 = min(duration, (k + 1) * regime.epoch_length)
        if dist == "poisson":
            draw = lambda n, r=rate: rng.exponential(1.0 / r, n)
        else:
            draw = lambda n, r=rate: _lognormal_gaps(rng, r, n)
        pieces.append(_gaps_until(t1, draw, rate, start=t0))
    times = np.concatenate(pieces) if pieces else np.empty(0)
    return times, log


LengthSampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]


def corpus_sampler(pairs: np.ndarray) -> LengthSampler:
    """Sampler drawing (input_len, output_len) rows uniformly from a corpus."""
    pairs = np.asarray(pairs)
    if pairs.size == 0:
        raise ValueError("length corpus is empty")
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("length corpus must be an (n, 2) array")

    def sample(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        rows = rng.integers(len(pairs), size=n)
        return pairs[rows, 0].astype(np.int32), pairs[rows, 1].astype(np.int32)

    return sample


def synthesize_trace(
    workload: WorkloadSpec,
    seed: int,
    length_sampler: LengthSampler | None = None,
    regime: UnpredictableRegime | None = None,
) -> RequestTrace:
    """Build a request trace for the workload.

    Per-adapter arrivals are generated independently (each adapter gets its
    own child seed) and merged sorted.  When ``regime`` is given, every
    adapter runs its own regime-switching process seeded independently.
    """
    if workload.length_source is LengthSource.PER_REQUEST_SAMPLED and length_sampler is None:
        raise ValueError("PER_REQUEST_SAMPLED needs a length_sampler")

    children = np.random.SeedSequence(seed).spawn(len(workload.adapters) + 1)
    arrivals: list[np.ndarray] = []
    owners: list[np.ndarray] = []
    for i, adapter in enumerate(workload.adapters):
        child_seed = children[i]
        if adapter.rate == 0:
            times = np.empty(0)
        elif regime is None:
            times = _gaps_until(
                workload.duration,
                lambda n, r=np.random.default_rng(child_seed), rate=adapter.rate: r.exponential(
                    1.0 / rate, n
                ),
                adapter.rate,
                start=0.0,
            )
        else:
            times, _ = gen_unpredictable_arrivals(
                adapter.rate,
                workload.duration,
                regime,
                child_seed,
            )
        arrivals.append(times)
        owners.append(np.full(len(times), i, dtype=np.int32))

    arrival = np.concatenate(arrivals) if arrivals else np.empty(0)
    adapter_idx = np.concatenate(owners) if owners else np.empty(0, dtype=np.int32)
    order = np.argsort(arrival, kind="stable")
    arrival = arrival[order]
    adapter_idx = adapter_idx[order]

    n = len(arrival)
    if workload.length_source is LengthSource.MEAN_ONLY:
        in_len = np.full(n, _round_half_up(workload.input_len_mean), dtype=np.int32)
        out_len = np.full(n, _round_half_up(workload.output_len_mean), dtype=np.int32)
    else:
        rng = np.random.default_rng(children[-1])
        in_len, out_len = length_sampler(rng, n)
        in_len = np.maximum(np.asarray(in_len, dtype=np.int32), 1)
        out_len = np.maximum(np.asarray(out_len, dtype=np.int32), 1)

    return RequestTrace(
        workload=workload,
        seed=seed,
        arrival=arrival,
        adapter=adapter_idx,
        input_len=in_len,
        output_len=out_len,
    )


def mean_lengths(trace: RequestTrace) -> RequestTrace:
    """Replace all request lengths by the (rounded half-up) trace means."""
    if len(trace) == 0:
        raise ValueError("mean_lengths needs a nonempty trace")
    mean_in = _round_half_up(float(np.mean(trace.input_len)))
    mean_out = _round_half_up(float(np.mean(trace.output_len)))
    return RequestTrace(
        workload=trace.workload,
        seed=trace.seed,
        arrival=trace.arrival.copy(),
        adapter=trace.adapter.copy(),
        input_len=np.full(len(trace), mean_in, dtype=np.int32),
        output_len=np.full(len(trace), mean_out, dtype=np.int32),
    )


# ---------------------------------------------------------------------------
# file formats

TRACE_SCHEMA = "lorapack-trace-v1"


def save_trace(trace: RequestTrace, path) -> None:
    ids = [a.id for a in trace.workload.adapters]
    with open(path, "w") as fh:
        fh.write(f"# schema={TRACE_SCHEMA}\n")
        fh.write(f"# seed={trace.seed}\n")
        fh.write(f"# workload={json.dumps(trace.workload.to_dict(), sort_keys=True)}\n")
        fh.write("arrival_time,adapter_id,input_len,output_len\n")
        for t, a, i, o in zip(trace.arrival, trace.adapter, trace.input_len, trace.output_len):
            fh.write(f"{float(t)!r},{ids[int(a)]},{int(i)},{int(o)}\n")


def load_trace(path) -> RequestTrace:
    header: dict[str, str] = {}
    rows: list[tuple[float, str, int, int]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value
                continue
            if line.startswith("arrival_time"):
                continue
            t, a, i, o = line.split(",")
            rows.append((float(t), a, int(i), int(o)))
    if header.get("schema") != TRACE_SCHEMA:
        raise ValueError(f"not a {TRACE_SCHEMA} file: {path}")
    workload = WorkloadSpec.from_dict(json.loads(header["workload"]))
    index = {a.id: i for i, a in enumerate(workload.adapters)}
    return RequestTrace(
        workload=workload,
        seed=int(header["seed"]),
        arrival=np.array([r[0] for r in rows], dtype=np.float64),
        adapter=np.array([index[r[1]] for r in rows], dtype=np.int32),
        input_len=np.array([r[2] for r in rows], dtype=np.int32),
        output_len=np.array([r[3] for r in rows], dtype=np.int32),
    )


def load_length_corpus(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            i, o = line.split(",")
            rows.append((int(i), int(o)))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)
