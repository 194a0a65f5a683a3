"""Synthetic calibration fixture.

Every number here is a made-up but internally consistent stand-in for
profiled hardware data, so the whole pipeline can run without a GPU.  None
of these values are measurements.
"""

from __future__ import annotations

import numpy as np

from .perf import CalibrationProfile, ProfilingSample, SampleKind

__all__ = [
    "synthetic_profile",
    "synthetic_samples",
    "INPUT_LEN_MEAN",
    "OUTPUT_LEN_MEAN",
]

# default request shape used across demos and tests
INPUT_LEN_MEAN = 250.0
OUTPUT_LEN_MEAN = 231.0

# scheduler coefficients keep the scheduler a small fraction of step time
# even under heavy backlog; k4/k5 set the backbone decode line
_K = dict(k1=0.02, k2=0.001, k3=0.01, k4=2.0, k5=20.0, k6=0.01, k7=1.11)
_CAPACITY = 100_000.0
#: tokens of KV headroom lost per reserved (adapter slot x rank unit)
_MEM_SLOPE = 12.0
_A_MAX_GRID = (8, 16, 32, 64, 96, 128, 160, 192, 256, 320, 384)
_S_MAX_GRID = (8, 16, 32, 64)
_LOAD_BASE = 30.0  # ms at rank 8
_LOAD_SLOPE = 5.0 / 3.0  # ms per rank unit


def _mem_value(a_max: int, s_max: int) -> float:
    return _CAPACITY - _MEM_SLOPE * a_max * s_max


def _load_value(size: int) -> float:
    return _LOAD_BASE + _LOAD_SLOPE * (size - 8)


def synthetic_profile() -> CalibrationProfile:
    """The fixture profile used when no real profiling data is supplied."""
    mem_table = {(a, s): _mem_value(a, s) for a in _A_MAX_GRID for s in _S_MAX_GRID}
    load_table = {s: _load_value(s) for s in _S_MAX_GRID}
    return CalibrationProfile(
        **_K,
        gpu_capacity_tokens=_CAPACITY,
        mem_table=mem_table,
        load_table=load_table,
        meta={"hardware": "synthetic-fixture", "model_name": "synthetic-fixture"},
    )


def synthetic_samples(noise: float = 0.0, seed: int = 0) -> list[ProfilingSample]:
    """Profiling samples generated exactly from the fixture's functional
    forms (plus optional i.i.d. gaussian noise on the latency groups)."""
    rng = np.random.default_rng(seed)
    k = _K
    out: list[ProfilingSample] = []

    def jitter() -> float:
        return float(rng.normal(0.0, noise)) if noise else 0.0

    for b in (0, 8, 32, 64, 128, 256):
        out.append(
            ProfilingSample(SampleKind.MODEL_LAT, (b, 0), k["k4"] * b + k["k5"] + jitter())
        )
    for b, a in ((8, 1), (8, 4), (32, 8), (64, 16), (128, 32), (256, 64)):
        base = k["k4"] * b + k["k5"]
        out.append(
            ProfilingSample(SampleKind.MODEL_LAT, (b, a), base * (k["k6"] * a + k["k7"]) + jitter())
        )
    for b, r_p, a_b, a in (
        (0, 0, 0, 16),
        (8, 100, 4, 16),
        (32, 50, 8, 64),
        (64, 400, 16, 128),
        (128, 1000, 32, 384),
        (16, 10, 2, 8),
    ):
        scan = k["k3"] * r_p * (a_b / a) if a_b else 0.0
        out.append(
            ProfilingSample(
                SampleKind.SCHED_LAT,
                (b, r_p, a_b, a),
                max(0.0, k["k1"] * b + k["k2"] * r_p + scan + jitter()),
            )
        )
    for s in _S_MAX_GRID:
        out.append(ProfilingSample(SampleKind.LOAD_LAT, (s,), _load_value(s)))
    out.append(ProfilingSample(SampleKind.MEM_CAP, (0, 8), _CAPACITY))
    for a in _A_MAX_GRID:
        for s in _S_MAX_GRID:
            # measured capacity cannot go negative; infeasible corners read 0
            out.append(ProfilingSample(SampleKind.MEM_CAP, (a, s), max(0.0, _mem_value(a, s))))
    return out
