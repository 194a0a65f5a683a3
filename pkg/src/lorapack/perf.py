"""Predictive performance models of the serving engine.

Four estimators drive the twin: scheduler latency, adapter load latency,
model-step latency, and the maximum number of KV tokens that fit next to
the adapter weight reservation.  Their constants live in a
``CalibrationProfile`` fitted from profiling samples.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FitFailureError, MemoryExceededError

__all__ = [
    "SampleKind",
    "ProfilingSample",
    "CalibrationProfile",
    "ResidualReport",
    "mem_max",
    "lat_sched",
    "lat_load",
    "lat_model",
    "fit_calibration",
    "save_profile",
    "load_profile",
    "save_samples",
    "load_samples",
    "profile_hash",
]

PROFILE_SCHEMA = "lorapack-profile-v1"
SAMPLES_SCHEMA = "lorapack-samples-v1"


class SampleKind(Enum):
    SCHED_LAT = "sched_lat"  # inputs (B, R_P, A_B, A), observed ms
    MODEL_LAT = "model_lat"  # inputs (B, A), observed ms
    LOAD_LAT = "load_lat"  # inputs (size,), observed ms
    MEM_CAP = "mem_cap"  # inputs (A_max, S_max), observed tokens


@dataclass(frozen=True)
class ProfilingSample:
    kind: SampleKind
    inputs: tuple[float, ...]
    observed: float

    def __post_init__(self) -> None:
        if self.observed < 0:
            raise ValueError("observed value must be >= 0")


@dataclass
class CalibrationProfile:
    """Fitted constants and lookup tables of the four performance models.

    ``mem_table`` maps (A_max, S_max) grid points to the maximum number of
    concurrent KV tokens; ``load_table`` maps adapter size to CPU->GPU load
    latency in ms.  Treat instances as immutable after construction.
    """

    k1: float  # ms per batched request (scheduler)
    k2: float  # ms per pending request
    k3: float  # ms scan penalty per pending request
    k4: float  # ms per batched request (backbone)
    k5: float  # ms backbone intercept
    k6: float  # overhead slope per adapter
    k7: float  # overhead intercept
    gpu_capacity_tokens: float
    mem_table: dict[tuple[int, int], float]
    load_table: dict[int, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.k4 <= 0 or self.k5 < 0 or self.k6 < 0 or self.k7 < 1:
            raise ValueError("need k4 > 0, k5 >= 0, k6 >= 0, k7 >= 1")
        if not self.mem_table:
            raise ValueError("mem_table must be nonempty")
        if not self.load_table:
            raise ValueError("load_table must be nonempty")
        # dense grid arrays for interpolation
        self._a_axis = np.array(sorted({a for a, _ in self.mem_table}), dtype=float)
        self._s_axis = np.array(sorted({s for _, s in self.mem_table}), dtype=float)
        grid = np.empty((len(self._a_axis), len(self._s_axis)))
        for i, a in enumerate(self._a_axis):
            for j, s in enumerate(self._s_axis):
                try:
                    grid[i, j] = self.mem_table[(int(a), int(s))]
                except KeyError:
                    raise ValueError("mem_table must be a full (A_max, S_max) grid")
        if np.any(np.diff(grid, axis=0) > 1e-9) or np.any(np.diff(grid, axis=1) > 1e-9):
            raise ValueError("mem_table must be nonincreasing in A_max and S_max")
        self._mem_grid = grid
        sizes = np.array(sorted(self.load_table), dtype=float)
        loads = np.array([self.load_table[int(s)] for s in sizes])
        if np.any(np.diff(loads) < -1e-9):
            raise ValueError("load_table must be nondecreasing in size")
        self._load_sizes = sizes
        self._load_values = loads

    def feasible(self, a_max: int, s_max: int) -> bool:
        try:
            return mem_max(self, a_max, s_max) > 0
        except MemoryExceededError:
            return False

    def to_dict(self) -> dict:
        return {
            "schema": PROFILE_SCHEMA,
            "constants": {f"k{i}": getattr(self, f"k{i}") for i in range(1, 8)},
            "gpu_capacity_tokens": self.gpu_capacity_tokens,
            "mem_table": sorted([int(a), int(s), float(t)] for (a, s), t in self.mem_table.items()),
            "load_table": sorted([int(s), float(l)] for s, l in self.load_table.items()),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        if d.get("schema") != PROFILE_SCHEMA:
            raise ValueError(f"not a {PROFILE_SCHEMA} document")
        c = d["constants"]
        return cls(
            k1=float(c["k1"]),
            k2=float(c["k2"]),
            k3=float(c["k3"]),
            k4=float(c["k4"]),
            k5=float(c["k5"]),
            k6=float(c["k6"]),
            k7=float(c["k7"]),
            gpu_capacity_tokens=float(d["gpu_capacity_tokens"]),
            mem_table={(int(a), int(s)): float(t) for a, s, t in d["mem_table"]},
            load_table={int(s): float(l) for s, l in d["load_table"]},
            meta=dict(d.get("meta", {})),
        )


def _interp_extrap(xs: np.ndarray, ys: np.ndarray, x: float) -> float:
    """Piecewise-linear interpolation, linear extrapolation past the ends."""
    if len(xs) == 1:
        return float(ys[0])
    i = int(np.searchsorted(xs, x)) - 1
    i = min(max(i, 0), len(xs) - 2)
    x0, x1 = xs[i], xs[i + 1]
    y0, y1 = ys[i], ys[i + 1]
    return float(y0 + (y1 - y0) * (x - x0) / (x1 - x0))


def mem_max(profile: CalibrationProfile, a_max: int, s_max: int) -> float:
    """Max concurrent KV tokens under an (A_max, S_max) weight reservation."""
    if a_max < 0:
        raise ValueError("A_max must be >= 0")
    if s_max <= 0:
        raise ValueError("S_max must be > 0")
    if a_max == 0:
        return float(profile.gpu_capacity_tokens)
    cols = np.array(
        [_interp_extrap(profile._s_axis, profile._mem_grid[i], s_max)
         for i in range(len(profile._a_axis))]
    )
    value = _interp_extrap(profile._a_axis, cols, a_max)
    value = min(value, profile.gpu_capacity_tokens)
    if value <= 0:
        raise MemoryExceededError(
            f"(A_max={a_max}, S_max={s_max}) leaves no memory for KV tokens"
        )
    return value


def lat_sched(profile: CalibrationProfile, b: int, r_p: int, a_b: int, a: int) -> float:
    """Scheduler latency in ms for batch ``b`` and ``r_p`` pending requests."""
    if b < 0 or r_p < 0 or a_b < 0 or a < 0:
        raise ValueError("counts must be >= 0")
    if a_b > 0 and a == 0:
        raise ValueError("A must be >= 1 when A_B > 0")
    scan = 0.0 if a_b == 0 else profile.k3 * r_p * (a_b / a)
    return profile.k1 * b + profile.k2 * r_p + scan


def lat_load(profile: CalibrationProfile, size: int) -> float:
    """CPU->GPU load latency in ms for one adapter of the given rank."""
    if size <= 0:
        raise ValueError("size must be > 0")
    return max(0.0, _interp_extrap(profile._load_sizes, profile._load_values, size))


def _overhead(profile: CalibrationProfile, a: int) -> float:
    # the jump from zero to one adapter is discontinuous; below one adapter
    # the backbone runs bare
    return 1.0 if a == 0 else profile.k6 * a + profile.k7


def lat_model(profile: CalibrationProfile, b: int, a: int) -> float:
    """Model-step latency in ms: backbone line times adapter overhead."""
    if b < 0 or a < 0:
        raise ValueError("counts must be >= 0")
    if a > b:
        raise ValueError("distinct adapters in batch cannot exceed batch size")
    return (profile.k4 * b + profile.k5) * _overhead(profile, a)


@dataclass(frozen=True)
class ResidualReport:
    """Max absolute residual of each fitted group on its training samples."""

    max_abs_error: dict[str, float]
    n_samples: dict[str, int]


def _lstsq(design: np.ndarray, target: np.ndarray, label: str) -> np.ndarray:
    if len(target) < design.shape[1]:
        raise FitFailureError(f"{label}: need at least {design.shape[1]} samples")
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise FitFailureError(f"{label}: rank-deficient fit (identical abscissae?)")
    return coef


def fit_calibration(
    samples: list[ProfilingSample], meta: dict | None = None
) -> tuple[CalibrationProfile, ResidualReport]:
    """Fit all profile constants and tables from profiling samples."""
    by_kind: dict[SampleKind, list[ProfilingSample]] = {k: [] for k in SampleKind}
    for s in samples:
        by_kind[s.kind].append(s)

    backbone = [s for s in by_kind[SampleKind.MODEL_LAT] if s.inputs[1] == 0]
    adapters = [s for s in by_kind[SampleKind.MODEL_LAT] if s.inputs[1] >= 1]
    if len(backbone) < 2:
        raise FitFailureError("need >= 2 backbone-only ModelLat samples (A = 0)")
    bs = np.array([s.inputs[0] for s in backbone], dtype=float)
    obs = np.array([s.observed for s in backbone])
    k4, k5 = _lstsq(np.column_stack([bs, np.ones_like(bs)]), obs, "backbone")
    if k4 <= 0:
        raise FitFailureError("backbone slope k4 fitted non-positive")

    if len(adapters) < 2:
        raise FitFailureError("need >= 2 ModelLat samples with A >= 1")
    av = np.array([s.inputs[1] for s in adapters], dtype=float)
    ratio = np.array([s.observed / (k4 * s.inputs[0] + k5) for s in adapters])
    k6, k7 = _lstsq(np.column_stack([av, np.ones_like(av)]), ratio, "overhead")

    sched = by_kind[SampleKind.SCHED_LAT]
    if len(sched) < 3:
        raise FitFailureError("need >= 3 SchedLat samples")
    design = np.array(
        [
            [s.inputs[0], s.inputs[1], s.inputs[1] * (s.inputs[2] / s.inputs[3]) if s.inputs[2] else 0.0]
            for s in sched
        ]
    )
    sched_obs = np.array([s.observed for s in sched])
    k1, k2, k3 = _lstsq(design, sched_obs, "scheduler")

    loads = by_kind[SampleKind.LOAD_LAT]
    if not loads:
        raise FitFailureError("need LoadLat samples")
    load_acc: dict[int, list[float]] = {}
    for s in loads:
        load_acc.setdefault(int(s.inputs[0]), []).append(s.observed)
    load_table = {size: float(np.mean(v)) for size, v in load_acc.items()}

    mems = by_kind[SampleKind.MEM_CAP]
    if not mems:
        raise FitFailureError("need MemCap samples")
    mem_table: dict[tuple[int, int], float] = {}
    capacity = None
    for s in mems:
        a_max, s_max = int(s.inputs[0]), int(s.inputs[1])
        if a_max == 0:
            capacity = s.observed
        else:
            mem_table[(a_max, s_max)] = s.observed
    if capacity is None:
        capacity = max(mem_table.values())
    if not mem_table:
        # a capacity-only profile still needs one grid point
        mem_table = {(1, 1): capacity}

    profile = CalibrationProfile(
        k1=float(k1),
        k2=float(k2),
        k3=float(k3),
        k4=float(k4),
        k5=float(k5),
        k6=float(k6),
        k7=float(k7),
        gpu_capacity_tokens=float(capacity),
        mem_table=mem_table,
        load_table=load_table,
        meta=dict(meta or {}),
    )

    def _max_err(pred, group):
        errs = [abs(pred(s) - s.observed) for s in group]
        return float(max(errs)) if errs else 0.0

    report = ResidualReport(
        max_abs_error={
            "backbone": _max_err(lambda s: k4 * s.inputs[0] + k5, backbone),
            "overhead": _max_err(
                lambda s: lat_model(profile, int(s.inputs[0]), int(s.inputs[1])), adapters
            ),
            "scheduler": _max_err(
                lambda s: lat_sched(profile, *(int(v) for v in s.inputs)), sched
            ),
        },
        n_samples={"backbone": len(backbone), "overhead": len(adapters), "scheduler": len(sched)},
    )
    return profile, report


# ---------------------------------------------------------------------------
# file formats


def save_profile(profile: CalibrationProfile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_profile(path) -> CalibrationProfile:
    with open(path) as fh:
        return CalibrationProfile.from_dict(json.load(fh))


def profile_hash(profile: CalibrationProfile) -> str:
    blob = json.dumps(profile.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_samples(samples: list[ProfilingSample], path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# schema={SAMPLES_SCHEMA}\n")
        for s in samples:
            fields = ",".join(repr(float(v)) for v in s.inputs)
            fh.write(f"{s.kind.value},{fields},{s.observed!r}\n")


def load_samples(path) -> list[ProfilingSample]:
    out: list[ProfilingSample] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            kind = SampleKind(parts[0])
            values = [float(v) for v in parts[1:]]
            out.append(ProfilingSample(kind, tuple(values[:-1]), values[-1]))
    return out
