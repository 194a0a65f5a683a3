"""Greedy adapter-to-GPU packing driven by surrogate predictors.

The proposed strategy sorts adapters (largest size first, rates zigzagged),
then fills one GPU at a time: adapters are included provisionally, and at
each testing point a surrogate throughput/starvation check either commits
them or rolls them back and retires the GPU.  Baselines (MaxBase, random,
ProposedLat) are included for comparison.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .errors import StarvationError
from .perf import CalibrationProfile
from .surrogate import FeatureVector, featurize
from .workload import AdapterSpec

__all__ = [
    "DEFAULT_TESTING_POINTS",
    "ThroughputModel",
    "StarvationModel",
    "PlacementProblem",
    "GpuState",
    "PlacementResult",
    "TestOutcome",
    "priority_sorting",
    "next_gpu_config",
    "test_allocation",
    "allocate",
    "max_base",
    "random_placement",
    "proposed_lat",
    "save_plan",
    "load_plan",
]

DEFAULT_TESTING_POINTS = (8, 16, 32, 64, 96, 128, 160, 192, 256, 320, 384)

PLAN_SCHEMA = "lorapack-plan-v1"


class ThroughputModel(Protocol):
    def predict_one(self, fv: FeatureVector) -> float: ...


class StarvationModel(Protocol):
    def predict_one(self, fv: FeatureVector) -> bool: ...


@dataclass(frozen=True)
class PlacementProblem:
    adapters: tuple[AdapterSpec, ...]
    n_gpus: int
    throughput_model: ThroughputModel
    starvation_model: StarvationModel
    testing_points: tuple[int, ...] = DEFAULT_TESTING_POINTS
    input_len_mean: float = 250.0
    output_len_mean: float = 231.0
    profile: CalibrationProfile | None = None

    def __post_init__(self) -> None:
        if not self.adapters:
            raise ValueError("adapters must be nonempty")
        if self.n_gpus < 1:
            raise ValueError("n_gpus must be >= 1")
        pts = tuple(int(p) for p in self.testing_points)
        if not pts or any(b <= a for a, b in zip(pts, pts[1:])) or pts[0] < 1:
            raise ValueError("testing_points must be strictly increasing positive counts")
        object.__setattr__(self, "testing_points", pts)
        object.__setattr__(self, "adapters", tuple(self.adapters))
        ids = [a.id for a in self.adapters]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate adapter ids")

    @property
    def mean_request_tokens(self) -> float:
        return self.input_len_mean + self.output_len_mean


@dataclass
class GpuState:
    committed: list[AdapterSpec] = field(default_factory=list)
    provisional: list[AdapterSpec] = field(default_factory=list)
    a_max: int = 0

    @property
    def members(self) -> list[AdapterSpec]:
        return self.committed + self.provisional

    @property
    def s_max(self) -> int:
        members = self.members
        return max(a.size for a in members) if members else 0


@dataclass(frozen=True)
class PlacementResult:
    assignment: dict[str, int]
    a_max_per_gpu: dict[int, int]
    gpus_used: int
    strategy: str

    def __post_init__(self) -> None:
        gpus = set(self.assignment.values())
        if gpus != set(self.a_max_per_gpu):
            raise ValueError("a_max_per_gpu keys must match assigned GPUs")
        if self.gpus_used != len(gpus):
            raise ValueError("gpus_used must equal the distinct GPU count")


def priority_sorting(adapters: Sequence[AdapterSpec]) -> list[AdapterSpec]:
    """Size groups largest first; within a group, rates sorted descending
    and interleaved highest, lowest, 2nd highest, 2nd lowest, and so on."""
    if not adapters:
        raise ValueError("adapters must be nonempty")
    ordered = sorted(adapters, key=lambda a: (-a.size, -a.rate, a.id))
    out: list[AdapterSpec] = []
    start = 0
    while start < len(ordered):
        end = start
        while end < len(ordered) and ordered[end].size == ordered[start].size:
            end += 1
        group = ordered[start:end]
        # alternate between the descending and ascending rate orders,
        # skipping already-emitted adapters; the (rate, id) keys make
        # all-equal groups come out in plain id order
        asc = sorted(group, key=lambda a: (a.rate, a.id))
        emitted: set[str] = set()
        i = j = 0
        take_high = True
        while len(emitted) < len(group):
            src = group if take_high else asc
            idx = i if take_high else j
            while src[idx].id in emitted:
                idx += 1
            out.append(src[idx])
            emitted.add(src[idx].id)
            if take_high:
                i = idx + 1
            else:
                j = idx + 1
            take_high = not take_high
        start = end
    return out


def next_gpu_config(state: GpuState, testing_points: Sequence[int]) -> int:
    for p in testing_points:
        if p > state.a_max:
            return int(p)
    return int(state.a_max)


class TestOutcome(NamedTuple):
    ok: bool
    alloc: frozenset[str]
    a_max: int
    memory_infeasible: bool = False


_REJECT = TestOutcome(False, frozenset(), 0)
_REJECT_MEM = TestOutcome(False, frozenset(), 0, True)


def _feasible(problem: PlacementProblem, a_max: int, s_max: int) -> bool:
    if problem.profile is None:
        return True
    return problem.profile.feasible(a_max, s_max)


def test_allocation(state: GpuState, problem: PlacementProblem) -> TestOutcome:
    """Compare predicted throughput at the current and next A_max and keep
    the better config (ties keep the smaller reservation), then veto the
    choice if starvation is predicted there."""
    if not state.provisional:
        raise ValueError("test_allocation needs at least one provisional adapter")
    members = state.members
    s_max = max(a.size for a in members)
    candidates = []
    if state.a_max > 0:
        candidates.append(state.a_max)
    nxt = next_gpu_config(state, problem.testing_points)
    if nxt not in candidates:
        candidates.append(nxt)
    candidates = [c for c in candidates if _feasible(problem, c, s_max)]
    if not candidates:
        return _REJECT_MEM
    best_a_max = candidates[0]
    best_t = problem.throughput_model.predict_one(featurize(members, best_a_max))
    for c in candidates[1:]:
        t = problem.throughput_model.predict_one(featurize(members, c))
        if t > best_t:
            best_t, best_a_max = t, c
    if problem.starvation_model.predict_one(featurize(members, best_a_max)):
        return _REJECT
    return TestOutcome(True, frozenset(a.id for a in state.provisional), best_a_max)


def _reach_testing_point(count: int, testing_points: Sequence[int]) -> bool:
    return count in testing_points or count > testing_points[-1]


def allocate(problem: PlacementProblem, strategy: str = "proposed") -> PlacementResult:
    """Greedy minimum-GPU packing with testing-point validation."""
    pending = deque(priority_sorting(problem.adapters))
    gpu_ids = deque(range(problem.n_gpus))
    finished: list[tuple[int, GpuState]] = []

    while pending:
        if not gpu_ids:
            raise StarvationError(
                f"workload not servable on {problem.n_gpus} GPU(s): adapters remain "
                "after every GPU was exhausted"
            )
        gid = gpu_ids.popleft()
        state = GpuState()
        failed = False
        while pending:
            state.provisional.append(pending.popleft())
            count = len(state.members)
            if _reach_testing_point(count, problem.testing_points):
                outcome = test_allocation(state, problem)
                if outcome.ok:
                    state.committed.extend(state.provisional)
                    state.provisional.clear()
                    state.a_max = outcome.a_max
                else:
                    # merge the rejected provisionals back to the queue front,
                    # preserving priority order; this GPU is not reused
                    pending.extendleft(reversed(state.provisional))
                    state.provisional.clear()
                    failed = True
                    break
        if not failed and state.provisional:
            # residue below the next testing point: one final validation
            outcome = test_allocation(state, problem)
            if outcome.ok:
                state.committed.extend(state.provisional)
                state.provisional.clear()
                state.a_max = outcome.a_max
            else:
                # retire this GPU with what it already committed and hand the
                # residue to the next one
                pending.extendleft(reversed(state.provisional))
                state.provisional.clear()
                failed = True
        if state.committed:
            finished.append((gid, state))
        if failed and not state.committed:
            # a fresh GPU rejected its very first batch: no GPU can serve it
            raise StarvationError(
                "a testing-point batch is unservable on an empty GPU"
            )

    assignment: dict[str, int] = {}
    a_max_per_gpu: dict[int, int] = {}
    for gid, state in finished:
        for a in state.committed:
            assignment[a.id] = gid
        a_max_per_gpu[gid] = state.a_max
    return PlacementResult(assignment, a_max_per_gpu, len(a_max_per_gpu), strategy)


def max_base(
    problem: PlacementProblem, backbone_max_throughput: float, halve: bool = False
) -> PlacementResult:
    """Fill each GPU until the aggregate token rate reaches the backbone cap."""
    if backbone_max_throughput <= 0:
        raise ValueError("backbone_max_throughput must be > 0")
    mt = problem.mean_request_tokens
    assignment: dict[str, int] = {}
    counts: dict[int, int] = {}
    gid = 0
    acc = 0.0
    for a in problem.adapters:
        if gid >= problem.n_gpus:
            raise StarvationError("backbone capacity exceeded with all GPUs full")
        assignment[a.id] = gid
        counts[gid] = counts.get(gid, 0) + 1
        acc += a.rate * mt
        if acc >= backbone_max_throughput:
            gid += 1
            acc = 0.0
    a_max_per_gpu = {
        g: (math.ceil(c / 2) if halve else c) for g, c in counts.items()
    }
    strategy = "maxbase-star" if halve else "maxbase"
    return PlacementResult(assignment, a_max_per_gpu, len(counts), strategy)


def random_placement(problem: PlacementProblem, seed: int) -> PlacementResult:
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    counts: dict[int, int] = {}
    for a in problem.adapters:
        gid = int(rng.integers(problem.n_gpus))
        assignment[a.id] = gid
        counts[gid] = counts.get(gid, 0) + 1
    a_max_per_gpu = {g: int(rng.integers(1, c + 1)) for g, c in sorted(counts.items())}
    return PlacementResult(assignment, a_max_per_gpu, len(counts), "random")


def proposed_lat(problem: PlacementProblem) -> PlacementResult:
    """Latency-oriented baseline: descending-rate adapters onto the GPU with
    the lowest aggregate rate; A_max is simply the adapter count per GPU."""
    order = sorted(problem.adapters, key=lambda a: (-a.rate, a.id))
    loads = [0.0] * problem.n_gpus
    groups: dict[int, list[AdapterSpec]] = {}
    assignment: dict[str, int] = {}
    for a in order:
        gid = min(range(problem.n_gpus), key=lambda g: (loads[g], g))
        loads[gid] += a.rate
        assignment[a.id] = gid
        groups.setdefault(gid, []).append(a)
    a_max_per_gpu = {}
    for gid, members in sorted(groups.items()):
        a_max = len(members)
        s_max = max(a.size for a in members)
        if not _feasible(problem, a_max, s_max):
            raise StarvationError(f"GPU {gid}: configuration is memory-infeasible")
        if problem.starvation_model.predict_one(featurize(members, a_max)):
            raise StarvationError(f"GPU {gid}: starvation predicted")
        a_max_per_gpu[gid] = a_max
    return PlacementResult(assignment, a_max_per_gpu, len(groups), "proposed-lat")


def save_plan(
    result: PlacementResult, problem: PlacementProblem, path, meta: dict | None = None
) -> None:
    """Deterministic plan file with per-GPU configuration and predictions."""
    by_id = {a.id: a for a in problem.adapters}
    per_gpu = {}
    for gid in sorted(result.a_max_per_gpu):
        members = [by_id[aid] for aid, g in sorted(result.assignment.items()) if g == gid]
        a_max = result.a_max_per_gpu[gid]
        fv = featurize(members, a_max)
        per_gpu[str(gid)] = {
            "a_max": a_max,
            "s_max": max(a.size for a in members),
            "adapters": sorted(a.id for a in members),
            "predicted_throughput": float(problem.throughput_model.predict_one(fv)),
            "predicted_starved": bool(problem.starvation_model.predict_one(fv)),
        }
    doc = {
        "schema": PLAN_SCHEMA,
        "meta": dict(sorted((meta or {}).items())),
        "strategy": result.strategy,
        "gpus_used": result.gpus_used,
        "assignment": dict(sorted(result.assignment.items())),
        "gpus": per_gpu,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_plan(path) -> PlacementResult:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"not a {PLAN_SCHEMA} document")
    a_max_per_gpu = {int(g): int(v["a_max"]) for g, v in doc["gpus"].items()}
    return PlacementResult(
        assignment=dict(doc["assignment"]),
        a_max_per_gpu=a_max_per_gpu,
        gpus_used=int(doc["gpus_used"]),
        strategy=doc["strategy"],
    )
