"""Digital twin of a multi-adapter continuous-batching serving engine.

The twin replays a request trace against an emulated scheduler, adapter
cache and model component.  The simulated clock only advances by latencies
computed from the calibration profile, so a long serving run takes a
fraction of its simulated duration on one CPU core.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NoFeasiblePointError
from .perf import CalibrationProfile, lat_load, lat_model, lat_sched, mem_max
from .workload import RequestTrace, WorkloadSpec

__all__ = [
    "DeviceConfig",
    "SimState",
    "SimMetrics",
    "run_simulation",
    "sim_step",
    "starvation_label",
    "sweep_max_pack",
    "SweepPoint",
    "save_metrics",
    "load_metrics",
]

#: KV tokens reserved beyond the prompt at admission time (upcoming-token window)
KV_LOOKAHEAD = 16
#: fraction of simulated time excluded from metric aggregation
WARMUP_FRACTION = 0.05

METRICS_SCHEMA = "lorapack-metrics-v1"


@dataclass(frozen=True)
class DeviceConfig:
    """Static GPU configuration: adapter slot count and per-slot rank."""

    a_max: int
    s_max: int

    def __post_init__(self) -> None:
        if self.a_max < 1:
            raise ValueError("a_max must be >= 1")
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")


class _Request:
    __slots__ = ("rid", "event", "adapter", "in_len", "out_len", "arrival",
                 "admit_step", "first_token_clock")

    def __init__(self, rid, event, adapter, in_len, out_len, arrival, admit_step):
        self.rid = rid
        self.event = event
        self.adapter = adapter
        self.in_len = in_len
        self.out_len = out_len
        self.arrival = arrival
        self.admit_step = admit_step
        self.first_token_clock = 0.0


class SimState:
    """Mutable state of one simulation; advanced in place by :func:`sim_step`.

    Pending requests live in per-adapter FIFO queues plus a heap over queue
    heads, which keeps global FIFO admission order while letting a step skip
    every request of an unloadable adapter in O(log A).
    """

    def __init__(
        self,
        trace: RequestTrace,
        device: DeviceConfig,
        profile: CalibrationProfile,
        check_invariants: bool = True,
        timeline_dt: float = 1.0,
    ):
        self.trace = trace
        self.device = device
        self.profile = profile
        self.check_invariants = check_invariants
        self.timeline_dt = timeline_dt

        # raises MemoryExceededError for infeasible devices
        self.t_max = mem_max(profile, device.a_max, device.s_max)
        self.n_adapters = len(trace.workload.adapters)
        self.adapter_sizes = [a.size for a in trace.workload.adapters]

        self.clock = 0.0
        self.step_index = 0
        self.next_event = 0  # pointer into the trace columns

        self.queues: list[deque[int]] = [deque() for _ in range(self.n_adapters)]
        self.heads: list[tuple[int, int]] = []  # heap of (event_idx, adapter)
        self.pending_count = 0

        self.running: dict[int, _Request] = {}
        self.finish_heap: list[tuple[int, int]] = []  # (finish step, rid)
        self.admit_stack: list[int] = []  # rids, most recent last
        self.next_rid = 0

        self.loaded: dict[int, int] = {}  # adapter -> last-use step
        self.running_per_adapter: dict[int, int] = {}
        self.distinct_running = 0
        self.kv_used = 0

        # conservation counters (tokens)
        self.injected_requests = 0
        self.injected_tokens = 0
        self.processed_tokens = 0
        self.completed_requests = 0
        self.completed_tokens = 0
        self.preempt_lost_tokens = 0
        self.preemptions = 0

        # raw material for SimMetrics
        self.completions: list[tuple[float, float, float, int, int]] = []
        # (arrival, first_token_clock, completion_clock, in_len, out_len)
        self.itl_samples: list[tuple[float, float, int]] = []  # (end clock, lat ms, B)
        self.timeline: list[tuple[float, int, int]] = [(0.0, 0, 0)]
        self._next_sample = timeline_dt

    # -- helpers -----------------------------------------------------------

    def _push_head(self, adapter: int) -> None:
        q = self.queues[adapter]
        if q:
            heapq.heappush(self.heads, (q[0], adapter))

    def _valid_head(self) -> tuple[int, int] | None:
        while self.heads:
            event, adapter = self.heads[0]
            q = self.queues[adapter]
            if q and q[0] == event:
                return event, adapter
            heapq.heappop(self.heads)  # stale
        return None

    def _inject_arrivals(self) -> None:
        arrival = self.trace.arrival
        n = len(arrival)
        i = self.next_event
        while i < n and arrival[i] <= self.clock:
            a = int(self.trace.adapter[i])
            was_empty = not self.queues[a]
            self.queues[a].append(i)
            if was_empty:
                self._push_head(a)
            self.pending_count += 1
            self.injected_requests += 1
            self.injected_tokens += int(self.trace.input_len[i]) + int(self.trace.output_len[i])
            i += 1
        self.next_event = i

    def _evictable_lru(self) -> int | None:
        best, best_step = None, None
        for adapter, last_use in self.loaded.items():
            if self.running_per_adapter.get(adapter, 0) == 0:
                if best_step is None or last_use < best_step or (
                    last_use == best_step and adapter < best
                ):
                    best, best_step = adapter, last_use
        return best

    def _admit(self) -> tuple[list[_Request], float]:
        """FIFO admission; returns newly admitted requests and load latency."""
        admitted: list[_Request] = []
        load_ms = 0.0
        deferred: list[tuple[int, int]] = []
        while True:
            head = self._valid_head()
            if head is None:
                break
            event, adapter = head
            in_len = int(self.trace.input_len[event])
            if self.kv_used + in_len + KV_LOOKAHEAD > self.t_max:
                break  # KV-blocked: admission stops for this step
            if adapter not in self.loaded:
                if len(self.loaded) < self.device.a_max:
                    self.loaded[adapter] = self.step_index
                    load_ms += lat_load(self.profile, self.adapter_sizes[adapter])
                else:
                    victim = self._evictable_lru()
                    if victim is None:
                        # whole adapter is unloadable this step: set it aside
                        heapq.heappop(self.heads)
                        deferred.append((event, adapter))
                        continue
                    del self.loaded[victim]
                    self.loaded[adapter] = self.step_index
                    load_ms += lat_load(self.profile, self.adapter_sizes[adapter])
            # admit the head request of this adapter
            heapq.heappop(self.heads)
            self.queues[adapter].popleft()
            self._push_head(adapter)
            self.pending_count -= 1
            req = _Request(
                self.next_rid,
                event,
                adapter,
                in_len,
                int(self.trace.output_len[event]),
                float(self.trace.arrival[event]),
                self.step_index,
            )
            self.next_rid += 1
            self.running[req.rid] = req
            self.admit_stack.append(req.rid)
            heapq.heappush(self.finish_heap, (req.admit_step + req.out_len - 1, req.rid))
            count = self.running_per_adapter.get(adapter, 0)
            if count == 0:
                self.distinct_running += 1
            self.running_per_adapter[adapter] = count + 1
            self.loaded[adapter] = self.step_index
            self.kv_used += in_len
            self.processed_tokens += in_len  # prefill happens at admission
            admitted.append(req)
        for entry in deferred:
            heapq.heappush(self.heads, entry)
        return admitted, load_ms

    def _release(self, req: _Request) -> None:
        del self.running[req.rid]
        count = self.running_per_adapter[req.adapter] - 1
        self.running_per_adapter[req.adapter] = count
        if count == 0:
            self.distinct_running -= 1
            if req.adapter in self.loaded:
                self.loaded[req.adapter] = self.step_index

    def _preempt_victim(self) -> bool:
        """Preempt the most recently admitted unfinished request."""
        keep_back: list[int] = []
        victim = None
        while self.admit_stack:
            rid = self.admit_stack.pop()
            req = self.running.get(rid)
            if req is None:
                continue
            generated = self.step_index - req.admit_step + 1
            if generated >= req.out_len:
                keep_back.append(rid)  # finished this step; not a victim
                continue
            victim = req
            break
        self.admit_stack.extend(reversed(keep_back))
        if victim is None:
            return False
        generated = self.step_index - victim.admit_step + 1
        self._release(victim)
        self.kv_used -= victim.in_len + generated
        self.preempt_lost_tokens += victim.in_len + generated
        self.preemptions += 1
        # requeue at the pending head; recompute on resume
        self.queues[victim.adapter].appendleft(victim.event)
        self._push_head(victim.adapter)
        self.pending_count += 1
        return True

    # -- one step ----------------------------------------------------------

    def step(self) -> None:
        self._inject_arrivals()
        admitted, load_ms = self._admit()

        batch = len(self.running)
        distinct = self.distinct_running
        sched_ms = lat_sched(self.profile, batch, self.pending_count, distinct, self.n_adapters)
        model_ms = lat_model(self.profile, batch, distinct)
        step_ms = sched_ms + load_ms + model_ms
        self.clock += step_ms / 1000.0
        for req in admitted:
            req.first_token_clock = self.clock

        # decode: each running request grows its KV by one token
        self.kv_used += batch
        self.processed_tokens += batch

        # retire requests whose final token was produced this step
        while self.finish_heap and self.finish_heap[0][0] <= self.step_index:
            _, rid = heapq.heappop(self.finish_heap)
            req = self.running.get(rid)
            if req is None or self.step_index - req.admit_step + 1 < req.out_len:
                continue
            self._release(req)
            self.kv_used -= req.in_len + req.out_len
            self.completed_requests += 1
            self.completed_tokens += req.in_len + req.out_len
            self.completions.append(
                (req.arrival, req.first_token_clock, self.clock, req.in_len, req.out_len)
            )

        # KV overflow preempts the most recently admitted requests
        while self.kv_used > self.t_max:
            if not self._preempt_victim():  # pragma: no cover - defensive
                raise RuntimeError("KV overflow with no preemptable request")

        self.itl_samples.append((self.clock, step_ms, batch))
        while self.clock >= self._next_sample:
            self.timeline.append((self._next_sample, len(self.running), self.pending_count))
            self._next_sample += self.timeline_dt

        if self.check_invariants:
            assert self.kv_used <= self.t_max, "KV capacity exceeded"
            assert len(self.loaded) <= self.device.a_max, "adapter slots exceeded"
            assert (
                self.processed_tokens
                == self.completed_tokens + self.kv_used + self.preempt_lost_tokens
            ), "token conservation violated"
            assert (
                self.injected_requests
                == self.completed_requests + len(self.running) + self.pending_count
            ), "request conservation violated"
        self.step_index += 1


def sim_step(state: SimState) -> SimState:
    """Advance the simulation by one scheduling step (in place)."""
    state.step()
    return state


@dataclass
class SimMetrics:
    """Aggregate results of one simulation (warmup window excluded)."""

    throughput: float  # completed input+output tokens per second
    incoming_token_rate: float
    itl_mean_ms: float
    ttft_mean_ms: float
    duration: float
    warmup: float
    completed_requests: int
    injected_requests: int
    preemptions: int
    steps: int
    timeline_t: np.ndarray
    timeline_running: np.ndarray
    timeline_waiting: np.ndarray
    request_records: np.ndarray  # columns: arrival, ttft_ms, completion, tokens
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": METRICS_SCHEMA,
            "throughput": self.throughput,
            "incoming_token_rate": self.incoming_token_rate,
            "itl_mean_ms": self.itl_mean_ms,
            "ttft_mean_ms": self.ttft_mean_ms,
            "duration": self.duration,
            "warmup": self.warmup,
            "completed_requests": self.completed_requests,
            "injected_requests": self.injected_requests,
            "preemptions": self.preemptions,
            "steps": self.steps,
            "seed": self.seed,
            "timeline": [
                [float(t), int(r), int(w)]
                for t, r, w in zip(self.timeline_t, self.timeline_running, self.timeline_waiting)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimMetrics":
        if d.get("schema") != METRICS_SCHEMA:
            raise ValueError(f"not a {METRICS_SCHEMA} document")
        tl = np.array(d["timeline"], dtype=float).reshape(-1, 3)
        return cls(
            throughput=d["throughput"],
            incoming_token_rate=d["incoming_token_rate"],
            itl_mean_ms=d["itl_mean_ms"],
            ttft_mean_ms=d["ttft_mean_ms"],
            duration=d["duration"],
            warmup=d["warmup"],
            completed_requests=d["completed_requests"],
            injected_requests=d["injected_requests"],
            preemptions=d["preemptions"],
            steps=d["steps"],
            timeline_t=tl[:, 0],
            timeline_running=tl[:, 1].astype(int),
            timeline_waiting=tl[:, 2].astype(int),
            request_records=np.empty((0, 4)),
            seed=d.get("seed", 0),
        )


def _collect_metrics(state: SimState, duration: float) -> SimMetrics:
    warmup = WARMUP_FRACTION * duration
    span = duration - warmup

    records = np.array(
        [
            (arr, (first - arr) * 1000.0, done, in_len + out_len)
            for arr, first, done, in_len, out_len in state.completions
        ],
        dtype=float,
    ).reshape(-1, 4)

    in_window = (records[:, 2] > warmup) & (records[:, 2] <= duration) if len(records) else np.empty(0, bool)
    throughput = float(records[in_window, 3].sum() / span) if len(records) else 0.0

    arrivals = state.trace.arrival
    token_mask = (arrivals >= warmup) & (arrivals < duration)
    incoming_tokens = float(
        (state.trace.input_len[token_mask] + state.trace.output_len[token_mask]).sum()
    )
    incoming_rate = incoming_tokens / span

    itl_num = itl_den = 0.0
    for end_clock, lat_ms, batch in state.itl_samples:
        if warmup < end_clock <= duration and batch > 0:
            itl_num += lat_ms * batch
            itl_den += batch
    itl_mean = itl_num / itl_den if itl_den else 0.0

    ttft_mask = (
        (records[:, 0] + records[:, 1] / 1000.0 > warmup) if len(records) else np.empty(0, bool)
    )
    ttft_mean = float(records[ttft_mask, 1].mean()) if len(records) and ttft_mask.any() else 0.0

    tl = np.array(state.timeline, dtype=float).reshape(-1, 3)
    return SimMetrics(
        throughput=throughput,
        incoming_token_rate=incoming_rate,
        itl_mean_ms=itl_mean,
        ttft_mean_ms=ttft_mean,
        duration=duration,
        warmup=warmup,
        completed_requests=state.completed_requests,
        injected_requests=state.injected_requests,
        preemptions=state.preemptions,
        steps=state.step_index,
        timeline_t=tl[:, 0],
        timeline_running=tl[:, 1].astype(int),
        timeline_waiting=tl[:, 2].astype(int),
        request_records=records,
        seed=state.trace.seed,
    )


def run_simulation(
    trace: RequestTrace,
    device: DeviceConfig,
    profile: CalibrationProfile,
    duration: float | None = None,
    check_invariants: bool = True,
    timeline_dt: float = 1.0,
) -> SimMetrics:
    """Simulate the trace on one device until the simulated clock passes
    ``duration`` (default: the workload duration)."""
    if duration is None:
        duration = trace.workload.duration
    if duration <= 0:
        raise ValueError("duration must be > 0")
    state = SimState(trace, device, profile, check_invariants, timeline_dt)
    while state.clock < duration:
        state.step()
    return _collect_metrics(state, duration)


def starvation_label(metrics: SimMetrics) -> bool:
    """True when throughput fell below 90% of the incoming token rate."""
    if metrics.incoming_token_rate == 0:
        return False
    return metrics.throughput < 0.9 * metrics.incoming_token_rate


@dataclass(frozen=True)
class SweepPoint:
    n_adapters: int
    a_max: int
    s_max: int
    throughput: float
    incoming_token_rate: float
    starved: bool
    infeasible: bool


def sweep_max_pack(
    make_workload: Callable[[int], WorkloadSpec],
    adapter_counts: Sequence[int],
    device_configs: Sequence[DeviceConfig],
    profile: CalibrationProfile,
    seed: int = 0,
    duration: float | None = None,
) -> tuple[list[SweepPoint], SweepPoint]:
    """Simulate every (adapter count, device config) point and locate the
    highest-throughput non-starved point (the packing knee)."""
    from .workload import synthesize_trace  # cycle-free local import

    if not adapter_counts or not device_configs:
        raise ValueError("adapter_counts and device_configs must be nonempty")
    points: list[SweepPoint] = []
    for count in adapter_counts:
        workload = make_workload(count)
        trace = synthesize_trace(workload, seed)
        for device in device_configs:
            if not profile.feasible(device.a_max, device.s_max):
                points.append(
                    SweepPoint(count, device.a_max, device.s_max, 0.0, 0.0, True, True)
                )
                continue
            metrics = run_simulation(trace, device, profile, duration)
            points.append(
                SweepPoint(
                    count,
                    device.a_max,
                    device.s_max,
                    metrics.throughput,
                    metrics.incoming_token_rate,
                    starvation_label(metrics),
                    False,
                )
            )
    healthy = [p for p in points if not p.starved and not p.infeasible]
    if not healthy:
        raise NoFeasiblePointError("every sweep point is starved or infeasible")
    best = max(healthy, key=lambda p: p.throughput)
    return points, best


def save_metrics(metrics: SimMetrics, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_metrics(path) -> SimMetrics:
    with open(path) as fh:
        return SimMetrics.from_dict(json.load(fh))
