"""Pack adapters onto the fewest GPUs using stub predictors.

The greedy allocator pulls adapters in priority order and validates each
candidate batch at configured testing points.  A stub capacity model keeps
the demo self-contained; swap in trained surrogates (see
demo_surrogate_training.py) for twin-calibrated decisions.
"""

import numpy as np

from lorapack import AdapterSpec, PlacementProblem, allocate, max_base
from lorapack.errors import StarvationError

MEAN_TOKENS = 481.0  # 250 input + 231 output tokens per request


class CapacityStub:
    """Sustainable token rate grows with a_max up to a hard device limit."""

    def __init__(self, per_slot=60.0, limit=1500.0):
        self.per_slot = per_slot
        self.limit = limit

    def cap(self, a_max):
        return min(a_max * self.per_slot, self.limit)

    def predict_one(self, fv):
        return min(fv.rate_sum * MEAN_TOKENS, self.cap(fv.a_max))


class StarvationStub(CapacityStub):
    def predict_one(self, fv):
        return fv.rate_sum * MEAN_TOKENS > self.cap(fv.a_max)


def main():
    rng = np.random.default_rng(3)
    adapters = tuple(
        AdapterSpec(f"a{i:02d}", int(rng.choice([8, 16, 32])),
                    float(rng.uniform(0.02, 0.12)))
        for i in range(80)
    )
    problem = PlacementProblem(
        adapters, n_gpus=8, throughput_model=CapacityStub(),
        starvation_model=StarvationStub(),
    )

    result = allocate(problem)
    print(f"greedy allocator: {result.gpus_used} GPUs")
    for gid in sorted(result.a_max_per_gpu):
        members = [a for a, g in result.assignment.items() if g == gid]
        rate = sum(a.rate for a in adapters if a.id in members)
        print(f"  gpu {gid}: {len(members)} adapters, a_max={result.a_max_per_gpu[gid]}, "
              f"{rate * MEAN_TOKENS:.0f} tokens/s incoming")

    # the backbone-only baseline ignores adapter loading costs and overpacks
    try:
        base = max_base(problem, backbone_max_throughput=1500.0)
        print(f"\nmaxbase baseline: {base.gpus_used} GPUs "
              f"(a_max equals the full per-GPU adapter count)")
    except StarvationError as exc:
        print(f"\nmaxbase baseline failed: {exc}")


if __name__ == "__main__":
    main()
