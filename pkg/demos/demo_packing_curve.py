"""Sweep adapter count on one GPU and locate the packing knee.

Every point runs the digital twin on a uniform workload (same rate and
size for each adapter).  Throughput first tracks the incoming token rate,
then flattens once the device saturates; the knee is the largest packing
whose throughput stays within 90% of what arrives.
"""

from lorapack import (
    AdapterSpec,
    DeviceConfig,
    LengthSource,
    WorkloadSpec,
    sweep_max_pack,
    synthetic_profile,
)

RATE = 0.05  # requests per second per adapter
SIZE = 8  # adapter rank
COUNTS = [4, 8, 16, 24, 32, 40, 48, 64, 96, 128]


def make_workload(count):
    adapters = tuple(AdapterSpec(f"a{i}", SIZE, RATE) for i in range(count))
    return WorkloadSpec(adapters, 600.0, 250.0, 231.0, LengthSource.MEAN_ONLY)


def main():
    profile = synthetic_profile()
    device = DeviceConfig(a_max=128, s_max=SIZE)
    points, best = sweep_max_pack(make_workload, COUNTS, [device], profile, seed=9)

    print(f"{'adapters':>9} {'incoming tok/s':>15} {'throughput':>11} starved")
    for p in points:
        mark = "yes" if p.starved else ""
        print(f"{p.n_adapters:>9} {p.incoming_token_rate:>15.1f} "
              f"{p.throughput:>11.1f} {mark}")
    print(f"\npacking knee: {best.n_adapters} adapters "
          f"({best.throughput:.1f} tokens/s, a_max={best.a_max})")


if __name__ == "__main__":
    main()
