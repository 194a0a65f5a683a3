"""Train surrogate predictors from twin-generated labels, then distill them.

A small grid of random multi-adapter scenarios is simulated to produce
(features, throughput, starved) samples.  A random forest learns each
target; a shallow rule tree is then distilled from the forest so a single
prediction costs microseconds instead of a full ensemble walk.
"""

import time

import numpy as np

from lorapack import (
    dataset_matrix,
    distill,
    generate_dataset,
    macro_f1,
    sample_scenarios,
    smape,
    synthetic_profile,
    train_classifier,
    train_regressor,
)


def main():
    profile = synthetic_profile()
    scenarios = sample_scenarios(
        counts=[2, 4, 8, 16, 32],
        rate_set=[1.6, 0.8, 0.4, 0.2, 0.1, 0.05],
        size_set=[8, 16, 32],
        reps=20,
        seed=20,
        duration=300.0,
        input_len_mean=250.0,
        output_len_mean=231.0,
    )
    print(f"simulating {len(scenarios)} scenarios x 3 device configs ...")
    t0 = time.time()
    samples = generate_dataset(scenarios, [8, 32, 128], profile, workers=4)
    print(f"  {len(samples)} samples in {time.time() - t0:.0f}s, "
          f"{sum(s.starved for s in samples)} starved")

    rng = np.random.default_rng(7)
    order = rng.permutation(len(samples))
    cut = int(0.8 * len(samples))
    train = [samples[i] for i in order[:cut]]
    test = [samples[i] for i in order[cut:]]

    reg = train_regressor(train, kind="rf", seed=11, budget=6)
    clf = train_classifier(train, kind="rf", seed=11, budget=6)

    X, y, starved = dataset_matrix(test)
    print(f"holdout throughput SMAPE: {smape(y, reg.predict(X)):.2f}%")
    print(f"holdout starvation macro-F1: "
          f"{macro_f1(starved, clf.predict(X).astype(bool)):.3f}")

    student, report = distill(reg, train, task="throughput", budget=32, seed=11)
    print(f"\ndistilled throughput tree: {student.estimator.rule_count} rules")
    print(f"student holdout SMAPE: {smape(y, student.predict(X)):.2f}%")
    print("\nfirst three rules:")
    for line in student.estimator.export_rules().splitlines()[:3]:
        print(" ", line)


if __name__ == "__main__":
    main()
