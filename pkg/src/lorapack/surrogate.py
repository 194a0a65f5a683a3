"""Surrogate performance models learned from twin-generated data.

The twin produces labeled samples (workload/device features -> throughput
and a starvation flag); kNN and random-forest surrogates are tuned with
successive-halving grid search, and can be distilled into a single shallow
rule tree for microsecond-scale prediction.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import joblib
import numpy as np
from sklearn.experimental import enable_halving_search_cv  # noqa: F401
from sklearn.metrics import f1_score, make_scorer
from sklearn.model_selection import HalvingGridSearchCV, ParameterGrid
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from .perf import CalibrationProfile
from .twin import DeviceConfig, run_simulation, starvation_label
from .workload import AdapterSpec, LengthSource, WorkloadSpec, synthesize_trace

__all__ = [
    "FEATURE_NAMES",
    "FeatureVector",
    "LabeledSample",
    "Scenario",
    "featurize",
    "sample_scenarios",
    "generate_dataset",
    "train_regressor",
    "train_classifier",
    "predict_throughput",
    "predict_starvation",
    "distill",
    "evaluate",
    "smape",
    "macro_f1",
    "RuleTree",
    "SurrogateModel",
    "save_dataset",
    "load_dataset",
    "save_model",
    "load_model",
]

FEATURE_NAMES = (
    "n_adapters",
    "rate_sum",
    "rate_std",
    "size_max",
    "size_mean",
    "size_std",
    "a_max",
)

DATASET_SCHEMA = "lorapack-dataset-v1"
MODEL_SCHEMA = "lorapack-model-v1"
RULETREE_SCHEMA = "lorapack-ruletree-v1"


@dataclass(frozen=True)
class FeatureVector:
    n_adapters: int
    rate_sum: float
    rate_std: float
    size_max: float
    size_mean: float
    size_std: float
    a_max: int

    def __post_init__(self) -> None:
        if self.n_adapters < 1:
            raise ValueError("n_adapters must be >= 1")
        if self.rate_sum < 0 or self.rate_std < 0 or self.size_std < 0:
            raise ValueError("rates and deviations must be >= 0")
        if self.size_max < self.size_mean - 1e-9:
            raise ValueError("size_max must be >= size_mean")

    def to_array(self) -> np.ndarray:
        return np.array(
            [
                self.n_adapters,
                self.rate_sum,
                self.rate_std,
                self.size_max,
                self.size_mean,
                self.size_std,
                self.a_max,
            ],
            dtype=float,
        )


def featurize(adapters: Sequence[AdapterSpec], a_max: int) -> FeatureVector:
    """Aggregate adapter statistics (population std) plus the device A_max."""
    if not adapters:
        raise ValueError("featurize needs at least one adapter")
    # sorted so the aggregates are bitwise permutation-invariant
    rates = np.sort(np.array([a.rate for a in adapters], dtype=float))
    sizes = np.sort(np.array([a.size for a in adapters], dtype=float))
    return FeatureVector(
        n_adapters=len(adapters),
        rate_sum=float(rates.sum()),
        rate_std=float(rates.std()),
        size_max=float(sizes.max()),
        size_mean=float(sizes.mean()),
        size_std=float(sizes.std()),
        a_max=int(a_max),
    )


@dataclass(frozen=True)
class Scenario:
    """One workload point of the data-generation grid."""

    key: str
    adapters: tuple[AdapterSpec, ...]
    duration: float
    input_len_mean: float
    output_len_mean: float
    seed: int


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    throughput: float
    starved: bool
    infeasible: bool
    key: str
    seed: int

    def __post_init__(self) -> None:
        if self.throughput < 0:
            raise ValueError("throughput must be >= 0")


def sample_scenarios(
    counts: Sequence[int],
    rate_set: Sequence[float],
    size_set: Sequence[int],
    reps: int,
    seed: int,
    duration: float,
    input_len_mean: float,
    output_len_mean: float,
    choices_per_scenario: int = 3,
) -> list[Scenario]:
    """Heterogeneous scenarios: each draws a small palette of rates and sizes
    from the configured sets and assigns them to adapters at random."""
    rng = np.random.default_rng(seed)
    scenarios: list[Scenario] = []
    for rep in range(reps):
        for count in counts:
            rates_pal = rng.choice(rate_set, size=min(choices_per_scenario, len(rate_set)), replace=False)
            sizes_pal = rng.choice(size_set, size=min(choices_per_scenario, len(size_set)), replace=False)
            adapters = tuple(
                AdapterSpec(
                    f"a{i:04d}",
                    int(rng.choice(sizes_pal)),
                    float(rng.choice(rates_pal)),
                )
                for i in range(count)
            )
            scenarios.append(
                Scenario(
                    key=f"s{rep:03d}-n{count:04d}",
                    adapters=adapters,
                    duration=duration,
                    input_len_mean=input_len_mean,
                    output_len_mean=output_len_mean,
                    seed=int(rng.integers(2**31)),
                )
            )
    return scenarios


def _simulate_sample(args) -> LabeledSample:
    scenario, a_max, profile = args
    s_max = max(a.size for a in scenario.adapters)
    fv = featurize(scenario.adapters, a_max)
    key = f"{scenario.key}|amax{a_max}"
    if not profile.feasible(a_max, s_max):
        return LabeledSample(fv, 0.0, True, True, key, scenario.seed)
    workload = WorkloadSpec(
        adapters=scenario.adapters,
        duration=scenario.duration,
        input_len_mean=scenario.input_len_mean,
        output_len_mean=scenario.output_len_mean,
        length_source=LengthSource.MEAN_ONLY,
    )
    trace = synthesize_trace(workload, scenario.seed)
    metrics = run_simulation(trace, DeviceConfig(a_max, s_max), profile)
    return LabeledSample(
        fv, metrics.throughput, starvation_label(metrics), False, key, scenario.seed
    )


def generate_dataset(
    scenarios: Sequence[Scenario],
    a_max_values: Sequence[int],
    profile: CalibrationProfile,
    workers: int = 1,
    existing: Iterable[LabeledSample] | None = None,
) -> list[LabeledSample]:
    """One sample per (scenario, a_max); resumable via ``existing``."""
    if not scenarios or not a_max_values:
        raise ValueError("need a nonempty scenario grid and a_max sweep")
    done = {s.key: s for s in existing} if existing else {}
    jobs = []
    keys = []
    for scenario in scenarios:
        for a_max in a_max_values:
            key = f"{scenario.key}|amax{a_max}"
            keys.append(key)
            if key not in done:
                jobs.append((scenario, int(a_max), profile))
    if jobs:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                fresh = list(pool.map(_simulate_sample, jobs, chunksize=4))
        else:
            fresh = [_simulate_sample(j) for j in jobs]
        done.update({s.key: s for s in fresh})
    return [done[k] for k in keys]


# ---------------------------------------------------------------------------
# metrics


def smape(predictions, actuals) -> float:
    """Symmetric MAPE in percent; the 0/0 term counts as zero error."""
    p = np.asarray(predictions, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("predictions and actuals must be equal-length and nonempty")
    denom = (np.abs(p) + np.abs(a)) / 2.0
    terms = np.where(denom > 0, np.abs(p - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(100.0 * terms.mean())


def macro_f1(predictions, actuals) -> float:
    p = np.asarray(predictions).astype(int)
    a = np.asarray(actuals).astype(int)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("predictions and actuals must be equal-length and nonempty")
    return float(f1_score(a, p, average="macro", zero_division=0))


def evaluate(predictions, actuals, task: str) -> float:
    """SMAPE %% for ``throughput``, macro-F1 for ``starvation``."""
    if task == "throughput":
        return smape(predictions, actuals)
    if task == "starvation":
        return macro_f1(predictions, actuals)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# models

_RF_REG_GRID = {
    "n_estimators": [32, 128, 256],
    "max_depth": [None, 5, 10, 20],
    "min_samples_split": [2, 5, 10, 20],
    "criterion": ["squared_error", "absolute_error", "friedman_mse", "poisson"],
    "min_samples_leaf": [1, 2, 5, 10, 32, 128],
    "max_features": [None, "sqrt", "log2"],
}
_RF_CLF_GRID = {
    "n_estimators": [32, 128, 256],
    "max_depth": [None, 5, 10, 20],
    "min_samples_split": [2, 5, 10, 20],
    "criterion": ["gini", "entropy", "log_loss"],
    "min_samples_leaf": [1, 2, 5, 10, 32, 128],
    "max_features": [None, "sqrt", "log2"],
}
_KNN_GRID = {"model__p": [1, 2]}


class _ConstantModel:
    """Fallback for degenerate training data."""

    def __init__(self, value):
        self.value = value

    def fit(self, X, y):  # pragma: no cover - already fitted
        return self

    def predict(self, X):
        return np.full(len(X), self.value)


@dataclass
class SurrogateModel:
    """A fitted predictor plus its provenance; immutable after training."""

    task: str  # "throughput" | "starvation"
    kind: str  # "knn" | "rf" | "rules" | "constant"
    estimator: object
    cv_report: dict = field(default_factory=dict)
    feature_names: tuple[str, ...] = FEATURE_NAMES
    schema: str = MODEL_SCHEMA

    def _check(self, fv: FeatureVector) -> np.ndarray:
        if self.feature_names != FEATURE_NAMES:
            raise ValueError("model was trained on an incompatible feature schema")
        return fv.to_array()

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError("feature matrix does not match the trained schema")
        if isinstance(self.estimator, RuleTree):
            out = self.estimator.predict(X)
        else:
            out = self.estimator.predict(X)
        if self.task == "throughput":
            return np.maximum(np.asarray(out, dtype=float), 0.0)
        return np.asarray(out).astype(bool)

    def predict_one(self, fv: FeatureVector):
        row = self._check(fv)
        if isinstance(self.estimator, RuleTree):
            value = self.estimator.predict_one(row)
            return max(value, 0.0) if self.task == "throughput" else bool(value >= 0.5)
        out = self._predict_row(row)
        return max(float(out), 0.0) if self.task == "throughput" else bool(out)

    def _predict_row(self, row: np.ndarray) -> float:
        """Single-row prediction, bypassing sklearn's per-call batch overhead
        for forests (it dominates the latency of one-sample queries)."""
        fast = self.__dict__.get("_fast")
        if fast is None:
            fast = self._build_fast_path()
            self.__dict__["_fast"] = fast
        if fast is False:
            return self.estimator.predict(row.reshape(1, -1))[0]
        feat, thr, left, right, value, node, classes = fast
        row = row.astype(np.float32)
        node = node.copy()
        while True:
            f = feat[node]
            interior = f >= 0
            if not interior.any():
                break
            nxt = np.where(row[f] <= thr[node], left[node], right[node])
            node = np.where(interior, nxt, node)
        mean = value[node].mean()
        if classes is None:
            return mean
        return classes[int(mean > 0.5)]

    def _build_fast_path(self):
        """Fuse the forest into flat arrays so one prediction walks every
        tree in lockstep with vectorized index steps."""
        est = self.estimator
        if not isinstance(est, (RandomForestRegressor, RandomForestClassifier)):
            return False
        feat, thr, left, right, value, roots = [], [], [], [], [], []
        offset = 0
        for member in est.estimators_:
            tree = member.tree_
            roots.append(offset)
            feat.append(tree.feature)
            thr.append(tree.threshold)
            child = np.where(tree.children_left >= 0, tree.children_left + offset, 0)
            left.append(child)
            child = np.where(tree.children_right >= 0, tree.children_right + offset, 0)
            right.append(child)
            leaf = tree.value[:, 0, :]
            if isinstance(est, RandomForestClassifier):
                value.append(leaf[:, -1] / leaf.sum(axis=1))
            else:
                value.append(leaf[:, 0])
            offset += tree.node_count
        classes = est.classes_ if isinstance(est, RandomForestClassifier) else None
        return (
            np.concatenate(feat),
            np.concatenate(thr),
            np.concatenate(left),
            np.concatenate(right),
            np.concatenate(value),
            np.array(roots),
            classes,
        )


def dataset_matrix(
    dataset: Sequence[LabeledSample], include_infeasible: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix, throughput vector and starvation vector."""
    rows = [s for s in dataset if include_infeasible or not s.infeasible]
    X = np.array([s.features.to_array() for s in rows])
    y = np.array([s.throughput for s in rows])
    starved = np.array([s.starved for s in rows], dtype=bool)
    return X, y, starved


def _subsample_grid(grid: dict, budget: int, seed: int) -> list[dict]:
    candidates = list(ParameterGrid(grid))
    if budget >= len(candidates):
        return candidates
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(candidates), size=budget, replace=False)
    return [candidates[i] for i in sorted(idx)]


def _halving_search(estimator, candidates, X, y, scoring, seed):
    # HalvingGridSearchCV accepts a list of single-point grids
    grid = [{k: [v] for k, v in c.items()} for c in candidates]
    search = HalvingGridSearchCV(
        estimator,
        grid,
        cv=5,
        scoring=scoring,
        factor=3,
        random_state=seed,
        refit=True,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        search.fit(X, y)
    return search


def _neg_smape_scorer():
    return make_scorer(lambda a, p: -smape(p, a))


def train_regressor(
    dataset: Sequence[LabeledSample],
    kind: str = "rf",
    budget: int = 24,
    seed: int = 0,
) -> SurrogateModel:
    """Fit a throughput regressor with 5-fold successive-halving search.

    Memory-infeasible samples are excluded: placement never queries the
    regressor on configurations the memory model already rejects.
    """
    X, y, _ = dataset_matrix(dataset, include_infeasible=False)
    if len(X) < 50:
        raise ValueError("need at least 50 samples to train")
    if np.allclose(y, y[0]):
        warnings.warn("constant training target; returning a constant predictor")
        return SurrogateModel("throughput", "constant", _ConstantModel(float(y[0])))
    if kind == "knn":
        base = Pipeline(
            [
                ("scale", StandardScaler()),
                (
                    "model",
                    KNeighborsRegressor(
                        n_neighbors=1, leaf_size=8, weights="uniform", algorithm="kd_tree"
                    ),
                ),
            ]
        )
        candidates = _subsample_grid(_KNN_GRID, budget, seed)
    elif kind == "rf":
        base = RandomForestRegressor(random_state=seed)
        candidates = _subsample_grid(_RF_REG_GRID, budget, seed)
    else:
        raise ValueError(f"unknown regressor kind {kind!r}")
    search = _halving_search(base, candidates, X, y, _neg_smape_scorer(), seed)
    report = {
        "best_params": {k: str(v) for k, v in search.best_params_.items()},
        "cv_smape": float(-search.best_score_),
        "n_candidates": len(candidates),
        "n_samples": len(X),
    }
    return SurrogateModel("throughput", kind, search.best_estimator_, report)


def train_classifier(
    dataset: Sequence[LabeledSample],
    kind: str = "rf",
    budget: int = 24,
    seed: int = 0,
) -> SurrogateModel:
    """Fit a starvation classifier (macro-F1 objective)."""
    X, _, starved = dataset_matrix(dataset, include_infeasible=True)
    if len(X) < 50:
        raise ValueError("need at least 50 samples to train")
    if starved.all() or not starved.any():
        warnings.warn("single-class training labels; returning a constant classifier")
        return SurrogateModel("starvation", "constant", _ConstantModel(bool(starved[0])))
    y = starved.astype(int)
    if kind == "knn":
        base = Pipeline(
            [
                ("scale", StandardScaler()),
                (
                    "model",
                    KNeighborsClassifier(
                        n_neighbors=1, leaf_size=8, weights="uniform", algorithm="kd_tree"
                    ),
                ),
            ]
        )
        candidates = _subsample_grid(_KNN_GRID, budget, seed)
    elif kind == "rf":
        base = RandomForestClassifier(random_state=seed)
        candidates = _subsample_grid(_RF_CLF_GRID, budget, seed)
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    search = _halving_search(base, candidates, X, y, "f1_macro", seed)
    report = {
        "best_params": {k: str(v) for k, v in search.best_params_.items()},
        "cv_macro_f1": float(search.best_score_),
        "n_candidates": len(candidates),
        "n_samples": len(X),
    }
    return SurrogateModel("starvation", kind, search.best_estimator_, report)


def predict_throughput(model: SurrogateModel, fv: FeatureVector) -> float:
    if model.task != "throughput":
        raise ValueError("model does not predict throughput")
    return model.predict_one(fv)


def predict_starvation(model: SurrogateModel, fv: FeatureVector) -> bool:
    if model.task != "starvation":
        raise ValueError("model does not predict starvation")
    return model.predict_one(fv)


# ---------------------------------------------------------------------------
# distillation into a shallow rule tree


@dataclass
class RuleTree:
    """A single shallow decision tree stored as flat arrays.

    Leaves are rules: a conjunction of threshold conditions mapping to one
    output value.  Exactly one rule fires per input.
    """

    task: str
    feature: np.ndarray  # node split feature, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def rule_count(self) -> int:
        return int((self.feature < 0).sum())

    def predict_one(self, row: np.ndarray) -> float:
        node = 0
        feature = self.feature
        while feature[node] >= 0:
            if row[feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.value[node])

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        for i in range(len(X)):
            out[i] = self.predict_one(X[i])
        if self.task == "starvation":
            return out >= 0.5
        return np.maximum(out, 0.0)

    def rules(self) -> list[tuple[list[tuple[int, str, float]], float]]:
        """Decompose into (conditions, value) rules; conditions use the
        convention (feature index, "<=" or ">", threshold)."""
        out: list[tuple[list[tuple[int, str, float]], float]] = []

        def walk(node: int, conds: list[tuple[int, str, float]]):
            if self.feature[node] < 0:
                out.append((list(conds), float(self.value[node])))
                return
            f, t = int(self.feature[node]), float(self.threshold[node])
            walk(int(self.left[node]), conds + [(f, "<=", t)])
            walk(int(self.right[node]), conds + [(f, ">", t)])

        walk(0, [])
        return out

    def export_rules(self) -> str:
        lines = []
        for conds, value in self.rules():
            if conds:
                body = " and ".join(
                    f"{self.feature_names[f]} {op} {thr!r}" for f, op, thr in conds
                )
            else:
                body = "always"
            lines.append(f"{body} -> {value!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "schema": RULETREE_SCHEMA,
            "task": self.task,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleTree":
        if d.get("schema") != RULETREE_SCHEMA:
            raise ValueError(f"not a {RULETREE_SCHEMA} document")
        return cls(
            task=d["task"],
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            value=np.array(d["value"], dtype=float),
            feature_names=tuple(d["feature_names"]),
        )


def evaluate_rules(
    rules: list[tuple[list[tuple[int, str, float]], float]], X: np.ndarray, task: str
) -> np.ndarray:
    """Evaluate an exported rule list directly (vectorized), independent of
    tree traversal; used to verify that rule extraction is lossless."""
    X = np.asarray(X, dtype=float)
    out = np.full(len(X), np.nan)
    fired = np.zeros(len(X), dtype=int)
    for conds, value in rules:
        mask = np.ones(len(X), dtype=bool)
        for f, op, thr in conds:
            mask &= X[:, f] <= thr if op == "<=" else X[:, f] > thr
        out[mask] = value
        fired += mask
    if not np.all(fired == 1):
        raise RuntimeError("rule list does not partition the feature space")
    if task == "starvation":
        return out >= 0.5
    return np.maximum(out, 0.0)


def _tree_to_ruletree(tree, task: str) -> RuleTree:
    t = tree.tree_
    if task == "starvation":
        counts = t.value.reshape(len(t.feature), -1)
        if counts.shape[1] == 1:  # single-class fit
            values = np.full(len(t.feature), float(tree.classes_[0]))
        else:
            values = tree.classes_[np.argmax(counts, axis=1)].astype(float)
    else:
        values = t.value.reshape(-1)
    return RuleTree(
        task=task,
        feature=t.feature.copy(),
        threshold=t.threshold.copy(),
        left=t.children_left.copy(),
        right=t.children_right.copy(),
        value=np.asarray(values, dtype=float),
    )


def distill(
    teacher: SurrogateModel,
    dataset: Sequence[LabeledSample],
    task: str,
    budget: int = 32,
    seed: int = 0,
) -> tuple[SurrogateModel, dict]:
    """Fit a depth-bounded tree on the teacher's predictions.

    The returned rule tree has at most ``budget`` rules (leaves) and depth
    at most ceil(log2(budget)); the report carries the accuracy delta vs
    the teacher on the distillation set.
    """
    if budget < 2:
        raise ValueError("rule budget must be >= 2")
    X, _, _ = dataset_matrix(dataset, include_infeasible=(task == "starvation"))
    teacher_pred = teacher.predict(X)
    depth = max(1, math.ceil(math.log2(budget)))
    if task == "throughput":
        fit_tree = DecisionTreeRegressor(
            max_leaf_nodes=budget, max_depth=depth, random_state=seed
        )
        # weight toward relative error, which is what SMAPE scores
        weights = 1.0 / (np.abs(teacher_pred) + 1.0)
        fit_tree.fit(X, teacher_pred, sample_weight=weights)
    elif task == "starvation":
        fit_tree = DecisionTreeClassifier(
            max_leaf_nodes=budget, max_depth=depth, random_state=seed
        )
        fit_tree.fit(X, teacher_pred.astype(int))
    else:
        raise ValueError(f"unknown task {task!r}")
    rule_tree = _tree_to_ruletree(fit_tree, task)
    student = SurrogateModel(task, "rules", rule_tree, dict(teacher.cv_report))
    student_pred = student.predict(X)
    if task == "throughput":
        delta = smape(student_pred, teacher_pred)
        report = {"rule_count": rule_tree.rule_count, "smape_vs_teacher": delta}
    else:
        delta = macro_f1(student_pred, teacher_pred)
        report = {"rule_count": rule_tree.rule_count, "macro_f1_vs_teacher": delta}
    return student, report


# ---------------------------------------------------------------------------
# file formats


def save_dataset(dataset: Sequence[LabeledSample], path, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# schema={DATASET_SCHEMA}\n")
        for k in sorted(meta or {}):
            fh.write(f"# {k}={meta[k]}\n")
        fh.write("key,seed," + ",".join(FEATURE_NAMES) + ",throughput,starved,infeasible\n")
        for s in dataset:
            feats = ",".join(repr(float(v)) for v in s.features.to_array())
            fh.write(
                f"{s.key},{s.seed},{feats},{s.throughput!r},{int(s.starved)},{int(s.infeasible)}\n"
            )


def load_dataset(path) -> list[LabeledSample]:
    out: list[LabeledSample] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"# schema={DATASET_SCHEMA}":
            raise ValueError(f"not a {DATASET_SCHEMA} file: {path}")
        saw_columns = False
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not saw_columns:
                saw_columns = True  # column header row
                continue
            parts = line.split(",")
            key, seed = parts[0], int(parts[1])
            vals = [float(v) for v in parts[2:9]]
            fv = FeatureVector(
                n_adapters=int(vals[0]),
                rate_sum=vals[1],
                rate_std=vals[2],
                size_max=vals[3],
                size_mean=vals[4],
                size_std=vals[5],
                a_max=int(vals[6]),
            )
            out.append(
                LabeledSample(
                    fv,
                    float(parts[9]),
                    bool(int(parts[10])),
                    bool(int(parts[11])),
                    key,
                    seed,
                )
            )
    return out


def save_model(model: SurrogateModel, path) -> None:
    path = str(path)
    if isinstance(model.estimator, RuleTree):
        doc = {
            "schema": MODEL_SCHEMA,
            "task": model.task,
            "kind": model.kind,
            "cv_report": model.cv_report,
            "rule_tree": model.estimator.to_dict(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        joblib.dump(
            {
                "schema": MODEL_SCHEMA,
                "task": model.task,
                "kind": model.kind,
                "cv_report": model.cv_report,
                "estimator": model.estimator,
            },
            path,
        )


def load_model(path) -> SurrogateModel:
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(1)
    if head == b"{":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"not a {MODEL_SCHEMA} document")
        return SurrogateModel(
            doc["task"], doc["kind"], RuleTree.from_dict(doc["rule_tree"]), doc["cv_report"]
        )
    doc = joblib.load(path)
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"not a {MODEL_SCHEMA} document")
    return SurrogateModel(doc["task"], doc["kind"], doc["estimator"], doc["cv_report"])
