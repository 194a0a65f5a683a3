"""lorapack: digital-twin driven capacity planning for multi-LoRA serving.

Workflow: calibrate latency/memory models from benchmark samples, emulate
the serving engine with a fast digital twin, learn surrogate throughput and
starvation predictors from twin data, and pack adapters onto the minimum
number of GPUs with a greedy testing-point algorithm.
"""

from .errors import (
    FitFailureError,
    MemoryExceededError,
    NoFeasiblePointError,
    StarvationError,
)
from .perf import (
    CalibrationProfile,
    ProfilingSample,
    ResidualReport,
    SampleKind,
    fit_calibration,
    lat_load,
    lat_model,
    lat_sched,
    load_profile,
    load_samples,
    mem_max,
    profile_hash,
    save_profile,
    save_samples,
)
from .placement import (
    DEFAULT_TESTING_POINTS,
    GpuState,
    PlacementProblem,
    PlacementResult,
    allocate,
    load_plan,
    max_base,
    next_gpu_config,
    priority_sorting,
    proposed_lat,
    random_placement,
    save_plan,
    test_allocation,
)
from .fixtures import synthetic_profile, synthetic_samples
from .surrogate import (
    FEATURE_NAMES,
    FeatureVector,
    LabeledSample,
    RuleTree,
    Scenario,
    SurrogateModel,
    dataset_matrix,
    distill,
    evaluate,
    evaluate_rules,
    featurize,
    generate_dataset,
    load_dataset,
    load_model,
    macro_f1,
    predict_starvation,
    predict_throughput,
    sample_scenarios,
    save_dataset,
    save_model,
    smape,
    train_classifier,
    train_regressor,
)
from .twin import (
    DeviceConfig,
    SimMetrics,
    SweepPoint,
    load_metrics,
    run_simulation,
    save_metrics,
    starvation_label,
    sweep_max_pack,
)
from .workload import (
    AdapterSpec,
    LengthSource,
    RequestEvent,
    RequestTrace,
    UnpredictableRegime,
    WorkloadSpec,
    gen_poisson_arrivals,
    gen_unpredictable_arrivals,
    load_trace,
    mean_lengths,
    save_trace,
    synthesize_trace,
)

__version__ = "0.1.0"
