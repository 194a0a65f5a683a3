"""Command-line entry point wiring the twin, surrogate and placement stages.

Exit codes: 0 success, 2 invalid argument or schema, 3 starvation,
4 memory exceeded, 5 calibration fit failure, 6 no feasible sweep point.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import fixtures, perf, placement, surrogate, twin, workload
from .errors import (
    FitFailureError,
    MemoryExceededError,
    NoFeasiblePointError,
    StarvationError,
)

REPORT_SCHEMA = "lorapack-report-v1"
SWEEP_SCHEMA = "lorapack-sweep-v1"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STARVATION = 3
EXIT_MEMORY = 4
EXIT_FIT = 5
EXIT_NO_FEASIBLE = 6


def _load_workload(path: str) -> workload.WorkloadSpec:
    with open(path) as fh:
        return workload.WorkloadSpec.from_dict(json.load(fh))


def _write_report(path, kind: str, meta: dict, columns: list[str], rows: list[list]) -> None:
    """Delimited report table; every header carries schema, kind and meta."""
    with open(path, "w") as fh:
        fh.write(f"# schema={REPORT_SCHEMA}\n")
        fh.write(f"# kind={kind}\n")
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _read_header(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    samples = perf.load_samples(args.samples)
    if not samples:
        print("calibrate: no samples in input", file=sys.stderr)
        return EXIT_INVALID
    profile, report = perf.fit_calibration(samples)
    perf.save_profile(profile, args.out)
    if args.residuals:
        rows = [
            [kind, report.max_abs_error[kind], report.n_samples[kind]]
            for kind in sorted(report.max_abs_error)
        ]
        _write_report(
            args.residuals,
            "residuals",
            {"profile_hash": perf.profile_hash(profile)},
            ["kind", "max_abs_error", "n_samples"],
            rows,
        )
    return EXIT_OK


def cmd_trace(args) -> int:
    spec = _load_workload(args.workload)
    trace = workload.synthesize_trace(spec, args.seed)
    workload.save_trace(trace, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    profile = perf.load_profile(args.profile)
    trace = workload.load_trace(args.trace)
    device = twin.DeviceConfig(args.a_max, args.s_max)
    metrics = twin.run_simulation(trace, device, profile, duration=args.duration)
    twin.save_metrics(metrics, args.out)
    return EXIT_OK


def _dataset_defaults() -> dict:
    return {
        "counts": [2, 4, 8, 16, 32, 64],
        "reps": 4,
        "rate_set": [1.6, 0.8, 0.4, 0.2, 0.1, 0.05],
        "size_set": [8, 16, 32],
        "duration": 600.0,
        "a_max_values": [8, 32, 128],
        "input_len_mean": fixtures.INPUT_LEN_MEAN,
        "output_len_mean": fixtures.OUTPUT_LEN_MEAN,
    }


def _generate_dataset(profile, cfg: dict, seed: int, workers: int, out_path: str) -> None:
    scenarios = surrogate.sample_scenarios(
        counts=cfg["counts"],
        rate_set=cfg["rate_set"],
        size_set=cfg["size_set"],
        reps=cfg["reps"],
        seed=seed,
        duration=cfg["duration"],
        input_len_mean=cfg["input_len_mean"],
        output_len_mean=cfg["output_len_mean"],
    )
    existing = surrogate.load_dataset(out_path) if os.path.exists(out_path) else None
    dataset = surrogate.generate_dataset(
        scenarios, cfg["a_max_values"], profile, workers=workers, existing=existing
    )
    surrogate.save_dataset(
        dataset,
        out_path,
        meta={"seed": seed, "profile_hash": perf.profile_hash(profile)},
    )


def cmd_dataset(args) -> int:
    profile = perf.load_profile(args.profile)
    cfg = _dataset_defaults()
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    _generate_dataset(profile, cfg, args.seed, args.workers, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = surrogate.load_dataset(args.dataset)
    if args.task == "throughput":
        model = surrogate.train_regressor(dataset, kind=args.kind, budget=args.budget, seed=args.seed)
    else:
        model = surrogate.train_classifier(dataset, kind=args.kind, budget=args.budget, seed=args.seed)
    surrogate.save_model(model, args.out)
    return EXIT_OK


def cmd_distill(args) -> int:
    teacher = surrogate.load_model(args.model)
    dataset = surrogate.load_dataset(args.dataset)
    student, report = surrogate.distill(
        teacher, dataset, teacher.task, budget=args.budget, seed=args.seed
    )
    surrogate.save_model(student, args.out)
    if args.rules:
        with open(args.rules, "w") as fh:
            fh.write(student.estimator.export_rules())
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _load_model_pair(models_dir: str, fast: bool):
    suffix = "_rules.json" if fast else ".joblib"
    thr = surrogate.load_model(os.path.join(models_dir, f"throughput{suffix}"))
    stv = surrogate.load_model(os.path.join(models_dir, f"starvation{suffix}"))
    return thr, stv


def _run_strategy(problem, strategy: str, seed: int, backbone_cap: float | None):
    if strategy in ("proposed", "proposed-fast"):
        return placement.allocate(problem, strategy=strategy)
    if strategy in ("maxbase", "maxbase-star"):
        if backbone_cap is None:
            raise ValueError(f"{strategy} requires --backbone-cap")
        return placement.max_base(problem, backbone_cap, halve=strategy == "maxbase-star")
    if strategy == "random":
        return placement.random_placement(problem, seed)
    if strategy == "proposed-lat":
        return placement.proposed_lat(problem)
    raise ValueError(f"unknown strategy {strategy!r}")


def cmd_place(args) -> int:
    spec = _load_workload(args.workload)
    profile = perf.load_profile(args.profile) if args.profile else None
    thr, stv = _load_model_pair(args.models, fast=args.strategy == "proposed-fast")
    problem = placement.PlacementProblem(
        adapters=spec.adapters,
        n_gpus=args.gpus,
        throughput_model=thr,
        starvation_model=stv,
        input_len_mean=spec.input_len_mean,
        output_len_mean=spec.output_len_mean,
        profile=profile,
    )
    result = _run_strategy(problem, args.strategy, args.seed, args.backbone_cap)
    meta = {"seed": args.seed}
    if profile is not None:
        meta["profile_hash"] = perf.profile_hash(profile)
    placement.save_plan(result, problem, args.out, meta=meta)
    return EXIT_OK


def _sweep_to_doc(points, best, meta: dict) -> dict:
    return {
        "schema": SWEEP_SCHEMA,
        "meta": dict(sorted(meta.items())),
        "best": {"n_adapters": best.n_adapters, "a_max": best.a_max},
        "points": [
            {
                "n_adapters": p.n_adapters,
                "a_max": p.a_max,
                "s_max": p.s_max,
                "throughput": p.throughput,
                "incoming_token_rate": p.incoming_token_rate,
                "starved": p.starved,
                "infeasible": p.infeasible,
            }
            for p in points
        ],
    }


def cmd_report(args) -> int:
    if args.kind == "timeline":
        rows = []
        for path in args.inputs:
            metrics = twin.load_metrics(path)
            label = os.path.splitext(os.path.basename(path))[0]
            for t, r, w in zip(
                metrics.timeline_t, metrics.timeline_running, metrics.timeline_waiting
            ):
                rows.append([label, float(t), int(r), int(w)])
        _write_report(args.out, "timeline", {"seed": args.seed},
                      ["label", "t", "running", "waiting"], rows)
        return EXIT_OK
    if args.kind == "sweep":
        (path,) = args.inputs
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != SWEEP_SCHEMA:
            print(f"report: not a {SWEEP_SCHEMA} document", file=sys.stderr)
            return EXIT_INVALID
        best = doc["best"]
        rows = [
            [
                p["n_adapters"],
                p["a_max"],
                float(p["throughput"]),
                float(p["incoming_token_rate"]),
                bool(p["starved"]),
                bool(p["infeasible"]),
                p["n_adapters"] == best["n_adapters"] and p["a_max"] == best["a_max"],
            ]
            for p in doc["points"]
        ]
        _write_report(args.out, "sweep", doc.get("meta", {}),
                      ["n_adapters", "a_max", "throughput", "incoming_token_rate",
                       "starved", "infeasible", "max_pack"], rows)
        return EXIT_OK
    if args.kind == "gpus":
        rows = []
        for path in args.inputs:
            plan = placement.load_plan(path)
            rows.append([plan.strategy, len(plan.assignment), plan.gpus_used])
        rows.sort(key=lambda r: (r[0], r[1]))
        _write_report(args.out, "gpus", {"seed": args.seed},
                      ["strategy", "n_adapters", "gpus_used"], rows)
        return EXIT_OK
    print(f"report: unknown kind {args.kind!r}", file=sys.stderr)
    return EXIT_INVALID


def cmd_pipeline(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    seed = int(config.get("seed", args.seed))
    out_dir = config.get("out_dir", args.out_dir or "out")
    workers = int(config.get("workers", args.workers))
    stages = config.get("stages", {})
    os.makedirs(out_dir, exist_ok=True)
    models_dir = os.path.join(out_dir, "models")
    plans_dir = os.path.join(out_dir, "plans")
    os.makedirs(models_dir, exist_ok=True)
    os.makedirs(plans_dir, exist_ok=True)

    profile_path = config.get("profile", args.profile)
    if profile_path is None:
        print("pipeline: no profile in config and no --profile flag", file=sys.stderr)
        return EXIT_INVALID
    profile = perf.load_profile(profile_path)
    phash = perf.profile_hash(profile)
    dataset_path = os.path.join(out_dir, "dataset.csv")

    if stages.get("dataset", True):
        if not os.path.exists(dataset_path):
            cfg = _dataset_defaults()
            cfg.update(config.get("dataset", {}))
            _generate_dataset(profile, cfg, seed, workers, dataset_path)
    if not os.path.exists(dataset_path):
        print("pipeline: dataset stage skipped but dataset.csv missing", file=sys.stderr)
        return EXIT_INVALID

    train_cfg = config.get("train", {})
    model_paths = {
        "throughput": os.path.join(models_dir, "throughput.joblib"),
        "starvation": os.path.join(models_dir, "starvation.joblib"),
    }
    if stages.get("train", True):
        dataset = surrogate.load_dataset(dataset_path)
        if not os.path.exists(model_paths["throughput"]):
            model = surrogate.train_regressor(
                dataset, kind=train_cfg.get("kind", "rf"),
                budget=int(train_cfg.get("budget", 16)), seed=seed,
            )
            surrogate.save_model(model, model_paths["throughput"])
        if not os.path.exists(model_paths["starvation"]):
            model = surrogate.train_classifier(
                dataset, kind=train_cfg.get("kind", "rf"),
                budget=int(train_cfg.get("budget", 16)), seed=seed,
            )
            surrogate.save_model(model, model_paths["starvation"])
    for path in model_paths.values():
        if not os.path.exists(path):
            print(f"pipeline: train stage skipped but {path} missing", file=sys.stderr)
            return EXIT_INVALID

    if stages.get("distill", True):
        dataset = surrogate.load_dataset(dataset_path)
        budget = int(config.get("distill", {}).get("budget", 32))
        for task, teacher_path in model_paths.items():
            out_path = os.path.join(models_dir, f"{task}_rules.json")
            if os.path.exists(out_path):
                continue
            teacher = surrogate.load_model(teacher_path)
            student, _ = surrogate.distill(teacher, dataset, task, budget=budget, seed=seed)
            surrogate.save_model(student, out_path)
            with open(os.path.join(models_dir, f"{task}_rules.txt"), "w") as fh:
                fh.write(student.estimator.export_rules())

    plan_paths = []
    place_cfg = config.get("place")
    if stages.get("place", True) and place_cfg:
        spec = _load_workload(place_cfg["workload"])
        fast_available = os.path.exists(os.path.join(models_dir, "throughput_rules.json"))
        for strategy in place_cfg.get("strategies", ["proposed"]):
            plan_path = os.path.join(plans_dir, f"{strategy}.json")
            plan_paths.append(plan_path)
            if os.path.exists(plan_path):
                continue
            fast = strategy == "proposed-fast" and fast_available
            thr, stv = _load_model_pair(models_dir, fast=fast)
            problem = placement.PlacementProblem(
                adapters=spec.adapters,
                n_gpus=int(place_cfg["gpus"]),
                throughput_model=thr,
                starvation_model=stv,
                input_len_mean=spec.input_len_mean,
                output_len_mean=spec.output_len_mean,
                profile=profile,
            )
            result = _run_strategy(
                problem, strategy, seed, place_cfg.get("backbone_cap")
            )
            placement.save_plan(
                result, problem, plan_path, meta={"seed": seed, "profile_hash": phash}
            )

    if stages.get("report", True):
        sweep_cfg = config.get("sweep")
        if sweep_cfg:
            sweep_json = os.path.join(out_dir, "sweep.json")
            if not os.path.exists(sweep_json):
                rate = float(sweep_cfg.get("rate", 0.02))
                size = int(sweep_cfg.get("size", 8))

                def make_workload(n: int) -> workload.WorkloadSpec:
                    return workload.WorkloadSpec(
                        adapters=tuple(
                            workload.AdapterSpec(f"a{i:04d}", size, rate) for i in range(n)
                        ),
                        duration=float(sweep_cfg.get("duration", 300.0)),
                        input_len_mean=float(sweep_cfg.get("input_len_mean", fixtures.INPUT_LEN_MEAN)),
                        output_len_mean=float(sweep_cfg.get("output_len_mean", fixtures.OUTPUT_LEN_MEAN)),
                    )

                counts = [int(c) for c in sweep_cfg.get("counts", [2, 8, 32, 64, 128])]
                devices = [
                    twin.DeviceConfig(int(a), size)
                    for a in sweep_cfg.get("a_max_values", [max(counts)])
                ]
                points, best = twin.sweep_max_pack(
                    make_workload, counts, devices, profile, seed=seed
                )
                with open(sweep_json, "w") as fh:
                    json.dump(
                        _sweep_to_doc(points, best, {"seed": seed, "profile_hash": phash}),
                        fh, indent=2, sort_keys=True,
                    )
                    fh.write("\n")
            rc = cmd_report(argparse.Namespace(
                kind="sweep", inputs=[sweep_json],
                out=os.path.join(out_dir, "report_sweep.tsv"), seed=seed,
            ))
            if rc != EXIT_OK:
                return rc
        if plan_paths:
            rc = cmd_report(argparse.Namespace(
                kind="gpus", inputs=plan_paths,
                out=os.path.join(out_dir, "report_gpus.tsv"), seed=seed,
            ))
            if rc != EXIT_OK:
                return rc
        sim_cfg = config.get("simulate")
        if sim_cfg:
            metrics_path = os.path.join(out_dir, "metrics.json")
            if not os.path.exists(metrics_path):
                spec = _load_workload(sim_cfg["workload"])
                trace = workload.synthesize_trace(spec, seed)
                metrics = twin.run_simulation(
                    trace,
                    twin.DeviceConfig(int(sim_cfg["a_max"]), int(sim_cfg["s_max"])),
                    profile,
                )
                twin.save_metrics(metrics, metrics_path)
            rc = cmd_report(argparse.Namespace(
                kind="timeline", inputs=[metrics_path],
                out=os.path.join(out_dir, "report_timeline.tsv"), seed=seed,
            ))
            if rc != EXIT_OK:
                return rc
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorapack",
        description="Digital-twin driven LoRA adapter placement toolkit",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--profile", default=None, help="calibration profile file")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit a profile from benchmark samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--residuals", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("trace", help="synthesize a request trace from a workload spec")
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="run the twin on a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--a-max", type=int, required=True)
    p.add_argument("--s-max", type=int, required=True)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="generate labeled training samples with the twin")
    p.add_argument("--config", default=None, help="JSON overriding the scenario grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="fit a surrogate model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=["throughput", "starvation"], required=True)
    p.add_argument("--kind", choices=["rf", "knn"], default="rf")
    p.add_argument("--budget", type=int, default=24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="distill a surrogate into a shallow rule tree")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int, default=32)
    p.add_argument("--rules", default=None, help="also write a readable rule list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("place", help="assign adapters to GPUs")
    p.add_argument("--workload", required=True)
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--models", required=True, help="directory with trained models")
    p.add_argument(
        "--strategy",
        choices=["proposed", "proposed-fast", "maxbase", "maxbase-star", "random", "proposed-lat"],
        default="proposed",
    )
    p.add_argument("--backbone-cap", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("report", help="emit a delimited report table")
    p.add_argument("--kind", choices=["timeline", "sweep", "gpus"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run dataset, train, distill, place and reports")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"lorapack: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StarvationError as exc:
        print(f"lorapack: starvation: {exc}", file=sys.stderr)
        return EXIT_STARVATION
    except MemoryExceededError as exc:
        print(f"lorapack: memory exceeded: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except FitFailureError as exc:
        print(f"lorapack: fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except NoFeasiblePointError as exc:
        print(f"lorapack: no feasible point: {exc}", file=sys.stderr)
        return EXIT_NO_FEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
