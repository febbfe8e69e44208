"""Service handlers: pure functions from request models to response models.

All domain logic lives in the core package; handlers translate between wire
schemas and core types, and keep wall-clock data out of the deterministic
documents.
"""

from __future__ import annotations

import concurrent.futures
import io
import platform
import time

import numpy as np

from .. import __version__
from ..datasets import load_csv, make_synthetic, train_validation_split
from ..experiments import equal_split, run_detection_pipeline
from ..models import LocalTrainConfig, ModelKind, ModelSpec, Utility
from ..scheduling import (ObjectiveKind, build_problem, solve_exhaustive,
                          solve_one_sided, solve_two_sided_exact, solve_two_sided_lb)
from ..serialize import (assessment_summary, detection_report, gradient_log_to_json,
                         parse_gradient_log, parse_timeline_csv, schedule_document,
                         timeline_to_csv)
from ..shapley import (Exact, MonteCarloPermutation, PluginApproximation, assess,
                       mse_vs_exact)
from ..simulation import ClientConfig, Scenario, partition_noniid, run_simulation
from .schemas import (AssessRequest, AssessResponse, CompareRequest, CompareResponse,
                      DetectRequest, DetectResponse, ScenarioModel,
                      ScheduleOptionsModel, ScheduleRequest, ScheduleResponse,
                      SimulateRequest, SimulateResponse)

_SOLVERS = {
    "one_sided": solve_one_sided,
    "two_sided_exact": solve_two_sided_exact,
    "two_sided_lb": solve_two_sided_lb,
}


def versions() -> dict:
    return {"fedshapley": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def build_scenario(model: ScenarioModel, seed: int) -> Scenario:
    """Materialize a scenario config: load data, split, partition, wire clients."""
    source = model.data
    if source.kind == "synthetic":
        data = make_synthetic(source.classes, source.rows, source.features,
                              source.separation, seed=seed)
    else:
        data = load_csv(source.path, source.label_column)
    train, validation = train_validation_split(data, model.validation_fraction, seed)
    if model.beta is None:
        parts = equal_split(train, model.num_clients)
    else:
        parts = partition_noniid(train, model.num_clients, model.beta, seed)

    dishonest = {c.client_id: c for c in model.dishonest}
    clients = []
    for cid in range(model.num_clients):
        if cid in dishonest:
            cfg = dishonest[cid]
            clients.append(ClientConfig(client_id=cid, data=parts[cid], dishonest=True,
                                        poison_window=tuple(cfg.window),
                                        flip_probability=cfg.flip_probability))
        else:
            clients.append(ClientConfig(client_id=cid, data=parts[cid]))

    kind = ModelKind.LOGISTIC if model.model.kind == "logistic" else ModelKind.MLP
    spec = ModelSpec(kind=kind, input_dim=data.num_features,
                     num_classes=data.num_classes, hidden=tuple(model.model.hidden))
    train_cfg = LocalTrainConfig(local_epochs=model.train.local_epochs,
                                 batch_size=model.train.batch_size,
                                 learning_rate=model.train.learning_rate)
    return Scenario(clients=clients, model_spec=spec, num_epochs=model.epochs,
                    fraction=model.fraction, train=train_cfg, validation=validation,
                    seed=seed)


def build_method(model) -> Exact | MonteCarloPermutation | PluginApproximation:
    if model.kind == "exact":
        return Exact()
    if model.kind == "monte_carlo":
        return MonteCarloPermutation(samples=model.samples, seed=model.seed,
                                     rescale=model.rescale)
    return PluginApproximation(samples=model.samples, seed=model.seed, name=model.name)


def solve_schedule(log, utility: Utility, options: ScheduleOptionsModel):
    problem = build_problem(log, utility, k=options.budget(log.num_epochs),
                            gamma=options.gamma,
                            normalize_terms=options.normalize_terms)
    if options.solver == "exhaustive":
        return solve_exhaustive(problem, ObjectiveKind(options.exhaustive_kind))
    return _SOLVERS[options.solver](problem)


def simulate(request: SimulateRequest) -> SimulateResponse:
    scenario = build_scenario(request.scenario, request.seed)
    log = run_simulation(scenario)
    manifest = {"seed": request.seed, "num_clients": log.num_clients,
                "epochs": log.num_epochs, "versions": versions()}
    manifest.update(request.meta)
    return SimulateResponse(log_document=gradient_log_to_json(log, meta=request.meta),
                            manifest=manifest)


def assess_log(request: AssessRequest) -> AssessResponse:
    log = parse_gradient_log(request.log_document)
    utility = Utility(request.assessment.utility)
    method = build_method(request.assessment.method)
    schedule = None
    if request.assessment.schedule is not None:
        schedule = solve_schedule(log, utility, request.assessment.schedule)
    result = assess(log, utility, method, schedule=schedule,
                    cutoff_seconds=request.cutoff_seconds)
    meta = dict(request.meta)
    timeline_csv = timeline_to_csv(result.timeline, meta=meta)
    summary = assessment_summary(result.timeline, result.eval_counts,
                                 result.completed, meta=meta)
    timing = {"elapsed_seconds": result.elapsed_seconds,
              "completed": result.completed}
    return AssessResponse(status="ok" if result.completed else "partial",
                          timeline_csv=timeline_csv, summary=summary, timing=timing)


def schedule_epochs(request: ScheduleRequest) -> ScheduleResponse:
    log = parse_gradient_log(request.log_document)
    schedule = solve_schedule(log, Utility(request.utility), request.options)
    return ScheduleResponse(
        schedule_document=schedule_document(schedule, meta=dict(request.meta)))


def detect(request: DetectRequest) -> DetectResponse:
    timeline = parse_timeline_csv(request.timeline_csv)
    options = request.detection
    dishonest = tuple(request.dishonest_truth or ())
    outcome = run_detection_pipeline(timeline, tuple(options.window), dishonest,
                                     hazard=options.hazard,
                                     k_clusters=options.k_clusters,
                                     seed=options.seed,
                                     noise_scale=options.noise_scale,
                                     mean_scale=options.mean_scale)
    meta = dict(request.meta)
    if dishonest:
        meta["mean_dishonest_window_mass"] = outcome.mean_dishonest_mass
    report = detection_report(outcome.posteriors, outcome.masses,
                              tuple(options.window), outcome.assignment,
                              outcome.jaccard if dishonest else None,
                              list(dishonest) or None, meta=meta)
    return DetectResponse(report=report)


# --- comparison grid ---------------------------------------------------------


def _compare_instance(grid_dump: dict, m: int, T: int, seed: int,
                      cutoff: float | None) -> list[dict]:
    """Assess one grid instance with every method; one row per method."""
    from .schemas import CompareGridModel

    grid = CompareGridModel(**grid_dump)
    scenario_model = ScenarioModel(num_clients=m, epochs=T, fraction=grid.fraction,
                                   data=grid.data, train=grid.train)
    scenario = build_scenario(scenario_model, seed)
    log = run_simulation(scenario)
    utility = Utility(grid.utility)
    instance = f"m{m}-T{T}-s{seed}"

    rows = []
    started = time.monotonic()
    exact_result = assess(log, utility, Exact(), cutoff_seconds=cutoff)
    exact_elapsed = time.monotonic() - started
    exact_tl = exact_result.timeline if exact_result.completed else None
    rows.append({"instance": instance, "method": "exact", "num_clients": m,
                 "epochs": T, "seed": seed, "solved": int(exact_result.completed),
                 "mse": 0.0 if exact_result.completed else None,
                 "evaluations": sum(exact_result.eval_counts.values()),
                 "computed_epochs": len(exact_result.timeline.computed_epochs),
                 "runtime_seconds": exact_elapsed})

    variants: list[tuple[str, object, object]] = []
    for samples in grid.mc_samples:
        variants.append((f"mc{samples}",
                         MonteCarloPermutation(samples=samples, seed=seed), None))
    for ratio in grid.k_ratios:
        options = ScheduleOptionsModel(solver=grid.solver, k_ratio=ratio,
                                       gamma=grid.gamma)
        variants.append((f"sched-{grid.solver}-k{ratio:g}", Exact(), options))

    for name, method, schedule_opts in variants:
        schedule = None
        if schedule_opts is not None:
            schedule = solve_schedule(log, utility, schedule_opts)
        started = time.monotonic()
        result = assess(log, utility, method, schedule=schedule, cutoff_seconds=cutoff)
        elapsed = time.monotonic() - started
        mse = None
        if exact_tl is not None and result.completed:
            mse = mse_vs_exact(result.timeline, exact_tl)
        rows.append({"instance": instance, "method": name, "num_clients": m,
                     "epochs": T, "seed": seed, "solved": int(result.completed),
                     "mse": mse,
                     "evaluations": sum(result.eval_counts.values()),
                     "computed_epochs": len(result.timeline.computed_epochs),
                     "runtime_seconds": elapsed})
    return rows


def _csv_table(rows: list[dict], columns: list[str], meta: dict) -> str:
    out = io.StringIO()
    for key, value in meta.items():
        out.write(f"# {key}={value}\n")
    out.write(",".join(columns) + "\n")
    for row in rows:
        cells = []
        for col in columns:
            value = row[col]
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def compare(request: CompareRequest) -> CompareResponse:
    grid = request.grid
    jobs = [(m, T, seed) for m in grid.num_clients for T in grid.epochs
            for seed in grid.seeds]
    dump = grid.model_dump(mode="json")

    all_rows: list[dict] = []
    if grid.parallelism > 1:
        with concurrent.futures.ProcessPoolExecutor(grid.parallelism) as pool:
            futures = [pool.submit(_compare_instance, dump, m, T, seed,
                                   request.cutoff_seconds) for m, T, seed in jobs]
            for future in futures:
                all_rows.extend(future.result())
    else:
        for m, T, seed in jobs:
            all_rows.extend(_compare_instance(dump, m, T, seed,
                                              request.cutoff_seconds))
    all_rows.sort(key=lambda r: (r["instance"], r["method"]))

    meta = dict(request.meta)
    det_cols = ["instance", "method", "num_clients", "epochs", "seed", "solved",
                "mse", "evaluations", "computed_epochs"]
    tables = {"comparison_mse.csv": _csv_table(all_rows, det_cols, meta)}

    cactus_rows = []
    for method in sorted({r["method"] for r in all_rows}):
        solved = sorted(r["mse"] for r in all_rows
                        if r["method"] == method and r["mse"] is not None)
        cactus_rows.extend({"method": method, "rank": i + 1, "mse": v}
                           for i, v in enumerate(solved))
    tables["cactus_mse.csv"] = _csv_table(cactus_rows, ["method", "rank", "mse"], meta)

    timing_cols = ["instance", "method", "solved", "runtime_seconds"]
    timing_tables = {"comparison_runtime.csv": _csv_table(all_rows, timing_cols, meta)}
    cactus_time = []
    for method in sorted({r["method"] for r in all_rows}):
        solved = sorted(r["runtime_seconds"] for r in all_rows
                        if r["method"] == method and r["solved"])
        cactus_time.extend({"method": method, "rank": i + 1, "runtime_seconds": v}
                           for i, v in enumerate(solved))
    timing_tables["cactus_runtime.csv"] = _csv_table(
        cactus_time, ["method", "rank", "runtime_seconds"], meta)

    status = "ok" if all(r["solved"] for r in all_rows) else "partial"
    return CompareResponse(status=status, tables=tables, timing_tables=timing_tables)
