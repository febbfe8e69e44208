"""Command-line client for the assessment service.

The CLI validates an experiment config file, builds service requests, and
dispatches them to the service handlers in-process (or to a running server
with ``--server``). All file output happens here; the service stays
stateless. Exit codes: 0 success, 1 validation error, 2 timeout with
partial results written, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pydantic
import yaml

from .errors import ConfigurationError, ContractError, FedShapleyError, IngestionError
from .serialize import config_hash
from .service import handlers
from .service.schemas import (AssessRequest, AssessResponse, CompareRequest,
                              CompareResponse, DetectRequest, DetectResponse,
                              ExperimentConfig, ScheduleRequest, ScheduleResponse,
                              SimulateRequest, SimulateResponse)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_INTERNAL = 3


class _Client:
    """Dispatches requests either in-process or to a remote server."""

    _ROUTES = {
        "simulate": (handlers.simulate, SimulateResponse),
        "assess": (handlers.assess_log, AssessResponse),
        "schedule": (handlers.schedule_epochs, ScheduleResponse),
        "detect": (handlers.detect, DetectResponse),
        "compare": (handlers.compare, CompareResponse),
    }

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def call(self, route: str, request):
        handler, response_model = self._ROUTES[route]
        if self.server is None:
            return handler(request)
        import httpx

        reply = httpx.post(f"{self.server}/{route}",
                           json=request.model_dump(mode="json"), timeout=None)
        if reply.status_code in (400, 422):
            raise ConfigurationError(f"server rejected the request: {reply.text}")
        reply.raise_for_status()
        return response_model.model_validate(reply.json())


def load_config(path: str) -> ExperimentConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    text = config_path.read_text()
    if config_path.suffix in (".yaml", ".yml"):
        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    config = ExperimentConfig.model_validate(raw)
    if config.scenario is not None and config.scenario.data.kind == "csv":
        csv_path = Path(config.scenario.data.path)
        if not csv_path.exists():
            raise ConfigurationError(
                f"scenario.data.path: file {csv_path} does not exist")
    return config


def _write(out_dir: Path, name: str, text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)
    print(f"wrote {out_dir / name}")


def _meta(config: ExperimentConfig, seed: int) -> dict:
    return {"config_hash": config_hash(config.model_dump(mode="json")), "seed": seed}


def _require(value, field: str):
    if value is None:
        raise ConfigurationError(f"config is missing the {field!r} section")
    return value


def cmd_simulate(args, config: ExperimentConfig, client: _Client) -> int:
    scenario = _require(config.scenario, "scenario")
    seed = args.seed if args.seed is not None else config.seeds[0]
    response = client.call("simulate", SimulateRequest(scenario=scenario, seed=seed,
                                                       meta=_meta(config, seed)))
    out = Path(args.out)
    _write(out, "gradient_log.json", response.log_document)
    _write(out, "manifest.json",
           json.dumps(response.manifest, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_assess(args, config: ExperimentConfig, client: _Client) -> int:
    log_document = Path(args.log).read_text()
    seed = args.seed if args.seed is not None else config.seeds[0]
    cutoff = args.cutoff_seconds or config.cutoff_seconds
    request = AssessRequest(log_document=log_document, assessment=config.assessment,
                            cutoff_seconds=cutoff, meta=_meta(config, seed))
    response = client.call("assess", request)
    out = Path(args.out)
    _write(out, "timeline.csv", response.timeline_csv)
    _write(out, "assessment_summary.json", response.summary)
    _write(out, "timing.json",
           json.dumps({**response.timing, **_meta(config, seed)}, indent=1))
    if response.status == "partial":
        print("cutoff reached: timeline is partial (see computed flags)")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_schedule(args, config: ExperimentConfig, client: _Client) -> int:
    log_document = Path(args.log).read_text()
    options = _require(config.assessment.schedule, "assessment.schedule")
    seed = args.seed if args.seed is not None else config.seeds[0]
    request = ScheduleRequest(log_document=log_document,
                              utility=config.assessment.utility, options=options,
                              meta=_meta(config, seed))
    response = client.call("schedule", request)
    _write(Path(args.out), "schedule.json", response.schedule_document)
    return EXIT_OK


def cmd_detect(args, config: ExperimentConfig, client: _Client) -> int:
    timeline_csv = Path(args.timeline).read_text()
    detection = _require(config.detection, "detection")
    seed = args.seed if args.seed is not None else config.seeds[0]
    truth = None
    if config.scenario is not None and config.scenario.dishonest:
        truth = [c.client_id for c in config.scenario.dishonest]
    request = DetectRequest(timeline_csv=timeline_csv, detection=detection,
                            dishonest_truth=truth, meta=_meta(config, seed))
    response = client.call("detect", request)
    _write(Path(args.out), "detection_report.json", response.report)
    return EXIT_OK


def cmd_compare(args, config: ExperimentConfig, client: _Client) -> int:
    grid = _require(config.compare, "compare")
    cutoff = args.cutoff_seconds or config.cutoff_seconds
    request = CompareRequest(grid=grid, cutoff_seconds=cutoff,
                             meta=_meta(config, config.seeds[0]))
    response = client.call("compare", request)
    out = Path(args.out)
    for name, text in response.tables.items():
        _write(out, name, text)
    for name, text in response.timing_tables.items():
        _write(out, name, text)
    if response.status == "partial":
        print("cutoff reached: some instances are unsolved in the tables")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedshapley",
        description="Simulate federated training and assess per-client "
                    "contributions with history-aware Shapley values.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, log=False, timeline=False, cutoff=False):
        p.add_argument("--config", required=True, help="experiment config (json/yaml)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's first seed")
        p.add_argument("--server", default=None,
                       help="dispatch to a running service instead of in-process")
        if log:
            p.add_argument("--log", required=True, help="gradient log document")
        if timeline:
            p.add_argument("--timeline", required=True, help="timeline csv")
        if cutoff:
            p.add_argument("--cutoff-seconds", type=float, default=None)

    common(sub.add_parser("simulate", help="run a training simulation"))
    common(sub.add_parser("assess", help="value a recorded run"),
           log=True, cutoff=True)
    common(sub.add_parser("schedule", help="pick the epochs worth valuing"),
           log=True)
    common(sub.add_parser("detect", help="analyze a timeline for poisoning"),
           timeline=True)
    common(sub.add_parser("compare", help="benchmark methods over a grid"),
           cutoff=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8707)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "assess": cmd_assess,
    "schedule": cmd_schedule,
    "detect": cmd_detect,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](args, config, _Client(args.server))
    except pydantic.ValidationError as exc:
        for error in exc.errors():
            loc = ".".join(str(part) for part in error["loc"])
            print(f"config error at {loc}: {error['msg']}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigurationError, ContractError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FedShapleyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
