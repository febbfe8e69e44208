"""Text formats for logs, timelines, schedules, and reports.

Gradient logs are single JSON documents with a format/version tag. Floats
are emitted through Python's repr (the shortest decimal string that parses
back to the same double), so serialize -> parse round-trips are bit-exact.
Timelines are CSV with a short comment preamble; summaries, schedules, and
detection reports are JSON. Wall-clock timings never enter these documents
(they live in a separate timing file) so re-runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json

import numpy as np

from .datasets import Dataset
from .errors import ContractError
from .models import ModelKind, ModelSpec, Utility
from .shapley import ContributionTimeline
from .simulation import EpochRecord, GradientLog

LOG_FORMAT = "fedshapley-gradient-log"
LOG_VERSION = 1
TIMELINE_FORMAT = "fedshapley-timeline"
TIMELINE_VERSION = 1


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _model_spec_to_dict(spec: ModelSpec) -> dict:
    return {"kind": spec.kind.value, "input_dim": spec.input_dim,
            "num_classes": spec.num_classes, "hidden": list(spec.hidden)}


def _model_spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(kind=ModelKind(d["kind"]), input_dim=d["input_dim"],
                     num_classes=d["num_classes"], hidden=tuple(d["hidden"]))


def _dataset_to_dict(data: Dataset) -> dict:
    return {"name": data.name, "features": data.features.tolist(),
            "labels": data.labels.tolist()}


def _dataset_from_dict(d: dict) -> Dataset:
    return Dataset(np.array(d["features"], dtype=np.float64),
                   np.array(d["labels"], dtype=np.int64), name=d["name"])


def gradient_log_to_json(log: GradientLog, meta: dict | None = None) -> str:
    """Serialize a gradient log; ``meta`` (config hash, seed) is embedded as
    an informational block and ignored by the parser."""
    doc = {
        "format": LOG_FORMAT,
        "version": LOG_VERSION,
        "meta": dict(meta or {}),
        "model_spec": _model_spec_to_dict(log.model_spec),
        "num_clients": log.num_clients,
        "initial_model": log.initial_model.tolist(),
        "validation": _dataset_to_dict(log.validation),
        "epochs": [
            {
                "epoch": rec.epoch,
                "participants": list(rec.participants),
                "data_sizes": {str(cid): int(size) for cid, size in sorted(rec.data_sizes.items())},
                "gradients": {str(cid): rec.gradients[cid].tolist() for cid in rec.participants},
                "global_before": rec.global_before.tolist(),
                "global_after": rec.global_after.tolist(),
            }
            for rec in log.epochs
        ],
    }
    return json.dumps(doc, indent=1)


def parse_gradient_log(text: str) -> GradientLog:
    doc = json.loads(text)
    if doc.get("format") != LOG_FORMAT:
        raise ContractError(f"not a gradient log document: {doc.get('format')!r}")
    if doc.get("version") != LOG_VERSION:
        raise ContractError(f"unsupported gradient log version {doc.get('version')!r}")
    epochs = [
        EpochRecord(
            epoch=e["epoch"],
            participants=tuple(e["participants"]),
            gradients={int(cid): np.array(g, dtype=np.float64)
                       for cid, g in e["gradients"].items()},
            data_sizes={int(cid): int(size) for cid, size in e["data_sizes"].items()},
            global_before=np.array(e["global_before"], dtype=np.float64),
            global_after=np.array(e["global_after"], dtype=np.float64),
        )
        for e in doc["epochs"]
    ]
    return GradientLog(model_spec=_model_spec_from_dict(doc["model_spec"]),
                       initial_model=np.array(doc["initial_model"], dtype=np.float64),
                       epochs=epochs,
                       validation=_dataset_from_dict(doc["validation"]),
                       num_clients=doc["num_clients"])


def timeline_to_csv(timeline: ContributionTimeline, meta: dict | None = None) -> str:
    """Timeline rows plus a comment preamble.

    One row per client x epoch: client_id, epoch, phi (empty when that epoch
    was not computed), computed flag, and the running total over computed
    epochs.
    """
    out = io.StringIO()
    out.write(f"# {TIMELINE_FORMAT} v{TIMELINE_VERSION}\n")
    out.write(f"# utility={timeline.utility.value}\n")
    for key, value in (meta or {}).items():
        out.write(f"# {key}={value}\n")
    out.write("client_id,epoch,phi,computed,cumulative_phi\n")
    cumulative = timeline.cumulative()
    for cid in range(timeline.num_clients):
        for t in range(timeline.num_epochs + 1):
            phi = repr(float(timeline.values[cid, t])) if timeline.computed[t] else ""
            flag = 1 if timeline.computed[t] else 0
            out.write(f"{cid},{t},{phi},{flag},{float(cumulative[cid, t])!r}\n")
    return out.getvalue()


def parse_timeline_csv(text: str) -> ContributionTimeline:
    """Rebuild a timeline from its CSV export.

    The export does not carry per-epoch utility gains, so the parsed
    timeline has zero epoch deltas; its residual is only meaningful for
    fully computed timelines (where it is zero by definition).
    """
    lines = text.splitlines()
    meta: dict[str, str] = {}
    rows: list[tuple[int, int, str, int]] = []
    header_seen = False
    for line in lines:
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        if not line.strip():
            continue
        if not header_seen:
            if line.strip() != "client_id,epoch,phi,computed,cumulative_phi":
                raise ContractError(f"unexpected timeline header {line!r}")
            header_seen = True
            continue
        cid, t, phi, flag, _ = line.split(",")
        rows.append((int(cid), int(t), phi, int(flag)))
    if not rows:
        raise ContractError("timeline document has no rows")

    m = max(r[0] for r in rows) + 1
    T = max(r[1] for r in rows)
    values = np.full((m, T + 1), np.nan)
    computed = np.zeros(T + 1, dtype=bool)
    for cid, t, phi, flag in rows:
        if flag:
            computed[t] = True
            values[cid, t] = float(phi)
    utility = Utility(meta.get("utility", Utility.NEG_LOSS.value))
    base = float(values[:, 0].sum())
    return ContributionTimeline(values=values, computed=computed, utility=utility,
                                epoch_deltas=np.zeros(T + 1), base_utility=base)


def assessment_summary(timeline: ContributionTimeline, eval_counts: dict[int, int],
                       completed: bool, meta: dict | None = None) -> str:
    """Deterministic JSON summary of an assessment (no wall-clock here)."""
    doc = {
        "format": "fedshapley-assessment-summary",
        "utility": timeline.utility.value,
        "num_clients": timeline.num_clients,
        "num_epochs": timeline.num_epochs,
        "computed_epochs": list(timeline.computed_epochs),
        "completed": bool(completed),
        "totals": {str(cid): float(v) for cid, v in enumerate(timeline.totals())},
        "residual": timeline.residual,
        "base_utility": timeline.base_utility,
        "final_utility": timeline.final_utility,
        "evaluation_counts": {str(t): int(c) for t, c in sorted(eval_counts.items())},
        "total_evaluations": int(sum(eval_counts.values())),
    }
    if timeline.utility is Utility.NEG_LOSS:
        doc["final_validation_loss"] = -timeline.final_utility
    doc.update(meta or {})
    return json.dumps(doc, indent=1)


def schedule_document(schedule, meta: dict | None = None) -> str:
    doc = {
        "format": "fedshapley-schedule",
        "z": list(schedule.z),
        "k": schedule.k,
        "gamma": schedule.gamma,
        "solver": schedule.solver.value,
        "objective_value": schedule.objective_value,
        "optimality": schedule.optimality.value,
        "selected_epochs": list(schedule.selected_epochs),
    }
    doc.update(meta or {})
    return json.dumps(doc, indent=1)


def parse_schedule_document(text: str) -> list[int]:
    doc = json.loads(text)
    if doc.get("format") != "fedshapley-schedule":
        raise ContractError("not a schedule document")
    return [int(v) for v in doc["z"]]


def detection_report(posteriors: dict[int, np.ndarray], masses: dict[int, float],
                     window: tuple[int, int], assignment, jaccard: float | None,
                     dishonest_truth: list[int] | None,
                     meta: dict | None = None) -> str:
    doc = {
        "format": "fedshapley-detection-report",
        "window": list(window),
        "change_mass_in_window": {str(cid): float(v) for cid, v in sorted(masses.items())},
        "posteriors": {str(cid): [float(v) for v in vec]
                       for cid, vec in sorted(posteriors.items())},
        "clusters": {str(cid): int(label)
                     for cid, label in sorted(assignment.labels.items())},
        "num_clusters": assignment.num_clusters,
        "reduced_clusters": assignment.reduced,
        "jaccard_honest_separation": jaccard,
        "dishonest_ground_truth": sorted(dishonest_truth) if dishonest_truth else None,
    }
    doc.update(meta or {})
    return json.dumps(doc, indent=1)
