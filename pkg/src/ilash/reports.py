"""JSON run reports for both searches and their side-by-side comparison.

Reports are written as two files: the deterministic body (``report.json``)
and a sidecar (``report.meta.json``) holding wall-clock dependent fields,
so that reruns with the same seed leave the body byte-identical.
"""
from __future__ import annotations

import json
import math
import platform
from datetime import datetime, timezone
from pathlib import Path

import jsonschema

from .energy import EnergyReport
from .graph import ModelGraph, stats
from .metrics import goodness

SCHEMA_VERSION = 1
VOLATILE_KEYS = ("energy", "metadata")

_CANDIDATE = {
    "type": "object",
    "required": ["depth", "gn"],
    "properties": {"depth": {"type": "integer", "minimum": 0}, "gn": {"type": "number"}},
}
_TASK = {
    "type": "object",
    "required": ["id", "chosen_depth", "best_gn", "candidates"],
    "properties": {
        "id": {"type": "integer"},
        "chosen_depth": {"type": ["integer", "null"]},
        "best_gn": {"type": ["number", "null"]},
        "score": {"type": ["number", "null"]},
        "final_gn": {"type": ["number", "null"]},
        "candidates": {"type": "array", "items": _CANDIDATE},
    },
}
_ENERGY = {
    "type": "object",
    "required": ["t", "kwh_pue", "co2_lbs"],
    "properties": {"t": {"type": "number", "minimum": 0},
                   "kwh_pue": {"type": "number", "minimum": 0},
                   "co2_lbs": {"type": "number", "minimum": 0}},
}
RUN_REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "algorithm", "tasks", "stats", "trainer_calls"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "algorithm": {"enum": ["heu", "pred"]},
        "tasks": {"type": "array", "items": _TASK, "minItems": 1},
        "stats": {"type": "object", "required": ["param_count", "layer_count"]},
        "trainer_calls": {"type": "integer", "minimum": 0},
        "surrogate_kind": {"type": "string"},
        "surrogate_calls": {"type": "integer", "minimum": 0},
        "energy": _ENERGY,
        "metadata": {"type": "object"},
    },
}
COMPARISON_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "tasks", "ratios"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tasks": {"type": "array"},
        "ratios": {"type": "object"},
    },
}


def _stats_json(model: ModelGraph) -> dict:
    s = stats(model)
    s["shared_layer_count"] = {str(k): v for k, v in s["shared_layer_count"].items()}
    return s


def run_report(result, energy: EnergyReport | None = None, scores: dict | None = None,
               extra_meta: dict | None = None) -> dict:
    """Bundle a :class:`HeuResult` or :class:`PredResult` into the report schema."""
    is_pred = hasattr(result, "surrogate_calls")
    scores = scores or {}
    tasks = []
    for tid in result.model.heads:
        cands = result.trace.get(tid, [])
        chosen = next((c for c in cands if c.chosen), None)
        score = scores.get(tid)
        final_gn = None
        if score is not None and chosen is not None:
            final_gn = goodness(score, chosen.rank, chosen.total, result.g_th)
        tasks.append({
            "id": tid,
            "chosen_depth": None if chosen is None else chosen.depth,
            "best_gn": None if chosen is None else chosen.gn,
            "score": score,
            "final_gn": final_gn,
            "candidates": [{"depth": c.depth, "gn": c.gn} for c in cands],
        })
    report = {
        "schema_version": SCHEMA_VERSION,
        "algorithm": "pred" if is_pred else "heu",
        "g_th": result.g_th,
        "ll": result.ll,
        "ul": result.ul,
        "tasks": tasks,
        "stats": _stats_json(result.model),
        "trainer_calls": result.trainer_calls,
    }
    if is_pred:
        report["surrogate_kind"] = result.surrogate_kind
        report["surrogate_calls"] = result.surrogate_calls
    if energy is not None:
        report["energy"] = energy.to_dict()
    report["metadata"] = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "python": platform.python_version(),
        **(extra_meta or {}),
    }
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    jsonschema.validate(report, RUN_REPORT_SCHEMA)


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_report(report: dict, path) -> None:
    body = {k: v for k, v in report.items() if k not in VOLATILE_KEYS}
    volatile = {k: report[k] for k in VOLATILE_KEYS if k in report}
    Path(path).write_text(dumps(body))
    if volatile:
        meta_path(path).write_text(dumps(volatile))


def load_report(path) -> dict:
    report = json.loads(Path(path).read_text())
    side = meta_path(path)
    if side.exists():
        report.update(json.loads(side.read_text()))
    return report


def _ratio(a, b):
    if a is None or b is None:
        return None
    if b == 0:
        return 1.0 if a == 0 else None
    return a / b


def compare_runs(heu: dict, pred: dict) -> dict:
    """Per-task side-by-side table plus heu/pred cost ratios."""
    h_tasks = {t["id"]: t for t in heu["tasks"]}
    p_tasks = {t["id"]: t for t in pred["tasks"]}
    if set(h_tasks) != set(p_tasks):
        raise ValueError(f"task sets differ: {sorted(h_tasks)} vs {sorted(p_tasks)}")
    rows = []
    for tid in h_tasks:
        row = {"id": tid}
        for name, t in (("heu", h_tasks[tid]), ("pred", p_tasks[tid])):
            row[name] = {k: t.get(k) for k in ("chosen_depth", "best_gn", "score", "final_gn")}
        rows.append(row)
    h_e, p_e = heu.get("energy", {}), pred.get("energy", {})
    ratios = {
        "trainer_calls": _ratio(heu["trainer_calls"], pred["trainer_calls"]),
        "param_count": _ratio(heu["stats"]["param_count"], pred["stats"]["param_count"]),
        "runtime_hours": _ratio(h_e.get("t"), p_e.get("t")),
        "kwh_pue": _ratio(h_e.get("kwh_pue"), p_e.get("kwh_pue")),
        "co2_lbs": _ratio(h_e.get("co2_lbs"), p_e.get("co2_lbs")),
    }
    ratios = {k: (None if v is not None and not math.isfinite(v) else v) for k, v in ratios.items()}
    out = {
        "schema_version": SCHEMA_VERSION,
        "tasks": rows,
        "trainer_calls": {"heu": heu["trainer_calls"], "pred": pred["trainer_calls"]},
        "energy": {"heu": h_e or None, "pred": p_e or None},
        "ratios": ratios,
    }
    jsonschema.validate(out, COMPARISON_SCHEMA)
    return out
