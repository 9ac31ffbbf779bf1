"""Surrogate-guided branch selection with one joint training pass at the end."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from .encoding import encode, task_features
from .graph import (LayerSpec, ModelGraph, TaskInfo, branch, build_base, candidate_layers,
                    shareable_rank)
from .heuristic import Candidate, SearchError, resolve_bounds, select_best
from .metrics import DEFAULT_G_TH
from .trainer import MiniTrainer, MultiTaskDataset, TrainConfig

log = logging.getLogger(__name__)


@dataclass
class PredResult:
    model: ModelGraph
    trace: dict[int, list[Candidate]] = field(default_factory=dict)
    surrogate_calls: int = 0
    trainer_calls: int = 0
    surrogate_kind: str = ""
    ll: int = 0
    ul: int = 0
    g_th: float = DEFAULT_G_TH

    def chosen_depths(self) -> dict[int, int]:
        return {t: next(c.depth for c in cands if c.chosen) for t, cands in self.trace.items()}


def ilash_pred(template: Sequence[LayerSpec], surrogate, data: MultiTaskDataset,
               tasks: Sequence[TaskInfo], ll: int | None = None, ul: int | None = None,
               cfg: TrainConfig = TrainConfig(), trainer=None, g_th: float = DEFAULT_G_TH,
               seed: int | None = None) -> PredResult:
    """Pick each task's branch point by predicted goodness, then train once on all tasks.

    ``g_th`` is not used for selection (the surrogate already predicts
    goodness); it is carried into the result for reporting.
    """
    if not tasks:
        raise ValueError("need at least one task")
    trainer = MiniTrainer() if trainer is None else trainer
    seed = cfg.seed if seed is None else seed

    model = build_base(template, tasks[0], seed)
    ll, ul = resolve_bounds(model, ll, ul)
    trace: dict[int, list[Candidate]] = {}
    surrogate_calls = 0
    for task in tasks[1:]:
        cands = candidate_layers(model, ll, ul)
        if not cands:
            raise SearchError(f"task {task.task_id}: no branch candidates in [{ll}, {ul}]")
        tf = task_features(task)
        lr_total = len(model.shareable())
        scored = []
        for lid in cands:
            depth = model.depth_of(lid)
            try:
                gn = float(surrogate.predict_one(tf + encode(model, depth)))
            except Exception as exc:
                raise SearchError(f"surrogate failed for task {task.task_id} at depth {depth}: {exc}") from exc
            surrogate_calls += 1
            scored.append(Candidate(depth, lid, float("nan"), gn, shareable_rank(model, lid), lr_total))
        best = select_best([c.gn for c in scored])
        if best is None:
            best = len(scored) - 1
            warnings.warn(f"task {task.task_id}: every prediction is <= 0; "
                          "falling back to the deepest candidate", RuntimeWarning, stacklevel=2)
        scored[best].chosen = True
        trace[task.task_id] = scored
        log.info("task %s: branch at depth %d (predicted gn=%.4f)", task.task_id,
                 scored[best].depth, scored[best].gn)
        model = branch(model, scored[best].layer_id, task)

    model = trainer.train(model, data, cfg, None, [t.task_id for t in tasks])
    return PredResult(model, trace, surrogate_calls, 1, getattr(surrogate, "kind", ""), ll, ul, g_th)
