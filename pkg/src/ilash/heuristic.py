"""Exhaustive branch-point search that also harvests surrogate training rows."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .encoding import BranchRecord, make_record
from .graph import (LayerSpec, ModelGraph, TaskInfo, branch, build_base, candidate_layers,
                    default_bounds, shareable_rank)
from .metrics import DEFAULT_G_TH, goodness
from .trainer import MiniTrainer, MultiTaskDataset, TrainConfig

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass
class Candidate:
    depth: int
    layer_id: int
    acc: float
    gn: float
    rank: int = 0
    total: int = 1
    chosen: bool = False


@dataclass
class HeuResult:
    model: ModelGraph
    dataset: list[BranchRecord]
    trace: dict[int, list[Candidate]] = field(default_factory=dict)
    trainer_calls: int = 0
    ll: int = 0
    ul: int = 0
    g_th: float = DEFAULT_G_TH

    def chosen_depths(self) -> dict[int, int]:
        return {t: next(c.depth for c in cands if c.chosen) for t, cands in self.trace.items()}


def select_best(scores: Sequence[float]) -> int | None:
    """Index of the first strict improvement over 0, or None if nothing beats 0."""
    best, best_i = 0.0, None
    for i, s in enumerate(scores):
        if s > best:
            best, best_i = s, i
    return best_i


def resolve_bounds(model: ModelGraph, ll: int | None, ul: int | None) -> tuple[int, int]:
    d_ll, d_ul = default_bounds(model)
    ll = d_ll if ll is None else ll
    ul = d_ul if ul is None else ul
    if ll > ul:
        raise ValueError(f"branching window is empty: ll={ll} > ul={ul}")
    return ll, ul


def ilash_heu(template: Sequence[LayerSpec], data: MultiTaskDataset, tasks: Sequence[TaskInfo],
              ll: int | None = None, ul: int | None = None, g_th: float = DEFAULT_G_TH,
              evaluator=None, cfg: TrainConfig = TrainConfig(), n_jobs: int = 1,
              seed: int | None = None, freeze_shared: bool = True) -> HeuResult:
    """Train the base model on the first task, then try every branch point for each later task.

    By default candidate models train only their new layers, so evaluating
    one candidate never changes another's shared parameters.  With
    ``freeze_shared=False`` each candidate also fine-tunes the shared layers
    on its path (inside its own copy), and the chosen candidate's weights
    replace the incumbent's.  Every candidate yields one branch record
    whether or not it is selected.
    """
    if not tasks:
        raise ValueError("need at least one task")
    evaluator = MiniTrainer() if evaluator is None else evaluator
    seed = cfg.seed if seed is None else seed
    calls = 0

    model = build_base(template, tasks[0], seed)
    ll, ul = resolve_bounds(model, ll, ul)
    model = evaluator.train(model, data, cfg, None, [tasks[0].task_id])
    calls += 1

    records: list[BranchRecord] = []
    trace: dict[int, list[Candidate]] = {}
    for task in tasks[1:]:
        cands = candidate_layers(model, ll, ul)
        if not cands:
            raise SearchError(f"task {task.task_id}: no branch candidates in [{ll}, {ul}]")
        lr_total = len(model.shareable())

        def evaluate(lid, model=model, task=task, lr_total=lr_total):
            depth = model.depth_of(lid)
            try:
                temp = branch(model, lid, task)
                trainable = temp.branch_layers[task.task_id] if freeze_shared else None
                temp = evaluator.train(temp, data, cfg, trainable, [task.task_id])
                acc = evaluator.score(temp, data, "val", task)
            except Exception as exc:
                raise SearchError(f"evaluation failed for task {task.task_id} at depth {depth}: {exc}") from exc
            rank = shareable_rank(model, lid)
            gn = goodness(acc, rank, lr_total, g_th)
            return temp, Candidate(depth, lid, acc, min(max(gn, 0.0), 1.0), rank, lr_total)

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(evaluate, cands))
        else:
            results = [evaluate(lid) for lid in cands]
        calls += len(results)

        best = select_best([c.gn for _, c in results])
        if best is None:
            best = len(results) - 1
            warnings.warn(f"task {task.task_id}: no candidate scored above 0; "
                          "falling back to the deepest candidate", RuntimeWarning, stacklevel=2)
        for _, cand in results:
            records.append(make_record(task, model, cand.depth, cand.gn))
        results[best][1].chosen = True
        trace[task.task_id] = [c for _, c in results]
        log.info("task %s: branch at depth %d (gn=%.4f)", task.task_id,
                 results[best][1].depth, results[best][1].gn)
        model = results[best][0]

    return HeuResult(model, records, trace, calls, ll, ul, g_th)
