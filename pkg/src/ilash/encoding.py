"""Feature rows for the goodness surrogate.

A branch record is ``task features (6) + layer encoding (9) + gn (1)``.  The
CSV layout below is the on-disk ILASH_Dataset schema and must not change
without retraining every stored surrogate.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import ModelGraph, Padding, TaskInfo, TaskKind

TASK_COLUMNS = ("task_cls", "task_reg", "num_outputs", "in_h", "in_w", "in_c")
LAYER_COLUMNS = ("k_m1", "p_m1", "s_m1", "k_0", "p_0", "s_0", "k_p1", "p_p1", "s_p1")
FEATURE_COLUMNS = TASK_COLUMNS + LAYER_COLUMNS
CSV_HEADER = FEATURE_COLUMNS + ("gn",)
N_FEATURES = len(FEATURE_COLUMNS)

_MISSING = (-1, -1, -1)


def encode(model: ModelGraph, idx: int) -> tuple[int, ...]:
    """Kernel/pad/stride triples for the layers at depths idx-1, idx, idx+1.

    Non-convolutional and out-of-range neighbours encode as (-1, -1, -1); the
    pad flag is 1 for ``valid`` padding and 0 otherwise.
    """
    order = model.order()
    if not 0 <= idx < len(order):
        raise IndexError(f"depth {idx} outside [0, {len(order) - 1}]")
    out: list[int] = []
    for i in (-1, 0, 1):
        j = idx + i
        if not 0 <= j < len(order):
            out.extend(_MISSING)
            continue
        layer = model.layers[order[j]]
        if layer.is_conv:
            out.extend((layer.kernel_size, 1 if layer.padding is Padding.VALID else 0, layer.stride))
        else:
            out.extend(_MISSING)
    return tuple(out)


def task_features(task: TaskInfo) -> tuple[int, ...]:
    h, w, c = task.input_shape
    is_cls = task.kind is TaskKind.CLASSIFICATION
    return (int(is_cls), int(not is_cls), task.num_outputs, h, w, c)


@dataclass(frozen=True)
class BranchRecord:
    task: tuple[int, ...]
    layer: tuple[int, ...]
    gn: float
    # provenance only; not part of the CSV schema
    source: str | None = None

    @property
    def features(self) -> tuple[int, ...]:
        return self.task + self.layer

    def row(self) -> tuple:
        return self.features + (self.gn,)


def make_record(task: TaskInfo, model: ModelGraph, idx: int, gn: float,
                source: str | None = None) -> BranchRecord:
    if not 0.0 <= gn <= 1.0:
        raise ValueError(f"gn must lie in [0, 1], got {gn}")
    return BranchRecord(task_features(task), encode(model, idx), float(gn), source)


def feature_matrix(records: Sequence[BranchRecord]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([r.features for r in records], dtype=np.float64).reshape(len(records), N_FEATURES)
    y = np.array([r.gn for r in records], dtype=np.float64)
    return X, y


def _fmt(value: float) -> str:
    return np.format_float_positional(float(value), trim="-")


def write_csv(records: Iterable[BranchRecord], path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow([str(v) for v in rec.features] + [_fmt(rec.gn)])
    finally:
        if own:
            fh.close()


def read_csv(path_or_buf, source: str | None = None) -> list[BranchRecord]:
    if isinstance(path_or_buf, (str, Path)):
        text = Path(path_or_buf).read_text()
        if source is None:
            source = Path(path_or_buf).stem
    else:
        text = path_or_buf.read()
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected ILASH_Dataset header: {','.join(header)}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        values = [int(v) for v in row[:N_FEATURES]]
        records.append(BranchRecord(tuple(values[:6]), tuple(values[6:]), float(row[-1]), source))
    return records
