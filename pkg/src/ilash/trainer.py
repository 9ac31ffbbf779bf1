"""Desk-scale numpy training backend for :class:`~ilash.graph.ModelGraph`.

Also provides the synthetic multi-task dataset used in place of image
benchmarks, its on-disk format, and a table-driven replay evaluator for
deterministic search tests.
"""
from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import layers as L
from .graph import ModelGraph, TaskInfo, TaskKind
from .metrics import task_score

SPLITS = ("train", "val", "test")
DEFAULT_PROPORTIONS = (0.7, 0.1, 0.2)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class MultiTaskDataset:
    """Shared inputs with one target array per task.

    All tasks observe the same samples, so ``splits`` index ``X`` and every
    target array alike.
    """

    X: np.ndarray
    targets: dict[int, np.ndarray]
    tasks: dict[int, TaskInfo]
    splits: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.X)
        for tid, y in self.targets.items():
            if len(y) != n:
                raise ValueError(f"task {tid}: {len(y)} targets for {n} samples")
        seen = np.concatenate([np.asarray(self.splits[s]) for s in SPLITS])
        if len(seen) != n or len(np.unique(seen)) != n:
            raise ValueError("splits must be disjoint and cover every sample")

    @property
    def task_list(self) -> list[TaskInfo]:
        return list(self.tasks.values())

    def inputs(self, split: str) -> np.ndarray:
        return self.X[self.splits[split]]

    def target(self, task_id: int, split: str) -> np.ndarray:
        return self.targets[task_id][self.splits[split]]


def split_indices(n: int, proportions=DEFAULT_PROPORTIONS, seed: int = 0) -> dict[str, np.ndarray]:
    if n < 1:
        raise ValueError("need at least one sample")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * proportions[0]))
    n_val = int(round(n * proportions[1]))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


# --------------------------------------------------------------------------
# graph forward / backward


def _needed_layers(model: ModelGraph, task_ids) -> list[int]:
    needed = set()
    for t in task_ids:
        needed.update(model.path(t))
    return [lid for lid in model.order() if lid in needed]


def forward(model: ModelGraph, X: np.ndarray, task_ids=None, logits: bool = False):
    """Outputs per task and the per-layer caches needed for backprop."""
    task_ids = list(model.heads) if task_ids is None else list(task_ids)
    X = np.asarray(X, dtype=np.float64)
    if tuple(X.shape[1:]) != tuple(model.input_shape):
        raise ValueError(f"input shape {X.shape[1:]} does not match model input {model.input_shape}")
    parents = model.parents
    heads = set(model.heads.values())
    acts: dict[int, np.ndarray] = {}
    caches = {}
    for lid in _needed_layers(model, task_ids):
        x = X if lid == model.root else acts[parents[lid]]
        spec = model.layers[lid]
        apply = not (logits and lid in heads)
        acts[lid], caches[lid] = L.forward(spec, x, model.params.get(lid, {}), apply)
    outputs = {t: acts[model.heads[t]] for t in task_ids}
    return outputs, caches


def predict(model: ModelGraph, X, task_id: int) -> np.ndarray:
    return forward(model, X, [task_id])[0][task_id]


def loss_and_grad(task: TaskInfo, z: np.ndarray, y: np.ndarray):
    """Loss and d(loss)/d(logits) for one task's head."""
    n = len(z)
    if task.kind is TaskKind.REGRESSION:
        y = np.asarray(y, dtype=np.float64).reshape(z.shape)
        diff = z - y
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    y = np.asarray(y).reshape(-1).astype(int)
    if task.num_outputs == 1:
        zz = z[:, 0]
        p = L.sigmoid(zz)
        # log(1 + exp(-|z|)) form avoids overflow
        loss = np.mean(np.maximum(zz, 0) - zz * y + np.log1p(np.exp(-np.abs(zz))))
        return float(loss), ((p - y) / n)[:, None]
    p = L.softmax(z)
    logp = z - z.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(n), y])
    g = p.copy()
    g[np.arange(n), y] -= 1.0
    return float(loss), g / n


def backward(model: ModelGraph, caches, head_grads: Mapping[int, np.ndarray], trainable) -> dict:
    """Parameter gradients for ``trainable`` layers given gradients at the heads."""
    parents = model.parents
    order = [lid for lid in model.order() if lid in caches]
    upstream = {}
    for lid in order:
        p = parents.get(lid)
        upstream[lid] = p is not None and (upstream[p] or p in trainable)
    grads_out = {model.heads[t]: g for t, g in head_grads.items()}
    param_grads = {}
    for lid in reversed(order):
        dy = grads_out.pop(lid, None)
        if dy is None or not (lid in trainable or upstream[lid]):
            continue
        dx, grads = L.backward(model.layers[lid], dy, caches[lid], model.params.get(lid, {}))
        if lid in trainable and grads:
            param_grads[lid] = grads
        p = parents.get(lid)
        if p is not None and upstream[lid]:
            grads_out[p] = grads_out[p] + dx if p in grads_out else dx
    return param_grads


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: {n: np.zeros_like(a) for n, a in v.items()} for k, v in params.items()}
        self.v = {k: {n: np.zeros_like(a) for n, a in v.items()} for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for lid, g in grads.items():
            for name, dg in g.items():
                m = self.m[lid][name]
                v = self.v[lid][name]
                m *= self.b1
                m += (1.0 - self.b1) * dg
                v *= self.b2
                v += (1.0 - self.b2) * dg * dg
                params[lid][name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for lid, g in grads.items():
            for name, dg in g.items():
                params[lid][name] -= self.lr * dg


def train(model: ModelGraph, data: MultiTaskDataset, cfg: TrainConfig = TrainConfig(),
          trainable: Iterable[int] | None = None, tasks: Sequence[int] | None = None):
    """Minibatch training on the summed loss of ``tasks`` (default: every head).

    Returns ``(trained_model, history)`` where ``history`` holds the mean
    training loss of each epoch.  Layers outside ``trainable`` keep their
    parameter arrays untouched.
    """
    task_ids = list(model.heads) if tasks is None else list(tasks)
    for t in task_ids:
        if t not in data.targets:
            raise ValueError(f"no targets for task {t}")
    trainable = set(model.layers) if trainable is None else set(trainable)
    unknown = trainable - set(model.layers)
    if unknown:
        raise ValueError(f"trainable layers not in model: {sorted(unknown)}")
    if tuple(data.X.shape[1:]) != tuple(model.input_shape):
        raise ValueError(f"data inputs {data.X.shape[1:]} do not match model input {model.input_shape}")
    needed = set(_needed_layers(model, task_ids))
    trainable &= needed
    work = {lid: {n: a.copy() for n, a in model.params[lid].items()}
            for lid in trainable if lid in model.params}
    params = {**model.params, **work}
    current = model.replace_params(params)
    opt = _Adam(work, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(work, cfg.learning_rate)

    idx = np.asarray(data.splits["train"])
    if len(idx) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(idx)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            outputs, caches = forward(current, data.X[batch], task_ids, logits=True)
            head_grads = {}
            batch_loss = 0.0
            for t in task_ids:
                loss, g = loss_and_grad(model.tasks[t], outputs[t], data.targets[t][batch])
                batch_loss += loss
                head_grads[t] = g
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch offset {start} (tasks {task_ids})")
            total += batch_loss * len(batch)
            grads = backward(current, caches, head_grads, trainable)
            opt.step(work, grads)
        history.append(total / len(idx))
    for arrays in work.values():
        for a in arrays.values():
            a.flags.writeable = False
    return current, history


def score(model: ModelGraph, data: MultiTaskDataset, split: str, task: TaskInfo) -> float:
    idx = data.splits[split]
    if len(idx) == 0:
        raise ValueError(f"empty {split} split")
    out = predict(model, data.X[idx], task.task_id)
    return task_score(out, data.targets[task.task_id][idx], task)


# --------------------------------------------------------------------------
# evaluators


class MiniTrainer:
    """Evaluator backed by :func:`train` and :func:`score`."""

    def __init__(self):
        self.train_calls = 0
        self.score_calls = 0
        self.history_: list[float] = []
        self._lock = threading.Lock()

    def train(self, model, data, cfg, trainable=None, tasks=None):
        with self._lock:
            self.train_calls += 1
        trained, history = train(model, data, cfg, trainable, tasks)
        self.history_ = history
        return trained

    def score(self, model, data, split, task):
        with self._lock:
            self.score_calls += 1
        return score(model, data, split, task)


class ReplayEvaluator:
    """Returns frozen accuracies keyed by ``(task_id, branch_depth)``; training is a no-op."""

    def __init__(self, table: Mapping[tuple[int, int], float]):
        self.table = {(int(t), int(d)): float(v) for (t, d), v in table.items()}
        self.train_calls = 0
        self.score_calls = 0
        self._lock = threading.Lock()

    def train(self, model, data, cfg, trainable=None, tasks=None):
        with self._lock:
            self.train_calls += 1
        return model

    def score(self, model, data, split, task):
        with self._lock:
            self.score_calls += 1
        if task.task_id not in model.branch_points:
            raise KeyError(f"task {task.task_id} has no branch point to look up")
        key = (task.task_id, model.depth_of(model.branch_points[task.task_id]))
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"replay table has no entry for (task, depth) = {key}") from None


def replay_evaluator(table) -> ReplayEvaluator:
    return ReplayEvaluator(table)


# --------------------------------------------------------------------------
# synthetic data


def _quadrant(X, rng):
    n, h, w, _ = X.shape
    q = rng.integers(0, 4, n)
    for k in range(4):
        r, c = divmod(k, 2)
        X[q == k, r * h // 2:(r + 1) * h // 2, c * w // 2:(c + 1) * w // 2, :] += 0.6

    def label(X):
        means = [X[:, r * h // 2:(r + 1) * h // 2, c * w // 2:(c + 1) * w // 2, :].mean(axis=(1, 2, 3))
                 for r in range(2) for c in range(2)]
        return np.argmax(np.stack(means, axis=1), axis=1)
    return label


def _intensity(X, rng):
    X += rng.uniform(0.0, 0.5, len(X))[:, None, None, None]
    return lambda X: X.mean(axis=(1, 2, 3))[:, None]


def _parity_mask(h, w, rows_only):
    i, j = np.indices((h, w))
    return (i % 2 == 0) if rows_only else ((i + j) % 2 == 0)


def _checker(X, rng, rows_only=False):
    _, h, w, _ = X.shape
    mask = _parity_mask(h, w, rows_only)
    on = rng.integers(0, 2, len(X)).astype(bool)
    X[on] += 0.4 * mask[None, :, :, None]

    def label(X):
        diff = X[:, mask, :].mean(axis=(1, 2)) - X[:, ~mask, :].mean(axis=(1, 2))
        return (diff > 0.2).astype(int)
    return label


_GENERATORS = (
    ("quadrant", TaskKind.CLASSIFICATION, 4, _quadrant),
    ("intensity", TaskKind.REGRESSION, 1, _intensity),
    ("checker", TaskKind.CLASSIFICATION, 1, _checker),
    ("rows", TaskKind.CLASSIFICATION, 2, lambda X, rng: _checker(X, rng, rows_only=True)),
)


def synth_dataset(tasks: int = 3, samples: int = 600, h: int = 8, w: int = 8, c: int = 1,
                  seed: int = 0, proportions=DEFAULT_PROPORTIONS) -> MultiTaskDataset:
    """Noise images carrying one planted, independently solvable signal per task.

    Task kinds in order: 4-way brightest quadrant, mean intensity regression,
    checkerboard present (single sigmoid output), row stripes present (2-way).
    Targets are computed from the final images, so each is a deterministic
    function of the input.
    """
    if tasks < 1 or samples < 1 or h < 1 or w < 1 or c < 1:
        raise ValueError("tasks, samples and image sizes must be positive")
    if tasks > len(_GENERATORS):
        raise ValueError(f"at most {len(_GENERATORS)} synthetic tasks are available")
    if h % 4 or w % 4:
        raise ValueError("image height and width must be multiples of 4")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 0.3, size=(samples, h, w, c))
    labelers = []
    infos = {}
    for k in range(tasks):
        name, kind, n_out, gen = _GENERATORS[k]
        labelers.append(gen(X, rng))
        infos[k + 1] = TaskInfo(k + 1, kind, n_out, (h, w, c))
    targets = {tid: np.asarray(lab(X)) for tid, lab in zip(infos, labelers)}
    splits = split_indices(samples, proportions, seed)
    meta = {"samples": samples, "h": h, "w": w, "c": c, "seed": seed,
            "generators": [g[0] for g in _GENERATORS[:tasks]]}
    return MultiTaskDataset(X, targets, infos, splits, meta)


# --------------------------------------------------------------------------
# persistence: meta.json + little-endian float32 tensors

_MAGIC = b"ILT1"


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != 4 * count:
        raise ValueError(f"{path}: payload size does not match header shape {shape}")
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(shape).astype(np.float64)


def save_dataset(data: MultiTaskDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "inputs.bin", data.X)
    for tid, y in data.targets.items():
        write_tensor(d / f"task_{tid}.bin", y)
    meta = {
        "schema_version": 1,
        "tasks": [t.to_dict() for t in data.tasks.values()],
        "splits": {s: [int(i) for i in data.splits[s]] for s in SPLITS},
        "meta": data.meta,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_dataset(directory) -> MultiTaskDataset:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    tasks = {t["task_id"]: TaskInfo.from_dict(t) for t in meta["tasks"]}
    X = read_tensor(d / "inputs.bin")
    targets = {}
    for tid, task in tasks.items():
        y = read_tensor(d / f"task_{tid}.bin")
        targets[tid] = y.astype(int) if task.kind is TaskKind.CLASSIFICATION else y
    splits = {s: np.asarray(meta["splits"][s], dtype=int) for s in SPLITS}
    return MultiTaskDataset(X, targets, tasks, splits, meta.get("meta", {}))

