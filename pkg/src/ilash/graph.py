"""Layer-shared multi-task model graphs.

A :class:`ModelGraph` is a tree of layers rooted at the first backbone layer.
Task 1 owns the backbone (``trunk_order``); every later task attaches a branch
at some existing layer, replicating the layers that follow it and ending in
its own output head.  Shared layers are the *same* node (same id, same
parameters) for every task that routes through them.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


class LayerKind(str, Enum):
    CONV2D = "Conv2D"
    DEPTHWISE_CONV2D = "DepthwiseConv2D"
    DENSE = "Dense"
    POOL = "Pool"
    FLATTEN = "Flatten"
    ACTIVATION = "Activation"
    OUTPUT = "Output"


class Padding(str, Enum):
    VALID = "valid"
    SAME = "same"


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"
    LINEAR = "linear"


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


CONV_KINDS = frozenset({LayerKind.CONV2D, LayerKind.DEPTHWISE_CONV2D})
PARAM_KINDS = frozenset({LayerKind.CONV2D, LayerKind.DEPTHWISE_CONV2D,
                         LayerKind.DENSE, LayerKind.OUTPUT})


@dataclass(frozen=True)
class LayerSpec:
    """Hyperparameters of one layer.

    ``units_or_channels`` is the unit count for Dense/Output, the filter count
    for Conv2D and the depth multiplier for DepthwiseConv2D.  Pool is a fixed
    2x2 max-pool with stride 2.
    """

    kind: LayerKind
    units_or_channels: int | None = None
    kernel_size: int | None = None
    stride: int | None = None
    padding: Padding | None = None
    activation: Activation = Activation.LINEAR
    id: int = -1

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.padding is not None:
            object.__setattr__(self, "padding", Padding(self.padding))
        conv_fields = (self.kernel_size, self.stride, self.padding)
        if self.kind in CONV_KINDS:
            if any(v is None for v in conv_fields):
                raise ValueError(f"{self.kind.value} needs kernel_size, stride and padding")
            if self.kernel_size < 1 or self.stride < 1:
                raise ValueError("kernel_size and stride must be positive")
        elif any(v is not None for v in conv_fields):
            raise ValueError(f"{self.kind.value} takes no kernel_size/stride/padding")
        if self.kind in PARAM_KINDS:
            if self.units_or_channels is None or self.units_or_channels < 1:
                raise ValueError(f"{self.kind.value} needs a positive units_or_channels")

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "units_or_channels": self.units_or_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": None if self.padding is None else self.padding.value,
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(
            kind=d["kind"],
            units_or_channels=d.get("units_or_channels"),
            kernel_size=d.get("kernel_size"),
            stride=d.get("stride"),
            padding=d.get("padding"),
            activation=d.get("activation", "linear"),
            id=d.get("id", -1),
        )


def conv(filters, kernel_size=3, stride=1, padding="same", activation="relu"):
    return LayerSpec(LayerKind.CONV2D, filters, kernel_size, stride, padding, activation)


def depthwise(kernel_size=3, stride=1, padding="same", multiplier=1, activation="relu"):
    return LayerSpec(LayerKind.DEPTHWISE_CONV2D, multiplier, kernel_size, stride, padding,
                     activation)


def dense(units, activation="relu"):
    return LayerSpec(LayerKind.DENSE, units, activation=activation)


def pool():
    return LayerSpec(LayerKind.POOL)


def flatten():
    return LayerSpec(LayerKind.FLATTEN)


def activation(name):
    return LayerSpec(LayerKind.ACTIVATION, activation=name)


@dataclass(frozen=True)
class TaskInfo:
    task_id: int
    kind: TaskKind
    num_outputs: int
    input_shape: tuple[int, int, int]
    loss: str | None = None
    metric: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.num_outputs < 1:
            raise ValueError("num_outputs must be positive")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (h, w, c) with positive sizes, got {self.input_shape}")
        expected_loss = "cross_entropy" if self.kind is TaskKind.CLASSIFICATION else "mse"
        expected_metric = "accuracy" if self.kind is TaskKind.CLASSIFICATION else "neg_mae"
        if self.loss is None:
            object.__setattr__(self, "loss", expected_loss)
        if self.metric is None:
            object.__setattr__(self, "metric", expected_metric)
        if self.loss != expected_loss:
            raise ValueError(f"{self.kind.value} task requires loss={expected_loss!r}")
        if self.metric != expected_metric:
            raise ValueError(f"{self.kind.value} task requires metric={expected_metric!r}")

    @property
    def head_activation(self) -> Activation:
        if self.kind is TaskKind.REGRESSION:
            return Activation.LINEAR
        return Activation.SOFTMAX if self.num_outputs >= 2 else Activation.SIGMOID

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "kind": self.kind.value,
                "num_outputs": self.num_outputs, "input_shape": list(self.input_shape),
                "loss": self.loss, "metric": self.metric}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskInfo":
        return cls(d["task_id"], d["kind"], d["num_outputs"], tuple(d["input_shape"]),
                   d.get("loss"), d.get("metric"))


# --------------------------------------------------------------------------
# shape inference and parameter initialisation


def _conv_out(size, k, s, padding):
    if padding is Padding.SAME:
        return math.ceil(size / s)
    return (size - k) // s + 1


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of ``spec`` applied to ``in_shape``."""
    kind = spec.kind
    if kind in CONV_KINDS:
        if len(in_shape) != 3:
            raise ValueError(f"{kind.value} expects an (h, w, c) input, got {in_shape}")
        h, w, c = in_shape
        oh = _conv_out(h, spec.kernel_size, spec.stride, spec.padding)
        ow = _conv_out(w, spec.kernel_size, spec.stride, spec.padding)
        if oh < 1 or ow < 1:
            raise ValueError(f"{kind.value} kernel {spec.kernel_size} too large for {in_shape}")
        out_c = spec.units_or_channels if kind is LayerKind.CONV2D else c * spec.units_or_channels
        return (oh, ow, out_c)
    if kind is LayerKind.POOL:
        if len(in_shape) != 3 or in_shape[0] < 2 or in_shape[1] < 2:
            raise ValueError(f"Pool expects an (h, w, c) input of at least 2x2, got {in_shape}")
        return (in_shape[0] // 2, in_shape[1] // 2, in_shape[2])
    if kind is LayerKind.FLATTEN:
        return (int(np.prod(in_shape)),)
    if kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        if len(in_shape) != 1:
            raise ValueError(f"{kind.value} expects a flat input, got {in_shape}; add a Flatten layer")
        return (spec.units_or_channels,)
    return tuple(in_shape)


def param_shapes(spec: LayerSpec, in_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    kind = spec.kind
    if kind is LayerKind.CONV2D:
        k = spec.kernel_size
        return {"W": (k, k, in_shape[2], spec.units_or_channels), "b": (spec.units_or_channels,)}
    if kind is LayerKind.DEPTHWISE_CONV2D:
        k, m = spec.kernel_size, spec.units_or_channels
        return {"W": (k, k, in_shape[2], m), "b": (in_shape[2] * m,)}
    if kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        return {"W": (in_shape[0], spec.units_or_channels), "b": (spec.units_or_channels,)}
    return {}


def init_params(spec: LayerSpec, in_shape, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform fan-in scaled weights, zero biases."""
    shapes = param_shapes(spec, in_shape)
    if not shapes:
        return {}
    w_shape = shapes["W"]
    if spec.kind is LayerKind.DEPTHWISE_CONV2D:
        fan_in = w_shape[0] * w_shape[1]
    else:
        fan_in = int(np.prod(w_shape[:-1]))
    limit = math.sqrt(6.0 / fan_in)
    params = {"W": rng.uniform(-limit, limit, size=w_shape), "b": np.zeros(shapes["b"])}
    for arr in params.values():
        arr.flags.writeable = False
    return params


def _flops(spec: LayerSpec, in_shape, out_shape) -> int:
    if spec.kind is LayerKind.CONV2D:
        k = spec.kernel_size
        return int(np.prod(out_shape)) * k * k * in_shape[2]
    if spec.kind is LayerKind.DEPTHWISE_CONV2D:
        k = spec.kernel_size
        return int(np.prod(out_shape)) * k * k
    if spec.kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        return in_shape[0] * out_shape[0]
    return 0


# --------------------------------------------------------------------------
# the graph


@dataclass(frozen=True)
class ModelGraph:
    """Immutable layer-shared multi-task network.

    ``params`` maps layer id to its arrays; arrays are read-only so that
    graphs derived by :func:`branch` can share trunk parameters safely.
    """

    layers: Mapping[int, LayerSpec]
    edges: Mapping[int, tuple[int, ...]]
    trunk_order: tuple[int, ...]
    heads: Mapping[int, int]
    branch_points: Mapping[int, int]
    tasks: Mapping[int, TaskInfo]
    input_shape: tuple[int, int, int]
    params: Mapping[int, Mapping[str, np.ndarray]] = field(default_factory=dict, repr=False)
    branch_layers: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    seed: int = 0

    # ---- structure queries ------------------------------------------------

    @property
    def root(self) -> int:
        return self.trunk_order[0]

    @property
    def parents(self) -> dict[int, int]:
        return {c: p for p, children in self.edges.items() for c in children}

    def order(self) -> list[int]:
        """Depth enumeration: trunk first, then each branch in attachment order."""
        out = list(self.trunk_order)
        for task_id in self.branch_points:
            out.extend(self.branch_layers[task_id])
        return out

    def depth_of(self, layer_id: int) -> int:
        try:
            return self.order().index(layer_id)
        except ValueError:
            raise KeyError(f"unknown layer id {layer_id}") from None

    def layer_at(self, depth: int) -> LayerSpec:
        return self.layers[self.order()[depth]]

    def path(self, task_id: int) -> list[int]:
        """Layer ids from the root to the head of ``task_id``."""
        if task_id not in self.heads:
            raise KeyError(f"unknown task {task_id}")
        parents = self.parents
        node = self.heads[task_id]
        out = [node]
        while node in parents:
            node = parents[node]
            out.append(node)
        return out[::-1]

    def shareable(self) -> list[int]:
        return [i for i in self.order() if self.layers[i].kind is not LayerKind.OUTPUT]

    def shapes(self) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
        """Map layer id to (input shape, output shape), per sample."""
        out = {}
        parents = self.parents
        for lid in self.order():
            in_shape = self.input_shape if lid == self.root else out[parents[lid]][1]
            out[lid] = (tuple(in_shape), output_shape(self.layers[lid], in_shape))
        return out

    def owner_path(self, layer_id: int) -> list[int]:
        """Path of the earliest-attached task that routes through ``layer_id``."""
        for task_id in self.heads:
            p = self.path(task_id)
            if layer_id in p:
                return p
        raise KeyError(f"layer {layer_id} is on no task path")

    def structure(self) -> dict:
        """JSON-ready description without parameters."""
        return {
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "layers": [self.layers[i].to_dict() for i in self.order()],
            "edges": [[p, c] for p in self.order() for c in self.edges.get(p, ())],
            "trunk_order": list(self.trunk_order),
            "heads": {str(t): h for t, h in self.heads.items()},
            "branch_points": {str(t): b for t, b in self.branch_points.items()},
            "branch_layers": {str(t): list(v) for t, v in self.branch_layers.items()},
            "tasks": [self.tasks[t].to_dict() for t in self.heads],
            "task_order": list(self.heads),
        }

    def replace_params(self, params: Mapping[int, Mapping[str, np.ndarray]]) -> "ModelGraph":
        return dataclasses.replace(self, params=dict(params))


def _new_id(model_layers: Mapping[int, LayerSpec]) -> int:
    return max(model_layers) + 1 if model_layers else 0


def _check_tasks_compatible(input_shape, task: TaskInfo):
    if tuple(task.input_shape) != tuple(input_shape):
        raise ValueError(
            f"task {task.task_id} input shape {task.input_shape} differs from model input {input_shape}")


def build_base(template: Sequence[LayerSpec], task: TaskInfo, seed: int = 0) -> ModelGraph:
    """Linear chain of ``template`` plus an output head for ``task``.

    Layer ids are reassigned in order starting at 0.
    """
    if not template:
        raise ValueError("template is empty")
    for spec in template:
        if LayerKind(spec.kind) is LayerKind.OUTPUT:
            raise ValueError("template must not contain Output layers")
    specs = [dataclasses.replace(s, id=i) for i, s in enumerate(template)]
    head = LayerSpec(LayerKind.OUTPUT, task.num_outputs, activation=task.head_activation,
                     id=len(specs))
    specs.append(head)
    layers = {s.id: s for s in specs}
    edges = {s.id: (s.id + 1,) for s in specs[:-1]}
    model = ModelGraph(
        layers=layers, edges=edges, trunk_order=tuple(layers), heads={task.task_id: head.id},
        branch_points={}, tasks={task.task_id: task}, input_shape=tuple(task.input_shape),
        seed=seed,
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed, task.task_id]))
    shapes = model.shapes()
    params = {lid: init_params(layers[lid], shapes[lid][0], rng) for lid in model.order()}
    return model.replace_params({k: v for k, v in params.items() if v})


def branch(model: ModelGraph, at_layer: int, task: TaskInfo, seed: int | None = None) -> ModelGraph:
    """Attach ``task`` to ``model`` after layer ``at_layer``.

    Layers up to ``at_layer`` are reused as-is. The layers following it on the
    owning task's path, except that task's head, are replicated with fresh
    parameters, and a new head terminates the branch.
    """
    if at_layer not in model.layers:
        raise KeyError(f"unknown layer id {at_layer}")
    if model.layers[at_layer].kind is LayerKind.OUTPUT:
        raise ValueError("cannot branch from an output head")
    if task.task_id in model.heads:
        raise ValueError(f"task {task.task_id} is already registered")
    _check_tasks_compatible(model.input_shape, task)

    owner = model.owner_path(at_layer)
    suffix = owner[owner.index(at_layer) + 1:-1]
    layers = dict(model.layers)
    edges = {k: tuple(v) for k, v in model.edges.items()}
    next_id = _new_id(layers)
    new_ids = []
    parent = at_layer
    for src in suffix:
        spec = dataclasses.replace(model.layers[src], id=next_id)
        layers[next_id] = spec
        edges[parent] = edges.get(parent, ()) + (next_id,)
        new_ids.append(next_id)
        parent = next_id
        next_id += 1
    head = LayerSpec(LayerKind.OUTPUT, task.num_outputs, activation=task.head_activation,
                     id=next_id)
    layers[next_id] = head
    edges[parent] = edges.get(parent, ()) + (next_id,)
    new_ids.append(next_id)

    out = ModelGraph(
        layers=layers, edges=edges, trunk_order=model.trunk_order,
        heads={**model.heads, task.task_id: head.id},
        branch_points={**model.branch_points, task.task_id: at_layer},
        tasks={**model.tasks, task.task_id: task},
        input_shape=model.input_shape, params=model.params,
        branch_layers={**model.branch_layers, task.task_id: tuple(new_ids)},
        seed=model.seed,
    )
    if seed is None:
        seed_seq = np.random.SeedSequence([model.seed, task.task_id, at_layer])
    else:
        seed_seq = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed_seq)
    shapes = out.shapes()
    params = dict(model.params)
    for lid in new_ids:
        p = init_params(layers[lid], shapes[lid][0], rng)
        if p:
            params[lid] = p
    return out.replace_params(params)


def default_bounds(model: ModelGraph) -> tuple[int, int]:
    """Default branching window: skip the input stem and the head."""
    return 2, len(model.trunk_order) - 2


def candidate_layers(model: ModelGraph, ll: int = 0, ul: float = math.inf) -> list[int]:
    """Shareable layer ids whose depth lies in ``[ll, ul]``, shallowest first."""
    if ll < 0:
        raise ValueError("ll must be non-negative")
    if ll > ul:
        warnings.warn(f"empty branching window: ll={ll} > ul={ul}", RuntimeWarning, stacklevel=2)
        return []
    return [lid for depth, lid in enumerate(model.order())
            if ll <= depth <= ul and model.layers[lid].kind is not LayerKind.OUTPUT]


def shareable_rank(model: ModelGraph, layer_id: int) -> int:
    """Position of ``layer_id`` among the shareable layers of the depth enumeration."""
    return model.shareable().index(layer_id)


def build_no_sharing(templates, tasks: Sequence[TaskInfo], seed: int = 0) -> list[ModelGraph]:
    """One independent chain per task.  ``templates`` may be a single template."""
    if templates and isinstance(templates[0], LayerSpec):
        templates = [templates] * len(tasks)
    if len(templates) != len(tasks):
        raise ValueError("need one template per task")
    return [build_base(tpl, task, seed) for tpl, task in zip(templates, tasks)]


def build_hard_sharing(template: Sequence[LayerSpec], tasks: Sequence[TaskInfo],
                       seed: int = 0) -> ModelGraph:
    """Every task after the first branches at the deepest shareable layer."""
    model = build_base(template, tasks[0], seed)
    deepest = model.trunk_order[-2]
    for task in tasks[1:]:
        model = branch(model, deepest, task)
    return model


def stats(model: ModelGraph) -> dict:
    shapes = model.shapes()
    param_count = 0
    flops = 0
    for lid in model.order():
        spec = model.layers[lid]
        in_shape, out_shape = shapes[lid]
        param_count += sum(int(np.prod(s)) for s in param_shapes(spec, in_shape).values())
        flops += _flops(spec, in_shape, out_shape)
    paths = {t: set(model.path(t)) for t in model.heads}
    shared = {}
    for t, p in paths.items():
        others = set().union(*(q for u, q in paths.items() if u != t)) if len(paths) > 1 else set()
        shared[t] = len(p & others)
    return {
        "param_count": param_count,
        "layer_count": len(model.layers),
        "shared_layer_count": shared,
        "flops_estimate": flops,
    }


# --------------------------------------------------------------------------
# serialisation


def to_json_dict(model: ModelGraph, include_params: bool = True) -> dict:
    d = model.structure()
    if include_params:
        d["params"] = {
            str(lid): {name: arr.tolist() for name, arr in model.params[lid].items()}
            for lid in model.order() if lid in model.params
        }
    return d


def from_json_dict(d: Mapping) -> ModelGraph:
    layers = {}
    order = []
    for item in d["layers"]:
        spec = LayerSpec.from_dict(item)
        layers[spec.id] = spec
        order.append(spec.id)
    edges: dict[int, tuple[int, ...]] = {}
    for p, c in d["edges"]:
        edges[p] = edges.get(p, ()) + (c,)
    tasks = {t.task_id: t for t in map(TaskInfo.from_dict, d["tasks"])}
    task_order = [int(t) for t in d.get("task_order", tasks)]
    heads = {int(t): h for t, h in d["heads"].items()}
    points = {int(t): b for t, b in d["branch_points"].items()}
    blayers = {int(t): tuple(v) for t, v in d.get("branch_layers", {}).items()}
    model = ModelGraph(
        layers=layers, edges=edges, trunk_order=tuple(d["trunk_order"]),
        heads={t: heads[t] for t in task_order},
        branch_points={t: points[t] for t in task_order if t in points},
        tasks={t: tasks[t] for t in task_order},
        input_shape=tuple(d["input_shape"]),
        branch_layers={t: blayers[t] for t in task_order if t in blayers},
        seed=d.get("seed", 0),
    )
    params = {}
    shapes = model.shapes()
    for lid_str, arrays in d.get("params", {}).items():
        lid = int(lid_str)
        expected = param_shapes(layers[lid], shapes[lid][0])
        entry = {}
        for name, values in arrays.items():
            arr = np.asarray(values, dtype=np.float64).reshape(expected[name])
            arr.flags.writeable = False
            entry[name] = arr
        params[lid] = entry
    _validate(model)
    return model.replace_params(params)


def _validate(model: ModelGraph):
    seen = set()
    for lid in model.order():
        if lid in seen:
            raise ValueError(f"layer {lid} enumerated twice")
        seen.add(lid)
    if seen != set(model.layers):
        raise ValueError("depth enumeration does not cover every layer")
    for t, h in model.heads.items():
        if model.layers[h].kind is not LayerKind.OUTPUT:
            raise ValueError(f"head of task {t} is not an Output layer")
        if model.edges.get(h):
            raise ValueError("Output layers cannot have successors")
        model.path(t)


def dumps(model: ModelGraph, include_params: bool = True) -> str:
    return json.dumps(to_json_dict(model, include_params), indent=1, sort_keys=True)


def loads(text: str) -> ModelGraph:
    return from_json_dict(json.loads(text))


def template_from_json(items: Iterable[Mapping]) -> list[LayerSpec]:
    return [LayerSpec.from_dict(item) for item in items]


def default_template() -> list[LayerSpec]:
    """Eleven shareable layers for inputs of at least 8x8.

    Every layer in the default branching window has a distinct neighbourhood
    encoding, so a surrogate can tell the candidates apart.
    """
    return [
        conv(8, 3, 1, "same"),
        conv(8, 3, 1, "valid"),
        depthwise(3, 1, "same"),
        conv(8, 1, 1, "same"),
        conv(12, 3, 1, "same"),
        pool(),
        conv(12, 2, 1, "valid"),
        depthwise(2, 1, "same"),
        conv(16, 1, 1, "valid"),
        flatten(),
        dense(32),
    ]
