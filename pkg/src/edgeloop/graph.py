"""Layer-graph model representation and its executor.

A :class:`ModelGraph` mirrors the on-disk exchange layout: an ordered node
list whose inputs name either the graph input (``"input"``), a prior node
output, or an entry in the named parameter store. Running a graph walks the
nodes in order, assembling :class:`~edgeloop.ops.LayerParams` views over the
stored arrays, so batchnorm running-stat updates land back in the store.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .ops import GradTape, LayerParams, Mode, ParamKind, ShapeError
from .rng import Rng

GRAPH_INPUT = "input"

#: Ops the executor can run, i.e. everything the exchange format may name.
EXECUTABLE_OPS = (
    "Conv",
    "DepthwiseConv",
    "PointwiseConv",
    "BatchNorm",
    "ReLU",
    "MaxPool",
    "Dropout",
    "Flatten",
    "Reshape",
    "Linear",
    "Add",
    "GlobalAvgPool",
)

AttrValue = int | float | tuple[int, ...]


@dataclass
class GraphNode:
    op: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: dict[str, AttrValue] = field(default_factory=dict)


@dataclass
class ModelGraph:
    """Ordered nodes plus a named parameter store and string metadata.

    ``trainable`` lists the store entries that count as model parameters
    (weights, biases, batchnorm scale/shift); running statistics live in the
    store but outside ``trainable``. ``frozen`` marks trainable entries that
    must receive no updates.
    """

    nodes: list[GraphNode]
    params: dict[str, np.ndarray]
    trainable: set[str]
    frozen: set[str] = field(default_factory=set)
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def output_name(self) -> str:
        return self.nodes[-1].outputs[0]

    def clone(self) -> "ModelGraph":
        return ModelGraph(
            nodes=copy.deepcopy(self.nodes),
            params={k: v.copy() for k, v in self.params.items()},
            trainable=set(self.trainable),
            frozen=set(self.frozen),
            meta=dict(self.meta),
        )

    def forward(
        self,
        x: np.ndarray,
        mode: Mode = Mode.EVAL,
        rng: Optional[Rng] = None,
        tape: Optional[GradTape] = None,
        want: Optional[str] = None,
    ) -> np.ndarray:
        return run_graph(self, x, mode=mode, rng=rng, tape=tape, want=want)


def _is_frozen(graph: ModelGraph, names: tuple[str, ...]) -> bool:
    return any(n in graph.frozen for n in names if n in graph.params)


def _layer_params(graph: ModelGraph, node: GraphNode, kind: ParamKind) -> LayerParams:
    pnames = node.inputs[1:]
    store = graph.params
    weight = store[pnames[0]]
    if kind is ParamKind.BATCHNORM:
        scale, shift, mean, var = (store[n] for n in pnames)
        return LayerParams(kind, scale, shift, running_mean=mean, running_var=var,
                           frozen=_is_frozen(graph, pnames))
    bias = store[pnames[1]] if len(pnames) > 1 else None
    return LayerParams(kind, weight, bias, frozen=_is_frozen(graph, pnames))


def run_graph(
    graph: ModelGraph,
    x: np.ndarray,
    mode: Mode = Mode.EVAL,
    rng: Optional[Rng] = None,
    tape: Optional[GradTape] = None,
    want: Optional[str] = None,
) -> np.ndarray:
    """Execute the node list on ``x`` and return the graph output.

    ``want`` selects an intermediate tensor by name instead of the final
    output (the full graph still runs).
    """
    env: dict[str, np.ndarray] = {GRAPH_INPUT: np.asarray(x)}

    for idx, node in enumerate(graph.nodes):
        try:
            a = node.attrs
            if node.op == "Conv":
                out = ops.conv2d(env[node.inputs[0]], _layer_params(graph, node, ParamKind.CONV),
                                 stride=int(a.get("stride", 1)), padding=int(a.get("padding", 0)),
                                 tape=tape)
            elif node.op == "DepthwiseConv":
                out = ops.depthwise_conv2d(env[node.inputs[0]],
                                           _layer_params(graph, node, ParamKind.DEPTHWISE_CONV),
                                           stride=int(a.get("stride", 1)),
                                           padding=int(a.get("padding", 0)), tape=tape)
            elif node.op == "PointwiseConv":
                out = ops.pointwise_conv2d(env[node.inputs[0]],
                                           _layer_params(graph, node, ParamKind.POINTWISE_CONV),
                                           tape=tape)
            elif node.op == "BatchNorm":
                out = ops.batchnorm2d(env[node.inputs[0]],
                                      _layer_params(graph, node, ParamKind.BATCHNORM),
                                      mode=mode, momentum=float(a.get("momentum", 0.1)),
                                      epsilon=float(a.get("epsilon", 1e-5)), tape=tape)
            elif node.op == "ReLU":
                out = ops.relu(env[node.inputs[0]], tape=tape)
            elif node.op == "MaxPool":
                out = ops.maxpool2d(env[node.inputs[0]], window=int(a["window"]),
                                    stride=int(a["stride"]), tape=tape)
            elif node.op == "Dropout":
                out = ops.dropout(env[node.inputs[0]], p=float(a.get("p", 0.0)), mode=mode,
                                  rng=rng, tape=tape)
            elif node.op == "Flatten":
                out = ops.flatten(env[node.inputs[0]], tape=tape)
            elif node.op == "Reshape":
                out = ops.reshape(env[node.inputs[0]], tuple(a["target"]), tape=tape)
            elif node.op == "Linear":
                out = ops.linear(env[node.inputs[0]], _layer_params(graph, node, ParamKind.LINEAR),
                                 tape=tape)
            elif node.op == "Add":
                out = ops.add(env[node.inputs[0]], env[node.inputs[1]], tape=tape)
            elif node.op == "GlobalAvgPool":
                out = ops.global_avg_pool(env[node.inputs[0]], tape=tape)
            else:
                raise ValueError(f"unknown op '{node.op}'")
        except KeyError as exc:
            raise ShapeError(f"node {idx} ({node.op}) references unknown tensor {exc}") from exc
        env[node.outputs[0]] = out

    return env[want] if want is not None else env[graph.output_name]


def infer_shapes(graph: ModelGraph, input_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    """Closed-form output shape per tensor name, without executing anything.

    The per-op formulas mirror the executor's post-conditions, so comparing
    this against an actual forward pass is the shape-chain validation.
    """
    shapes: dict[str, tuple[int, ...]] = {GRAPH_INPUT: tuple(input_shape)}
    store = graph.params

    for idx, node in enumerate(graph.nodes):
        s = shapes.get(node.inputs[0])
        if s is None:
            raise ShapeError(f"node {idx} ({node.op}) input '{node.inputs[0]}' has no known shape")
        a = node.attrs
        if node.op in ("Conv", "DepthwiseConv", "PointwiseConv"):
            w = store[node.inputs[1]]
            k = w.shape[2]
            stride = int(a.get("stride", 1))
            padding = int(a.get("padding", 0))
            c_out = s[1] if node.op == "DepthwiseConv" else w.shape[0]
            c_in = s[1] if node.op == "DepthwiseConv" else w.shape[1]
            if c_in != s[1]:
                raise ShapeError(
                    f"node {idx} ({node.op}) channel axis mismatch: input C={s[1]} vs kernel C_in={c_in}"
                )
            out = (s[0], c_out,
                   ops.conv_output_size(s[2], k, stride, padding),
                   ops.conv_output_size(s[3], k, stride, padding))
        elif node.op in ("BatchNorm", "ReLU", "Dropout"):
            out = s
        elif node.op == "MaxPool":
            w_, st = int(a["window"]), int(a["stride"])
            out = (s[0], s[1], (s[2] - w_) // st + 1, (s[3] - w_) // st + 1)
        elif node.op == "Flatten":
            out = (s[0], int(np.prod(s[1:])))
        elif node.op == "Reshape":
            dims = [s[i] if d == 0 else d for i, d in enumerate(a["target"])]
            total = int(np.prod(s))
            if -1 in dims:
                rest = int(np.prod([d for d in dims if d != -1]))
                dims[dims.index(-1)] = total // rest
            out = tuple(dims)
        elif node.op == "Linear":
            w = store[node.inputs[1]]
            if s[1] != w.shape[1]:
                raise ShapeError(
                    f"node {idx} (Linear) feature axis mismatch: input {s[1]} vs weight in-dim {w.shape[1]}"
                )
            out = (s[0], w.shape[0])
        elif node.op == "Add":
            other = shapes[node.inputs[1]]
            if other != s:
                raise ShapeError(f"node {idx} (Add) operand shapes differ: {s} vs {other}")
            out = s
        elif node.op == "GlobalAvgPool":
            out = (s[0], s[1])
        else:
            raise ShapeError(f"node {idx}: unknown op '{node.op}'")
        shapes[node.outputs[0]] = tuple(int(v) for v in out)

    return shapes
