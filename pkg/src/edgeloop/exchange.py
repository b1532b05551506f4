"""The ``.nnex`` portable serialized-model format.

Byte layout (all integers little-endian):

* magic ``NNEX`` (4 bytes), then format version as u32 (currently 1);
* metadata block: u32 byte length, then UTF-8 ``key=value`` lines (sorted
  by key) carrying family, class count, the full preprocess spec and the
  creation seed, so the operation side can never drift from the trainer;
* node table: u32 count, then per node the op name, sorted ``key=value``
  attributes, input tensor names and output tensor names;
* initializer table: u32 count, then per tensor (sorted by name) the name,
  a dtype code (1 = float32), the shape, a u64 payload byte length and the
  raw little-endian single-precision payload.

Strings are u32-length-prefixed UTF-8. Encoding is canonical: equal graphs
produce equal bytes. Every node input must be a prior node output, the
graph input ``input``, or a named initializer.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .graph import EXECUTABLE_OPS, GRAPH_INPUT, AttrValue, GraphNode, ModelGraph
from .preprocess import PreprocessSpec

MAGIC = b"NNEX"
VERSION = 1
_DTYPE_F32 = 1


class ExchangeError(ValueError):
    """Base class for exchange-file failures."""


class BadMagicError(ExchangeError):
    pass


class VersionError(ExchangeError):
    pass


class TruncatedFileError(ExchangeError):
    pass


class DanglingTensorError(ExchangeError):
    pass


class UnsupportedOpError(ExchangeError):
    def __init__(self, op: str, node_index: int, detail: str = ""):
        self.op = op
        self.node_index = node_index
        extra = f" ({detail})" if detail else ""
        super().__init__(f"unsupported op '{op}' at node {node_index}{extra}")


# ---------------------------------------------------------------------------
# operator support table


@dataclass(frozen=True)
class Violation:
    op: str
    node_index: int
    rewritable: bool
    reason: str


class OpSupportTable:
    """Supported op names with optional numeric attribute ranges."""

    def __init__(self, ops: dict[str, dict[str, tuple[float, float]]]):
        if not ops:
            raise ValueError("support table must not be empty")
        self.ops = ops

    def __contains__(self, op: str) -> bool:
        return op in self.ops

    def check_attrs(self, op: str, attrs: dict[str, AttrValue]) -> str | None:
        """Return a violation reason, or None when attributes are in range."""
        for key, (lo, hi) in self.ops.get(op, {}).items():
            value = attrs.get(key)
            if value is None or isinstance(value, tuple):
                continue
            if not lo <= float(value) <= hi:
                return f"attribute {key}={value} outside {lo}..{hi}"
        return None


def default_support_table() -> OpSupportTable:
    """The deployable operator set. Deliberately excludes Reshape: the
    runtime only supports Flatten for dimension collapsing."""
    return OpSupportTable({op: {} for op in EXECUTABLE_OPS if op != "Reshape"})


def permissive_support_table() -> OpSupportTable:
    """Every executable op, Reshape included (development-side checks)."""
    return OpSupportTable({op: {} for op in EXECUTABLE_OPS})


def load_support_table(text: str) -> OpSupportTable:
    """Parse the ``support_table.txt`` grammar: one op per line, with
    optional ``key=min..max`` attribute constraints after the name."""
    ops: dict[str, dict[str, tuple[float, float]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        constraints: dict[str, tuple[float, float]] = {}
        for tok in parts[1:]:
            try:
                key, rng = tok.split("=", 1)
                lo, hi = rng.split("..", 1)
                constraints[key] = (float(lo), float(hi))
            except ValueError as exc:
                raise ValueError(f"support table line {lineno}: bad constraint {tok!r}") from exc
        ops[parts[0]] = constraints
    return OpSupportTable(ops)


# ---------------------------------------------------------------------------
# encoding


def _attr_to_str(value: AttrValue) -> str:
    if isinstance(value, tuple):
        return ",".join(str(int(v)) for v in value)
    if isinstance(value, bool):
        raise TypeError("boolean attributes are not part of the format")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _attr_from_str(text: str) -> AttrValue:
    if "," in text:
        return tuple(int(v) for v in text.split(","))
    try:
        return int(text)
    except ValueError:
        return float(text)


def _pack_str(out: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def export_model(g: ModelGraph, preprocess: PreprocessSpec | None = None) -> bytes:
    """Serialize a graph to canonical ``.nnex`` bytes.

    ``preprocess`` overrides the spec embedded in the graph metadata;
    without it the metadata must already carry one (builders attach a
    default and the trainer replaces it with the fitted stats).
    """
    meta = dict(g.meta)
    if preprocess is not None:
        from .models import attach_preprocess

        probe = g.clone()
        attach_preprocess(probe, preprocess)
        meta = probe.meta
    if "preprocess.size" not in meta:
        raise ExchangeError("graph metadata lacks a preprocess spec and none was given")

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))

    lines = []
    for key in sorted(meta):
        value = meta[key]
        if "\n" in key or "\n" in value or "=" in key:
            raise ExchangeError(f"metadata key/value not encodable: {key!r}")
        lines.append(f"{key}={value}")
    blob = ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)

    out.write(struct.pack("<I", len(g.nodes)))
    for node in g.nodes:
        _pack_str(out, node.op)
        out.write(struct.pack("<I", len(node.attrs)))
        for key in sorted(node.attrs):
            _pack_str(out, key)
            _pack_str(out, _attr_to_str(node.attrs[key]))
        out.write(struct.pack("<I", len(node.inputs)))
        for name in node.inputs:
            _pack_str(out, name)
        out.write(struct.pack("<I", len(node.outputs)))
        for name in node.outputs:
            _pack_str(out, name)

    out.write(struct.pack("<I", len(g.params)))
    for name in sorted(g.params):
        arr = g.params[name]
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        _pack_str(out, name)
        out.write(struct.pack("<B", _DTYPE_F32))
        out.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            out.write(struct.pack("<I", dim))
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)

    return out.getvalue()


# ---------------------------------------------------------------------------
# decoding


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _parse(data: bytes) -> ModelGraph:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise VersionError(f"unknown format version {version}, expected {VERSION}")

    meta: dict[str, str] = {}
    blob = r.take(r.u32()).decode("utf-8")
    for line in blob.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key] = value

    nodes: list[GraphNode] = []
    for _ in range(r.u32()):
        op = r.string()
        attrs = {r.string(): _attr_from_str(r.string()) for _ in range(r.u32())}
        inputs = tuple(r.string() for _ in range(r.u32()))
        outputs = tuple(r.string() for _ in range(r.u32()))
        nodes.append(GraphNode(op, inputs, outputs, attrs))

    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.string()
        dtype = r.u8()
        if dtype != _DTYPE_F32:
            raise ExchangeError(f"initializer '{name}' has unknown dtype code {dtype}")
        shape = tuple(r.u32() for _ in range(r.u32()))
        declared = r.u64()
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if declared != expected:
            raise ExchangeError(
                f"initializer '{name}' declares {declared} payload bytes, shape needs {expected}"
            )
        payload = r.take(declared)
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()

    if r.pos != len(data):
        raise ExchangeError(f"{len(data) - r.pos} trailing bytes after initializer table")

    seen = {GRAPH_INPUT}
    for idx, node in enumerate(nodes):
        for name in node.inputs:
            if name not in seen and name not in params:
                raise DanglingTensorError(
                    f"node {idx} ({node.op}) references unknown tensor '{name}'"
                )
        seen.update(node.outputs)

    trainable = {
        name for name in params
        if not name.endswith((".running_mean", ".running_var"))
    }
    return ModelGraph(nodes=nodes, params=params, trainable=trainable, meta=meta)


def _is_flattening_reshape(node: GraphNode) -> bool:
    return node.op == "Reshape" and node.attrs.get("target") == (0, -1)


def validate_ops(data: bytes, support: OpSupportTable) -> list[Violation]:
    """Check every node against the support table; empty list = deployable."""
    g = _parse(data)
    violations: list[Violation] = []
    for idx, node in enumerate(g.nodes):
        if node.op not in support:
            violations.append(Violation(
                op=node.op,
                node_index=idx,
                rewritable=_is_flattening_reshape(node),
                reason=f"op '{node.op}' not in support table",
            ))
            continue
        reason = support.check_attrs(node.op, node.attrs)
        if reason is not None:
            violations.append(Violation(node.op, idx, rewritable=False, reason=reason))
    return violations


def import_model(data: bytes, support: OpSupportTable | None = None) -> ModelGraph:
    """Parse, shape-check and support-check a file into a runnable graph.

    Unsupported ops abort the import before anything could execute.
    """
    support = support or default_support_table()
    g = _parse(data)
    for idx, node in enumerate(g.nodes):
        if node.op not in support:
            raise UnsupportedOpError(node.op, idx)
        reason = support.check_attrs(node.op, node.attrs)
        if reason is not None:
            raise UnsupportedOpError(node.op, idx, reason)

    from .graph import infer_shapes

    size = int(g.meta.get("image_size", g.meta.get("preprocess.size", "32")))
    infer_shapes(g, (1, 3, size, size))
    return g


def rewrite_reshape_to_flatten(data: bytes) -> bytes:
    """Replace every Reshape whose target is exactly (batch, -1) by Flatten.

    Other nodes, including non-flattening Reshapes, are left untouched; the
    transform never changes arithmetic, only the node table.
    """
    g = _parse(data)
    for node in g.nodes:
        if _is_flattening_reshape(node):
            node.op = "Flatten"
            node.attrs = {}
    return export_model(g)
