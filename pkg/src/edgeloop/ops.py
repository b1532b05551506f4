"""Rank-4 tensor layer operations with a record/replay gradient tape.

Tensors are plain numpy arrays: activations are ``[B, C, H, W]`` rank-4
arrays ("Tensor4") or ``[rows, cols]`` rank-2 arrays ("Tensor2"),
single-precision in normal use. Every op is a pure function of its inputs
plus, where needed, an explicit ``Rng`` or ``GradTape``; passing a tape
records the saved activations and a backward closure so ``backward`` can
replay the tape in reverse and produce parameter gradients.

Convolution uses cross-correlation semantics (no kernel flip). The ops run
at whatever dtype the inputs carry, which lets tests drive a
double-precision shadow of the same code for finite-difference checks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .rng import Rng


class ShapeError(ValueError):
    """Tensor dimension mismatch; the message names the offending axis."""


class TapeReuseError(RuntimeError):
    """Raised when backward is invoked twice on the same tape."""


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class ParamKind(enum.Enum):
    CONV = "conv"
    DEPTHWISE_CONV = "depthwise_conv"
    POINTWISE_CONV = "pointwise_conv"
    BATCHNORM = "batchnorm"
    LINEAR = "linear"


@dataclass
class LayerParams:
    """Parameter bundle for one layer.

    Conv weights are ``(C_out, C_in, k, k)``, depthwise ``(C, 1, k, k)``,
    pointwise ``(C_out, C_in, 1, 1)``, linear ``(out, in)``. For batchnorm,
    ``weight`` is the per-channel scale and ``bias`` the shift, with running
    mean/var alongside. Frozen layers receive no parameter gradients.
    """

    kind: ParamKind
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    frozen: bool = False

    def __post_init__(self):
        if self.running_var is not None and np.any(self.running_var < 0):
            raise ValueError("batchnorm running_var entries must be >= 0")


# A backward closure maps the upstream gradient to (target array, grad)
# pairs; targets are either saved input activations or parameter arrays.
_BackFn = Callable[[np.ndarray], list[tuple[np.ndarray, np.ndarray]]]


@dataclass
class GradTape:
    """Ordered record of executed ops and their backward closures."""

    _records: list[tuple[np.ndarray, _BackFn]] = field(default_factory=list)
    _consumed: bool = False

    def record(self, output: np.ndarray, back: _BackFn) -> None:
        self._records.append((output, back))

    def __len__(self) -> int:
        return len(self._records)


class Gradients:
    """Gradient lookup by array identity, as produced by :func:`backward`."""

    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def get(self, array: np.ndarray) -> Optional[np.ndarray]:
        return self._by_id.get(id(array))

    def __contains__(self, array: np.ndarray) -> bool:
        return id(array) in self._by_id


def backward(tape: GradTape, loss_grad: float | np.ndarray) -> Gradients:
    """Replay ``tape`` in reverse from a seed gradient on its last output.

    ``loss_grad`` is typically the scalar 1.0 seeding a recorded loss; an
    array seed matching the last output's shape is accepted for op-level
    tests. Returns gradients for every non-frozen parameter touched in the
    forward pass (frozen parameters get none) plus the graph inputs.
    """
    if tape._consumed:
        raise TapeReuseError("backward invoked twice on one tape")
    tape._consumed = True
    grads: dict[int, np.ndarray] = {}
    if not tape._records:
        return Gradients(grads)

    last_out = tape._records[-1][0]
    seed = np.asarray(loss_grad, dtype=last_out.dtype)
    if seed.shape == ():
        seed = np.full_like(last_out, seed)
    elif seed.shape != last_out.shape:
        raise ShapeError(
            f"seed gradient shape {seed.shape} does not match last output {last_out.shape}"
        )
    grads[id(last_out)] = seed

    for output, back in reversed(tape._records):
        g = grads.pop(id(output), None)
        if g is None:
            continue  # output never reached the loss; implicit zero
        for target, tgrad in back(g):
            key = id(target)
            if key in grads:
                grads[key] = grads[key] + tgrad
            else:
                grads[key] = tgrad
    return Gradients(grads)


# ---------------------------------------------------------------------------
# shape helpers


def require_tensor4(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 [B,C,H,W], got rank {x.ndim}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty axis: shape {x.shape}")
    return x


def require_tensor2(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be rank-2 [rows,cols], got rank {x.ndim}")
    return x


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Padded input (B,C,Hp,Wp) -> window tensor (B,C,k,k,Ho,Wo)."""
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    cols = np.empty((B, C, k, k, Ho, Wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
    return cols

def _col2im(dcols: np.ndarray, xp_shape: tuple, k: int, stride: int) -> np.ndarray:
    """Scatter-add window gradients back onto the padded input shape."""
    B, C, Hp, Wp = xp_shape
    _, _, _, _, Ho, Wo = dcols.shape
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[:, :, i, j]
    return dxp


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


# ---------------------------------------------------------------------------
# convolution family


def conv2d(
    x: np.ndarray,
    params: LayerParams,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[GradTape] = None,
) -> np.ndarray:
    """Standard 2-D convolution (cross-correlation, square kernel)."""
    x = require_tensor4(x)
    if params.kind is not ParamKind.CONV:
        raise ValueError(f"conv2d requires Conv params, got {params.kind.value}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    w = params.weight
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weight must be (C_out,C_in,k,k), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"channel axis mismatch: input C={x.shape[1]} vs kernel C_in={w.shape[1]}"
        )
    return _conv_core(x, w, params.bias, stride, padding, tape, params.frozen)


def _conv_core(x, w, bias, stride, padding, tape, frozen) -> np.ndarray:
    B, C, H, W = x.shape
    C_out, _, k, _ = w.shape
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {k} too large for spatial axes H={H}, W={W} with padding {padding}")

    xp = _pad(x, padding)
    cols = _im2col(xp, k, stride).reshape(B, C * k * k, Ho * Wo)
    w2 = w.reshape(C_out, C * k * k)
    out = np.matmul(w2, cols)  # (B, C_out, Ho*Wo)
    if bias is not None:
        out = out + bias[:, None]
    out = out.reshape(B, C_out, Ho, Wo)

    if tape is not None:

        def back(g: np.ndarray):
            gf = g.reshape(B, C_out, Ho * Wo)
            dcols = np.matmul(w2.T, gf)
            dxp = _col2im(dcols.reshape(B, C, k, k, Ho, Wo), xp.shape, k, stride)
            dx = dxp[:, :, padding : padding + H, padding : padding + W] if padding else dxp
            pairs = [(x, dx)]
            if not frozen:
                dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
                pairs.append((w, dw))
                if bias is not None:
                    pairs.append((bias, gf.sum(axis=(0, 2))))
            return pairs

        tape.record(out, back)
    return out


def depthwise_conv2d(
    x: np.ndarray,
    params: LayerParams,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[GradTape] = None,
) -> np.ndarray:
    """Per-channel spatial convolution: one k x k filter per input channel."""
    x = require_tensor4(x)
    if params.kind is not ParamKind.DEPTHWISE_CONV:
        raise ValueError(f"depthwise_conv2d requires DepthwiseConv params, got {params.kind.value}")
    w = params.weight
    if w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (C,1,k,k), got {w.shape}")
    if w.shape[0] != x.shape[1]:
        raise ShapeError(
            f"channel axis mismatch: input C={x.shape[1]} vs depthwise filters {w.shape[0]}"
        )
    B, C, H, W = x.shape
    k = w.shape[2]
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {k} too large for spatial axes H={H}, W={W} with padding {padding}")

    xp = _pad(x, padding)
    cols = _im2col(xp, k, stride)  # (B,C,k,k,Ho,Wo)
    wk = w[:, 0]  # (C,k,k)
    out = np.einsum("bcijhw,cij->bchw", cols, wk)
    bias = params.bias
    if bias is not None:
        out = out + bias[None, :, None, None]

    if tape is not None:
        frozen = params.frozen

        def back(g: np.ndarray):
            dcols = np.einsum("bchw,cij->bcijhw", g, wk)
            dxp = _col2im(dcols, xp.shape, k, stride)
            dx = dxp[:, :, padding : padding + H, padding : padding + W] if padding else dxp
            pairs = [(x, dx)]
            if not frozen:
                dw = np.einsum("bcijhw,bchw->cij", cols, g).reshape(w.shape)
                pairs.append((w, dw))
                if bias is not None:
                    pairs.append((bias, g.sum(axis=(0, 2, 3))))
            return pairs

        tape.record(out, back)
    return out


def pointwise_conv2d(
    x: np.ndarray, params: LayerParams, tape: Optional[GradTape] = None
) -> np.ndarray:
    """1x1 channel-mixing convolution."""
    x = require_tensor4(x)
    if params.kind is not ParamKind.POINTWISE_CONV:
        raise ValueError(f"pointwise_conv2d requires PointwiseConv params, got {params.kind.value}")
    w = params.weight
    if w.ndim != 4 or w.shape[2] != 1 or w.shape[3] != 1:
        raise ShapeError(f"pointwise kernel must be (C_out,C_in,1,1), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"channel axis mismatch: input C={x.shape[1]} vs pointwise C_in={w.shape[1]}"
        )
    return _conv_core(x, w, params.bias, 1, 0, tape, params.frozen)


def depthwise_separable_conv(
    x: np.ndarray,
    dw: LayerParams,
    pw: LayerParams,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[GradTape] = None,
) -> np.ndarray:
    """Depthwise spatial conv followed by a 1x1 pointwise conv."""
    if dw.kind is not ParamKind.DEPTHWISE_CONV:
        raise ValueError("first stage must be DepthwiseConv params")
    if pw.kind is not ParamKind.POINTWISE_CONV:
        raise ValueError("second stage must be PointwiseConv params")
    if dw.weight.shape[0] != pw.weight.shape[1]:
        raise ShapeError(
            f"channel axis mismatch between stages: depthwise C={dw.weight.shape[0]} "
            f"vs pointwise C_in={pw.weight.shape[1]}"
        )
    mid = depthwise_conv2d(x, dw, stride=stride, padding=padding, tape=tape)
    return pointwise_conv2d(mid, pw, tape=tape)


# ---------------------------------------------------------------------------
# normalization / activation / pooling / regularization


def batchnorm2d(
    x: np.ndarray,
    params: LayerParams,
    mode: Mode,
    momentum: float = 0.1,
    epsilon: float = 1e-5,
    tape: Optional[GradTape] = None,
) -> np.ndarray:
    """Per-channel batch normalization over the (B, H, W) axes.

    Train mode normalizes with batch statistics (population variance) and
    updates the running stats in place as
    ``running <- (1 - momentum) * running + momentum * batch``; Eval mode
    uses the running stats only and mutates nothing.
    """
    x = require_tensor4(x)
    if params.kind is not ParamKind.BATCHNORM:
        raise ValueError(f"batchnorm2d requires BatchNorm params, got {params.kind.value}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    C = x.shape[1]
    gamma, beta = params.weight, params.bias
    for name, vec in (("scale", gamma), ("shift", beta),
                      ("running_mean", params.running_mean), ("running_var", params.running_var)):
        if vec is None or vec.shape != (C,):
            raise ShapeError(f"batchnorm {name} must have shape ({C},) to match the channel axis")

    axes = (0, 2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if mode is Mode.TRAIN:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        params.running_mean[:] = (1.0 - momentum) * params.running_mean + momentum * mu
        params.running_var[:] = (1.0 - momentum) * params.running_var + momentum * var
    else:
        mu = params.running_mean.astype(x.dtype)
        var = params.running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=x.dtype))
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    if tape is not None:
        frozen = params.frozen
        train = mode is Mode.TRAIN

        def back(g: np.ndarray):
            gxh = g * gamma[None, :, None, None]
            if train:
                # full backward through the batch statistics
                mean_g = gxh.mean(axis=axes)
                mean_gx = (gxh * xhat).mean(axis=axes)
                dx = (
                    gxh
                    - mean_g[None, :, None, None]
                    - xhat * mean_gx[None, :, None, None]
                ) * inv_std[None, :, None, None]
            else:
                dx = gxh * inv_std[None, :, None, None]
            pairs = [(x, dx)]
            if not frozen:
                pairs.append((gamma, (g * xhat).sum(axis=axes)))
                pairs.append((beta, g.sum(axis=axes)))
            return pairs

        tape.record(out, back)
    return out


def relu(x: np.ndarray, tape: Optional[GradTape] = None) -> np.ndarray:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    x = np.asarray(x)
    out = np.maximum(x, 0)
    if tape is not None:
        mask = x > 0

        def back(g: np.ndarray):
            return [(x, g * mask)]

        tape.record(out, back)
    return out


def maxpool2d(
    x: np.ndarray, window: int, stride: int, tape: Optional[GradTape] = None
) -> np.ndarray:
    """Per-window maximum; gradient routes to the first argmax in row-major order."""
    x = require_tensor4(x)
    B, C, H, W = x.shape
    if window > H or window > W:
        raise ShapeError(f"pool window {window} exceeds spatial axes H={H}, W={W}")
    if window == stride and (H % stride or W % stride):
        raise ShapeError(
            f"spatial axes H={H}, W={W} must be divisible by stride {stride} for {window}/{stride} pooling"
        )
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1
    sb, sc, sh, sw = x.strides
    view = as_strided(x, (B, C, Ho, Wo, window, window), (sb, sc, sh * stride, sw * stride, sh, sw))
    flat = view.reshape(B, C, Ho, Wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    if tape is not None:

        def back(g: np.ndarray):
            dx = np.zeros_like(x)
            b, c, ho, wo = np.indices(arg.shape, sparse=False)
            rows = ho * stride + arg // window
            cols = wo * stride + arg % window
            np.add.at(dx, (b, c, rows, cols), g)
            return [(x, dx)]

        tape.record(out, back)
    return out


def dropout(
    x: np.ndarray,
    p: float,
    mode: Mode,
    rng: Optional[Rng] = None,
    tape: Optional[GradTape] = None,
) -> np.ndarray:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = np.asarray(x)
    if mode is Mode.EVAL or p == 0.0:
        out = x.copy()
        if tape is not None:
            tape.record(out, lambda g: [(x, g)])
        return out
    if rng is None:
        raise ValueError("dropout in Train mode requires an rng")
    mask = rng.uniform(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out = x * mask * scale
    if tape is not None:

        def back(g: np.ndarray):
            return [(x, g * mask * scale)]

        tape.record(out, back)
    return out


# ---------------------------------------------------------------------------
# dense head


def linear(x: np.ndarray, params: LayerParams, tape: Optional[GradTape] = None) -> np.ndarray:
    """Affine map per batch row: x @ W.T + b, with W shaped (out, in)."""
    x = require_tensor2(x)
    if params.kind is not ParamKind.LINEAR:
        raise ValueError(f"linear requires Linear params, got {params.kind.value}")
    w, bias = params.weight, params.bias
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be rank-2 (out,in), got rank {w.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"feature axis mismatch: input cols {x.shape[1]} vs weight in-dim {w.shape[1]}")
    out = x @ w.T
    if bias is not None:
        out = out + bias

    if tape is not None:
        frozen = params.frozen

        def back(g: np.ndarray):
            pairs = [(x, g @ w)]
            if not frozen:
                pairs.append((w, g.T @ x))
                if bias is not None:
                    pairs.append((bias, g.sum(axis=0)))
            return pairs

        tape.record(out, back)
    return out


def flatten(x: np.ndarray, tape: Optional[GradTape] = None) -> np.ndarray:
    """(B,C,H,W) -> (B, C*H*W), preserving row-major element order."""
    x = require_tensor4(x)
    out = x.reshape(x.shape[0], -1)
    if tape is not None:

        def back(g: np.ndarray):
            return [(x, g.reshape(x.shape))]

        tape.record(out, back)
    return out


def reshape(x: np.ndarray, target: tuple[int, ...], tape: Optional[GradTape] = None) -> np.ndarray:
    """Reshape with 0 meaning "copy the input dim" and -1 inferring one axis."""
    x = np.asarray(x)
    dims = []
    for i, d in enumerate(target):
        if d == 0:
            if i >= x.ndim:
                raise ShapeError(f"reshape target copies axis {i} but input has rank {x.ndim}")
            dims.append(x.shape[i])
        else:
            dims.append(d)
    out = x.reshape(dims)
    if tape is not None:

        def back(g: np.ndarray):
            return [(x, g.reshape(x.shape))]

        tape.record(out, back)
    return out


def add(a: np.ndarray, b: np.ndarray, tape: Optional[GradTape] = None) -> np.ndarray:
    """Elementwise sum of two same-shape tensors (residual join)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"add operands differ in shape: {a.shape} vs {b.shape}")
    out = a + b
    if tape is not None:
        tape.record(out, lambda g: [(a, g), (b, g)])
    return out


def global_avg_pool(x: np.ndarray, tape: Optional[GradTape] = None) -> np.ndarray:
    """Mean over the spatial axes: (B,C,H,W) -> (B,C)."""
    x = require_tensor4(x)
    out = x.mean(axis=(2, 3))
    if tape is not None:
        hw = x.shape[2] * x.shape[3]

        def back(g: np.ndarray):
            dx = np.broadcast_to(g[:, :, None, None] / hw, x.shape).astype(x.dtype)
            return [(x, dx)]

        tape.record(out, back)
    return out


def softmax(logits: np.ndarray, tape: Optional[GradTape] = None) -> np.ndarray:
    """Row softmax with max-subtraction for stability; rows sum to 1."""
    logits = require_tensor2(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    if tape is not None:

        def back(g: np.ndarray):
            dot = (g * out).sum(axis=1, keepdims=True)
            return [(logits, out * (g - dot))]

        tape.record(out, back)
    return out


def cross_entropy_loss(
    logits: np.ndarray, labels: np.ndarray, tape: Optional[GradTape] = None
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch.

    Returns ``(loss, gradient w.r.t. logits)`` where the gradient is
    ``(softmax - one_hot) / B``. When taped, the loss is recorded so a
    scalar seed from :func:`backward` flows into the logits.
    """
    logits = require_tensor2(logits, "logits")
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels must have shape ({B},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= K:
        bad = int(labels[(labels < 0) | (labels >= K)][0])
        raise ValueError(f"label {bad} out of range [0, {K})")

    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    probs = np.exp(logits - lse)
    picked = logits[np.arange(B), labels][:, None]
    loss = float((lse - picked).mean())

    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    grad = grad.astype(logits.dtype)

    if tape is not None:
        out = np.asarray(loss, dtype=logits.dtype)

        def back(g: np.ndarray):
            return [(logits, grad * g)]

        tape.record(out, back)
    return loss, grad
