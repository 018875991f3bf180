"""A small reverse-mode differentiation engine over numpy arrays.

Every primitive returns a new :class:`Tensor` that remembers its operands and
a closure mapping the output adjoint to operand adjoints. :func:`backward`
orders the graph topologically and runs those closures once per node.
Tensors are never mutated; gradients come back as a list rather than being
stashed on the tensors, so several graphs can be differentiated concurrently.

Only the primitives the convolutional classifier needs are provided. There is
no broadcasting apart from the bias add inside :func:`conv2d` and :func:`dense`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "NonFiniteError",
    "backward",
    "conv2d",
    "relu",
    "avgpool2d",
    "dense",
    "softmax_cross_entropy",
    "add",
    "scale",
    "clamp",
    "reshape",
    "flatten",
    "weighted_sum",
    "l2_norms",
]


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "parents", "grad_fn", "op")

    def __init__(self, data, parents: tuple[Tensor, ...] = (), grad_fn: BackwardFn | None = None, op: str = "leaf"):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by {op}")
        self.data = data
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return add(self, scale(other, -1.0))

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __mul__(self, factor: float) -> Tensor:
        return scale(self, factor)

    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Raises:
        ValueError: ``loss`` is not a scalar, or some requested tensor is not
            part of the graph that produced ``loss``.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")

    # iterative post-order DFS; `order` ends up parents-before-children
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    targets = {id(t) for t in wrt}
    missing = targets - seen
    if missing:
        raise ValueError("requested gradient for a tensor that is detached from the loss")

    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in targets or any(needed[id(p)] for p in node.parents)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.grad_fn is None or not needed[id(node)]:
            continue
        mask = [needed[id(p)] for p in node.parents]
        for parent, pg, want in zip(node.parents, node.grad_fn(g, mask), mask):
            if not want or pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1, valid-padding cross-correlation.

    Shapes: ``x`` (N, C, H, W), ``weight`` (F, C, kh, kw), ``bias`` (F,);
    output (N, F, H-kh+1, W-kw+1).
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cw}")
    if bias.shape != (f,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    if kh > h or kw > w:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    ho, wo = h - kh + 1, w - kw + 1

    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))  # N, C, ho, wo, kh, kw
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(f, c * kh * kw)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def grad_fn(g, mask):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gx = gw = gb = None
        if mask[0]:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if mask[1]:
            gw = (g2.T @ cols).reshape(weight.shape)
        if mask[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    return Tensor(out, (x, weight, bias), grad_fn, "conv2d")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    active = x.data > 0
    return Tensor(np.where(active, x.data, 0.0), (x,), lambda g, m: (g * active,), "relu")


def avgpool2d(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling; a trailing odd row/column is dropped."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ValueError(f"avgpool2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ValueError(f"avgpool2d: input {h}x{w} too small")
    out = x.data[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).mean(axis=(3, 5))

    def grad_fn(g, mask):
        gx = np.zeros_like(x.data)
        gx[:, :, : 2 * ho, : 2 * wo] = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return (gx,)

    return Tensor(out, (x,), grad_fn, "avgpool2d")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with ``x`` (N, D), ``weight`` (D, K), ``bias`` (K,)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: incompatible shapes {x.shape} @ {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"dense: bias shape {bias.shape} does not match {weight.shape[1]} outputs")

    def grad_fn(g, mask):
        return (
            g @ weight.data.T if mask[0] else None,
            x.data.T @ g if mask[1] else None,
            g.sum(axis=0) if mask[2] else None,
        )

    return Tensor(x.data @ weight.data + bias.data, (x, weight, bias), grad_fn, "dense")


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against integer labels, as a scalar.

    ``reduction="sum"`` makes each sample's gradient independent of batch size.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != labels.size:
        raise ValueError(f"softmax_cross_entropy: logits {logits.shape} vs {labels.size} labels")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    n = labels.size
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    per_sample = -log_probs[np.arange(n), labels]
    denom = n if reduction == "mean" else 1

    def grad_fn(g, mask):
        d = np.exp(log_probs)
        d[np.arange(n), labels] -= 1.0
        return (d * (g / denom),)

    return Tensor(per_sample.sum() / denom, (logits,), grad_fn, "softmax_cross_entropy")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), lambda g, m: (g, g), "add")


def scale(a: Tensor, factor: float) -> Tensor:
    a = _as_tensor(a)
    factor = float(factor)
    return Tensor(a.data * factor, (a,), lambda g, m: (g * factor,), "scale")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Elementwise clip to ``[lo, hi]``; the gradient passes only where unclipped."""
    a = _as_tensor(a)
    if lo > hi:
        raise ValueError(f"clamp: lo={lo} > hi={hi}")
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), (a,), lambda g, m: (g * inside,), "clamp")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g, m: (g.reshape(src),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(a, (a.shape[0], -1))


def weighted_sum(a: Tensor, weights) -> Tensor:
    """Scalar ``sum(a * weights)`` for a constant weight array of the same shape."""
    a = _as_tensor(a)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != a.shape:
        raise ValueError(f"weighted_sum: weights {weights.shape} vs tensor {a.shape}")
    return Tensor(np.sum(a.data * weights), (a,), lambda g, m: (g * weights,), "weighted_sum")


def l2_norms(a: Tensor) -> Tensor:
    """Row-wise Euclidean norms of an (N, D) tensor; the gradient at a zero row is zero."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"l2_norms expects (N, D), got {a.shape}")
    norms = np.sqrt(np.sum(a.data**2, axis=1))

    def grad_fn(g, mask):
        safe = np.where(norms > 0, norms, 1.0)
        return (a.data * (g / safe * (norms > 0))[:, None],)

    return Tensor(norms, (a,), grad_fn, "l2_norms")
