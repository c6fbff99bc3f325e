"""Dense tensors with reverse-mode differentiation.

Tensors are float64 numpy arrays of rank <= 3. Two shape conventions run
through the package: plain matrices ``(rows, cols)`` and stacks of matrices
``(batch, rows, cols)``; the time/row axis is always second-to-last and the
feature/column axis last. Elementwise ops require identical shapes; the only
elementwise broadcast is adding a bias row vector. ``matmul`` additionally
accepts a matrix on either side of a stack, applying it to every stack entry.

Gradient tracking is explicit: operations executed inside a ``with Tape()``
block are recorded, and ``backward(loss, tape)`` replays the recorded
adjoints in reverse, accumulating into the ``.grad`` buffer of every
``requires_grad`` leaf that the loss reaches. Outside a tape, ops run as
plain numpy with no recording. Tapes are single-use: one forward pass, one
backward pass, then rebuild.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "matmul",
    "transpose_rows",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "add_bias",
    "relu",
    "sigmoid",
    "clamped_log",
    "row_softmax",
    "concat_features",
    "concat_rows",
    "mean_rows",
    "reshape",
    "sum_all",
    "mean_all",
    "abs_",
    "dropout",
    "rbf_mmd2",
    "weight_param",
    "bias_param",
    "zero_grads",
]

LOG_CLAMP = 1e-7


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A dense real array of rank <= 3 with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 3")
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"extents must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @classmethod
    def _result(cls, arr: np.ndarray) -> "Tensor":
        # Fast path for op outputs: skips validation done on user input.
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A non-tracking view sharing this tensor's storage."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        return out

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations, replayable once in reverse."""

    current: Optional["Tape"] = None

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if Tape.current is not None:
            raise RuntimeError("a tape is already recording; tapes do not nest")
        Tape.current = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape.current = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._nodes.append(_Node(out, inputs, backward_fn))
        self._produced.add(id(out))


def _emit(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = Tape.current
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    The tape is consumed: each recorded operation is visited exactly once, in
    reverse execution order. Leaves the loss does not reach keep whatever is
    already in their grad buffer (zero for fresh leaves).
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("tape already consumed; rebuild the forward pass")
    tape._consumed = True
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = tape._produced
    for node in reversed(tape._nodes):
        out_grad = adjoints.pop(id(node.out), None)
        if out_grad is None:
            continue
        for t_in, g in zip(node.inputs, node.backward_fn(out_grad)):
            if g is None:
                continue
            if t_in.grad is not None:
                t_in.grad += g.reshape(t_in.grad.shape)
            elif id(t_in) in produced:
                key = id(t_in)
                prev = adjoints.get(key)
                adjoints[key] = g if prev is None else prev + g


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a matrix operand broadcasts across a stacked one."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {ad.shape} x {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul stack extents differ: {ad.shape} x {bd.shape}")
    out = Tensor._result(np.matmul(ad, bd))

    def backward_fn(g: np.ndarray):
        ga = np.matmul(g, _swap(bd))
        gb = np.matmul(_swap(ad), g)
        if ad.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if bd.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return _emit(out, (a, b), backward_fn)


def transpose_rows(x: Tensor) -> Tensor:
    """Swap the row and column axes (per stack entry for rank 3)."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got shape {x.shape}")
    out = Tensor._result(_swap(x.data).copy())
    return _emit(out, (x,), lambda g: (_swap(g),))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} operand shapes differ: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor._result(a.data + b.data)
    return _emit(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor._result(a.data - b.data)
    return _emit(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    out = Tensor._result(ad * bd)
    return _emit(out, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor._result(x.data * c)
    return _emit(out, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor._result(x.data + c)
    return _emit(out, (x,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a rank-1 bias vector to every row of x."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not fit rows of {x.shape}")
    out = Tensor._result(x.data + b.data)

    def backward_fn(g: np.ndarray):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _emit(out, (x, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0.0
    out = Tensor._result(np.where(mask, x.data, 0.0))
    return _emit(out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                 np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor._result(y)
    return _emit(out, (x,), lambda g: (g * y * (1.0 - y),))


def clamped_log(x: Tensor, floor: float = LOG_CLAMP) -> Tensor:
    """log(max(x, floor)); gradient is zero inside the clamped region."""
    clamped = np.maximum(x.data, floor)
    out = Tensor._result(np.log(clamped))
    live = x.data >= floor
    return _emit(out, (x,), lambda g: (g * live / clamped,))


def row_softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by per-row max subtraction."""
    if x.ndim < 2:
        raise ShapeError(f"row_softmax needs rank >= 2, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._result(y)

    def backward_fn(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(out, (x,), backward_fn)


def concat_features(parts: Sequence[Tensor]) -> Tensor:
    """Append columns of the given tensors in order; rows must agree."""
    if not parts:
        raise ShapeError("concat_features needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_features row shapes differ: {parts[0].shape} vs {p.shape}"
            )
    out = Tensor._result(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return _emit(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=-1)))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack rows of the given tensors in order; columns must agree."""
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    ref = parts[0]
    for p in parts[1:]:
        if p.ndim != ref.ndim or p.shape[:-2] != ref.shape[:-2] or p.shape[-1] != ref.shape[-1]:
            raise ShapeError(f"concat_rows column shapes differ: {ref.shape} vs {p.shape}")
    out = Tensor._result(np.concatenate([p.data for p in parts], axis=-2))
    heights = [p.shape[-2] for p in parts]
    splits = np.cumsum(heights)[:-1]
    return _emit(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=-2)))


def mean_rows(x: Tensor) -> Tensor:
    """Column means over the row axis, keeping a singleton row."""
    if x.ndim < 2:
        raise ShapeError(f"mean_rows needs rank >= 2, got shape {x.shape}")
    t = x.shape[-2]
    out = Tensor._result(x.data.mean(axis=-2, keepdims=True))

    def backward_fn(g: np.ndarray):
        return (np.broadcast_to(g / t, x.shape).copy(),)

    return _emit(out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    orig = x.shape
    out = Tensor._result(x.data.reshape(shape))
    return _emit(out, (x,), lambda g: (g.reshape(orig),))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._result(np.asarray(x.data.sum()))
    return _emit(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor._result(np.asarray(x.data.mean()))
    return _emit(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def abs_(x: Tensor) -> Tensor:
    """Elementwise absolute value; the subgradient at 0 is 0."""
    sign = np.sign(x.data)
    out = Tensor._result(np.abs(x.data))
    return _emit(out, (x,), lambda g: (g * sign,))


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Zero entries with probability p and rescale survivors by 1/(1-p).

    The mask comes from the supplied generator, so callers control seeding.
    Evaluation-time behaviour is simply not calling this op.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor._result(x.data * mask)
    return _emit(out, (x,), lambda g: (g * mask,))


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise distance over the pooled rows (the usual heuristic)."""
    pooled = np.concatenate([a, b], axis=0)
    sq = _pairwise_sq_dists(pooled, pooled)
    upper = sq[np.triu_indices(len(pooled), k=1)]
    med = float(np.median(upper)) if upper.size else 1.0
    return math.sqrt(med) if med > 0 else 1.0


def rbf_mmd2(a: Tensor, b: Tensor, bandwidth: Optional[float] = None) -> Tensor:
    """Biased Gaussian-kernel MMD^2 between two row batches.

    The V-statistic (diagonal included) is used so the value is a true
    squared RKHS distance: nonnegative, symmetric, zero on identical
    batches. With ``bandwidth=None`` the median heuristic is applied and
    treated as a constant for differentiation.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"rbf_mmd2 needs row batches of equal width, got {a.shape}, {b.shape}")
    ad, bd = a.data, b.data
    sigma = median_bandwidth(ad, bd) if bandwidth is None else float(bandwidth)
    inv = 1.0 / (2.0 * sigma * sigma)
    kaa = np.exp(-_pairwise_sq_dists(ad, ad) * inv)
    kbb = np.exp(-_pairwise_sq_dists(bd, bd) * inv)
    kab = np.exp(-_pairwise_sq_dists(ad, bd) * inv)
    n, m = len(ad), len(bd)
    value = kaa.mean() + kbb.mean() - 2.0 * kab.mean()
    out = Tensor._result(np.asarray(value))

    def backward_fn(g: np.ndarray):
        gs = float(g) / (sigma * sigma)
        # d/da_i of mean(Kaa): symmetric pair terms; of mean(Kab): cross terms.
        ga = (2.0 / (n * n)) * (kaa @ ad - kaa.sum(axis=1)[:, None] * ad)
        ga -= (2.0 / (n * m)) * (kab @ bd - kab.sum(axis=1)[:, None] * ad)
        gb = (2.0 / (m * m)) * (kbb @ bd - kbb.sum(axis=1)[:, None] * bd)
        gb -= (2.0 / (n * m)) * (kab.T @ ad - kab.sum(axis=0)[:, None] * bd)
        return ga * gs, gb * gs

    return _emit(out, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# Gradient checking and parameter helpers
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], theta: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map ``theta`` to a scalar Tensor and be deterministic across
    calls. The relative error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not theta.requires_grad:
        raise ValueError("theta must have requires_grad=True")
    theta.zero_grad()
    with Tape() as tape:
        loss = fn(theta)
    if loss.data.size != 1 or not np.isfinite(loss.data).all():
        raise ValueError("fn must produce a finite scalar")
    backward(loss, tape)
    analytic = theta.grad.copy()
    numeric = np.zeros_like(analytic)
    flat = theta.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(theta).item()
        flat[i] = orig - eps
        f_minus = fn(theta).item()
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"fn returned a non-finite value at coordinate {i}")
        num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def weight_param(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Variance-preserving uniform init over +/- sqrt(6/(rows+cols))."""
    a = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-a, a, size=(rows, cols)), requires_grad=True)


def bias_param(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
