"""Dense float64 tensor math with reverse-mode differentiation.

Every operation takes an optional ``tape``; when given, the op appends a
backward closure so that :func:`backward` can replay the recorded ops in
exact reverse execution order and accumulate gradients additively (a
parameter used twice receives the sum of both contributions).

All values are 64-bit floats and all ops are pure given (inputs, rng
state), so results are bit-reproducible under a fixed seed. Tensors may be
shared read-only across threads; a Tape must never be mutated from two
threads.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, ValidationError

LAYER_NORM_EPS = 1e-5


class Tensor:
    """Dense float64 value; a gradient buffer is attached during backprop."""

    __slots__ = ("array", "grad")

    def __init__(self, array):
        # asarray keeps 0-d scalars 0-d (ascontiguousarray would force 1-d)
        self.array = np.asarray(array, dtype=np.float64, order="C")
        self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        return float(self.array)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable tensor with a persistent, zero-initialized gradient."""

    __slots__ = ("name",)

    def __init__(self, array, name: str = ""):
        super().__init__(array)
        self.name = name
        self.grad = np.zeros_like(self.array)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of executed ops, replayed in reverse by backward()."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._output_ids: set[int] = set()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self._entries.append((out, inputs, backward_fn))
        self._output_ids.add(id(out))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._output_ids

    def __len__(self):
        return len(self._entries)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape):
    """Populate gradients of everything reachable from ``loss``.

    Parameter gradients accumulate across calls (use :func:`zero_grads`
    between steps); intermediate tensor gradients are reset per call.
    """
    if tape is None or not tape.produced(loss):
        raise ValidationError("loss tensor was not produced through this tape")
    if loss.array.ndim != 0:
        raise DimensionError(f"backward expects a scalar loss, got shape {loss.shape}")
    for out, inputs, _ in tape._entries:
        if not isinstance(out, Parameter):
            out.grad = None
        for t in inputs:
            if not isinstance(t, Parameter):
                t.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for out, _, backward_fn in reversed(tape._entries):
        if out.grad is not None:
            backward_fn(out.grad)


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    A, B = a.array, b.array
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul shapes {A.shape} and {B.shape} do not align")
    out = Tensor(A @ B)
    if tape is not None:
        def bwd(g):
            _accum(a, g @ B.T)
            _accum(b, A.T @ g)
        tape.record(out, (a, b), bwd)
    return out


def transpose(a: Tensor, tape: Tape | None = None) -> Tensor:
    if a.array.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.array.T)
    if tape is not None:
        def bwd(g):
            _accum(a, np.ascontiguousarray(g.T))
        tape.record(out, (a,), bwd)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    A, B = a.array, b.array
    if A.shape == B.shape:
        bias = False
    elif A.ndim == 2 and B.ndim == 1 and A.shape[1] == B.shape[0]:
        bias = True
    else:
        raise DimensionError(f"add shapes {A.shape} and {B.shape} are incompatible")
    out = Tensor(A + B)
    if tape is not None:
        def bwd(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0) if bias else g)
        tape.record(out, (a, b), bwd)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    A, B = a.array, b.array
    if A.shape != B.shape:
        raise DimensionError(f"mul shapes {A.shape} and {B.shape} differ")
    out = Tensor(A * B)
    if tape is not None:
        def bwd(g):
            _accum(a, g * B)
            _accum(b, g * A)
        tape.record(out, (a, b), bwd)
    return out


def scale(a: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.array * s)
    if tape is not None:
        def bwd(g):
            _accum(a, g * s)
        tape.record(out, (a,), bwd)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.array.sum())
    if tape is not None:
        def bwd(g):
            _accum(a, np.full(a.shape, float(g)))
        tape.record(out, (a,), bwd)
    return out


def mean_of(tensors, tape: Tape | None = None) -> Tensor:
    """Mean of same-shape tensors (used for batch loss reduction)."""
    if not tensors:
        raise ValidationError("mean_of needs at least one tensor")
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t, tape)
    return scale(total, 1.0 / len(tensors), tape)


def gather_rows(p: Tensor, ids, tape: Tape | None = None) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows expects a flat id list, got shape {idx.shape}")
    n_rows = p.array.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = int(idx[(idx < 0) | (idx >= n_rows)][0])
        raise ValidationError(f"id {bad} out of range for {n_rows} rows")
    out = Tensor(p.array[idx])
    if tape is not None:
        def bwd(g):
            if isinstance(p, Parameter):
                np.add.at(p.grad, idx, g)
            else:
                z = np.zeros_like(p.array)
                np.add.at(z, idx, g)
                _accum(p, z)
        tape.record(out, (p,), bwd)
    return out


def slice_rows(a: Tensor, lo: int, hi: int, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.array[lo:hi])
    if tape is not None:
        def bwd(g):
            z = np.zeros_like(a.array)
            z[lo:hi] = g
            _accum(a, z)
        tape.record(out, (a,), bwd)
    return out


def slice_cols(a: Tensor, lo: int, hi: int, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.array[:, lo:hi])
    if tape is not None:
        def bwd(g):
            z = np.zeros_like(a.array)
            z[:, lo:hi] = g
            _accum(a, z)
        tape.record(out, (a,), bwd)
    return out


def concat_cols(parts, tape: Tape | None = None) -> Tensor:
    widths = [t.array.shape[1] for t in parts]
    out = Tensor(np.concatenate([t.array for t in parts], axis=1))
    if tape is not None:
        def bwd(g):
            off = 0
            for t, w in zip(parts, widths):
                _accum(t, g[:, off:off + w])
                off += w
        tape.record(out, tuple(parts), bwd)
    return out


def reshape(a: Tensor, shape, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.array.reshape(shape))
    if tape is not None:
        def bwd(g):
            _accum(a, g.reshape(a.shape))
        tape.record(out, (a,), bwd)
    return out


def softmax(x: Tensor, axis: int = -1, tape: Tape | None = None) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    nd = x.array.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    ax = axis % nd
    if nd == 2 and ax == 1:
        flat = x.array
        restore = None
    else:
        moved = np.moveaxis(x.array, ax, -1)
        restore = moved.shape
        flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    if flat.ndim == 1:
        flat = flat.reshape(1, -1)
        restore = x.array.shape if restore is None else restore
    probs = kernels.softmax_rows(flat)
    if restore is None:
        out = Tensor(probs)
    else:
        out = Tensor(np.moveaxis(probs.reshape(restore), -1, ax))
    if tape is not None:
        def bwd(g):
            if restore is None:
                _accum(x, kernels.softmax_rows_bwd(probs, np.ascontiguousarray(g)))
            else:
                g_flat = np.ascontiguousarray(np.moveaxis(g, ax, -1).reshape(probs.shape))
                gx = kernels.softmax_rows_bwd(probs, g_flat)
                _accum(x, np.moveaxis(gx.reshape(restore), -1, ax))
        tape.record(out, (x,), bwd)
    return out


def causal_softmax(scores: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax over positions j <= i; strictly-upper entries are 0.

    Fused masked softmax: position i never attends ahead of itself, and the
    output stays finite (no -inf intermediate is materialized).
    """
    A = scores.array
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"causal_softmax expects square scores, got {A.shape}")
    probs = kernels.causal_softmax_rows(A)
    out = Tensor(probs)
    if tape is not None:
        def bwd(g):
            # masked entries have prob 0, so the dense formula zeroes them
            _accum(scores, kernels.softmax_rows_bwd(probs, np.ascontiguousarray(g)))
        tape.record(out, (scores,), bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS,
               tape: Tape | None = None) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    X = x.array
    if X.ndim == 1:
        X2 = X.reshape(1, -1)
    elif X.ndim == 2:
        X2 = X
    else:
        raise DimensionError(f"layer_norm expects 1D or 2D input, got {X.shape}")
    d = X2.shape[1]
    if gain.array.shape != (d,) or bias.array.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}")
    X2 = np.ascontiguousarray(X2)
    y, mean, rstd = kernels.layernorm_fwd(X2, gain.array, bias.array, eps)
    out = Tensor(y.reshape(X.shape))
    if tape is not None:
        def bwd(g):
            g2 = np.ascontiguousarray(g.reshape(X2.shape))
            gx, ggain, gbias = kernels.layernorm_bwd(X2, gain.array, mean, rstd, g2)
            _accum(x, gx.reshape(X.shape))
            _accum(gain, ggain)
            _accum(bias, gbias)
        tape.record(out, (x, gain, bias), bwd)
    return out


def gelu(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise x * Phi(x) via the tanh approximation."""
    out = Tensor(kernels.gelu_fwd(x.array))
    if tape is not None:
        def bwd(g):
            _accum(x, kernels.gelu_bwd(x.array, np.ascontiguousarray(g)))
        tape.record(out, (x,), bwd)
    return out


def dropout(x: Tensor, rate: float, rng, train_mode: bool,
            tape: Tape | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) at train time.

    Identity in eval mode or at rate 0 (the rng is not consumed then, so
    eval-mode runs leave the random stream untouched).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode requires an rng")
    factor = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.array * factor)
    if tape is not None:
        def bwd(g):
            _accum(x, g * factor)
        tape.record(out, (x,), bwd)
    return out


def cross_entropy(logits: Tensor, targets, ignore_id: int = -1,
                  tape: Tape | None = None) -> Tensor:
    """Mean -log softmax(logits)[target] over positions not equal to ignore_id.

    With every position ignored the loss is 0 with zero gradient.
    """
    L = logits.array
    if L.ndim != 2:
        raise DimensionError(f"cross_entropy expects 2D logits, got {L.shape}")
    tgt = np.ascontiguousarray(np.asarray(targets, dtype=np.int64))
    if tgt.shape != (L.shape[0],):
        raise DimensionError(
            f"cross_entropy got {tgt.shape[0] if tgt.ndim else 0} targets "
            f"for {L.shape[0]} rows")
    n_classes = L.shape[1]
    bad = tgt[(tgt != ignore_id) & ((tgt < 0) | (tgt >= n_classes))]
    if bad.size:
        raise ValidationError(f"target id {int(bad[0])} out of range for {n_classes} classes")
    loss, nvalid, probs = kernels.cross_entropy_fwd(L, tgt, int(ignore_id))
    out = Tensor(loss)
    if tape is not None:
        def bwd(g):
            _accum(logits, kernels.cross_entropy_bwd(probs, tgt, int(ignore_id),
                                                     nvalid, float(g)))
        tape.record(out, (logits,), bwd)
    return out
