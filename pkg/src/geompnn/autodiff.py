"""Dense float64 tensors with a reverse-mode tape.

Every primitive is a :class:`Primitive` in ``PRIMITIVES``; rules are looked up
by name at call time, so a rule can be swapped out (the gradient-check negative
control does exactly that). Tensors created without a tape are plain values:
the same model code runs for inference with no recording overhead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape: Optional["Tape"] = None, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Primitive:
    name: str
    # forward(*values, **attrs) -> (out, saved)
    forward: Callable[..., tuple]
    # backward(grad_out, saved, *values, **attrs) -> tuple of input grads (None = no grad)
    backward: Callable[..., tuple]


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    saved: Any
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.records: list[Record] = []

    def __len__(self):
        return len(self.records)

    def watch(self, value, name: str = "") -> Tensor:
        """Leaf tensor whose gradient is accumulated by :meth:`backward`."""
        return Tensor(value, tape=self, requires_grad=True, name=name)

    def backward(self, out: Tensor, grad=None) -> None:
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        """Accumulate gradients into the watched leaves.

        Records are consumed as they are processed so intermediate values and
        gradients can be freed; a tape supports a single backward pass.
        """
        out.grad = np.ones_like(out.value) if grad is None else np.asarray(grad, dtype=np.float64)
        while self.records:
            rec = self.records.pop()
            g = rec.output.grad
            rec.output.grad = None
            if g is None:
                continue
            prim = PRIMITIVES[rec.op]
            grads = prim.backward(g, rec.saved, *(t.value for t in rec.inputs), **rec.attrs)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.value.shape:
                    raise ValueError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.value.shape}")
                t.grad = gi.copy() if t.grad is None else t.grad + gi


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(op: str, *inputs, **attrs) -> Tensor:
    ts = tuple(as_tensor(t) for t in inputs)
    out_val, saved = PRIMITIVES[op].forward(*(t.value for t in ts), **attrs)
    tape = next((t.tape for t in ts if t.tape is not None), None)
    needs = any(t.requires_grad for t in ts)
    out = Tensor(out_val, tape=tape if needs else None, requires_grad=needs)
    if tape is not None and needs:
        tape.records.append(Record(op, ts, out, saved, attrs))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- rules ------------------------------------------------------------------------


def _matmul_f(a, b):
    return a @ b, None


def _matmul_b(g, saved, a, b):
    return g @ b.T, a.T @ g


def _add_f(a, b):
    return a + b, None


def _add_b(g, saved, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_f(a, b):
    return a - b, None


def _sub_b(g, saved, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_f(a, b):
    return a * b, None


def _mul_b(g, saved, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _concat_f(*xs):
    return np.concatenate(xs, axis=1), None


def _concat_b(g, saved, *xs):
    cuts = np.cumsum([x.shape[1] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=1))


def _scatter_matrix(idx: np.ndarray, n_rows: int, weights=None) -> sp.csr_matrix:
    """(n_rows x len(idx)) matrix M with M[idx[e], e] = w[e]."""
    w = np.ones(len(idx)) if weights is None else weights
    return sp.csr_matrix((w, (idx, np.arange(len(idx)))), shape=(n_rows, len(idx)))


def _gather_f(a, idx):
    return a[idx], None


def _gather_b(g, saved, a, idx):
    return (_scatter_matrix(idx, a.shape[0]) @ g,)


def _segment_mean_f(a, seg, n_segments):
    deg = np.bincount(seg, minlength=n_segments).astype(np.float64)
    w = 1.0 / deg[seg]
    S = _scatter_matrix(seg, n_segments, w)
    # empty segments give zero rows
    return S @ a, S


def _segment_mean_b(g, S, a, seg, n_segments):
    return (S.T @ g,)


def _gelu_f(a):
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))
    return a * cdf, cdf


def _gelu_b(g, cdf, a):
    pdf = _INV_SQRT2PI * np.exp(-0.5 * a * a)
    return (g * (cdf + a * pdf),)


def _square_f(a):
    return a * a, None


def _square_b(g, saved, a):
    return (2.0 * g * a,)


def _mean_f(a):
    return np.asarray(a.mean()), None


def _mean_b(g, saved, a):
    return (np.full_like(a, float(g) / a.size),)


def _sum_f(a):
    return np.asarray(a.sum()), None


def _sum_b(g, saved, a):
    return (np.full_like(a, float(g)),)


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in [
        Primitive("matmul", _matmul_f, _matmul_b),
        Primitive("add", _add_f, _add_b),
        Primitive("sub", _sub_f, _sub_b),
        Primitive("mul", _mul_f, _mul_b),
        Primitive("concat", _concat_f, _concat_b),
        Primitive("gather_rows", _gather_f, _gather_b),
        Primitive("segment_mean", _segment_mean_f, _segment_mean_b),
        Primitive("gelu", _gelu_f, _gelu_b),
        Primitive("square", _square_f, _square_b),
        Primitive("mean", _mean_f, _mean_b),
        Primitive("sum", _sum_f, _sum_b),
    ]
}


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def concat(xs) -> Tensor:
    """Column-wise concatenation of 2-d tensors."""
    return apply("concat", *xs)


def gather_rows(a, idx) -> Tensor:
    return apply("gather_rows", a, idx=np.asarray(idx, dtype=np.int64))


def segment_mean(a, seg, n_segments: int) -> Tensor:
    """Row means grouped by ``seg``; segments with no rows give zeros."""
    return apply("segment_mean", a, seg=np.asarray(seg, dtype=np.int64), n_segments=int(n_segments))


def gelu(a) -> Tensor:
    return apply("gelu", a)


def square(a) -> Tensor:
    return apply("square", a)


def mean(a) -> Tensor:
    return apply("mean", a)


def tsum(a) -> Tensor:
    return apply("sum", a)


def mse_loss(pred, target) -> Tensor:
    return mean(square(sub(pred, target)))
