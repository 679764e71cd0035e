"""Tape-based reverse-mode differentiation over dense 2-D float64 arrays.

Only the handful of operations the model needs are provided. Operations
record themselves on the innermost active :class:`Tape`; outside a tape they
run as plain numpy forward computations.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(w)
    >>> tape.backward(loss)
    >>> w.grad
    array([[1., 1.],
           [1., 1.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class TapeStateError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # skips the defensive copy in __init__ for op outputs
        t = cls.__new__(cls)
        t.values = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values.tolist()}{flag})"


_active: list["Tape"] = []


class Tape:
    """Records operations for one forward pass; replays them once in reverse."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._outputs: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self._consumed:
            raise TapeStateError("tape already replayed; record on a fresh tape")
        self.nodes.append((out, inputs, backward_fn))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeStateError("backward called twice on the same tape")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be a 1x1 scalar, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ValueError("loss was not produced on this tape")
        self._consumed = True

        upstream: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for out, inputs, backward_fn in reversed(self.nodes):
            g_out = upstream.pop(id(out), None)
            if g_out is None:
                continue
            for inp, g_in in zip(inputs, backward_fn(g_out)):
                if g_in is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in upstream:
                    upstream[key] = upstream[key] + g_in
                else:
                    upstream[key] = g_in
                # leaves never appear as an op output, so accumulate now
                if key not in self._outputs:
                    inp.grad = g_in.copy() if inp.grad is None else inp.grad + g_in
                    del upstream[key]


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    if not _active or not needs:
        return Tensor._wrap(arr, needs)
    out = Tensor._wrap(arr, True)
    _active[-1].record(out, inputs, backward_fn)
    return out


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _emit(av @ bv, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def add_row_broadcast(a: Tensor, bias: Tensor) -> Tensor:
    if bias.shape != (1, a.cols):
        raise DimensionError(f"bias must be (1, {a.cols}), got {bias.shape}")
    return _emit(a.values + bias.values, (a, bias),
                 lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul_col_broadcast(a: Tensor, col: Tensor) -> Tensor:
    """Scale row i of ``a`` by ``col[i, 0]``."""
    if col.shape != (a.rows, 1):
        raise DimensionError(f"column must be ({a.rows}, 1), got {col.shape}")
    av, cv = a.values, col.values
    return _emit(av * cv, (a, col),
                 lambda g: (g * cv, (g * av).sum(axis=1, keepdims=True)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit(a.values * factor, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _emit(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; entries at the floor get zero gradient."""
    v = a.values
    clamped = np.maximum(v, floor) if floor > 0 else v
    live = v > floor if floor > 0 else np.ones_like(v, dtype=bool)
    return _emit(np.log(clamped), (a,), lambda g: (np.where(live, g / clamped, 0.0),))


def softmax_rows(a: Tensor) -> Tensor:
    z = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (a,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_cols needs at least one part")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {[q.shape for q in parts]}")
    parts = tuple(parts)
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.values for p in parts], axis=1), parts, bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    cols = a.cols

    def bw(g):
        full = np.zeros((g.shape[0], cols))
        full[:, start:stop] = g
        return (full,)

    return _emit(a.values[:, start:stop], (a,), bw)


def transpose(a: Tensor) -> Tensor:
    return _emit(a.values.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    """Row-major reshape."""
    if rows * cols != a.values.size:
        raise DimensionError(f"cannot reshape {a.shape} to ({rows}, {cols})")
    shape = a.shape
    return _emit(a.values.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def pick(a: Tensor, row: int, col: int) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[row, col] = g[0, 0]
        return (full,)

    return _emit(a.values[row:row + 1, col:col + 1].copy(), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(a.values.sum().reshape(1, 1), (a,),
                 lambda g: (np.full(shape, g[0, 0]),))


def finite_difference_grad(f: Callable[[Tensor], Tensor | float], at: Tensor,
                           eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``at``.

    ``at.values`` is perturbed in place and restored entry by entry, so ``f``
    may close over ``at`` itself (useful for model parameters).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def scalar(x):
        out = f(at)
        return float(out.values[0, 0]) if isinstance(out, Tensor) else float(out)

    grad = np.zeros(at.shape)
    v = at.values
    for idx in np.ndindex(*v.shape):
        orig = v[idx]
        v[idx] = orig + eps
        hi = scalar(at)
        v[idx] = orig - eps
        lo = scalar(at)
        v[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad
