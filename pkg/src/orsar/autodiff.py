"""Dense tensors with tape-based reverse-mode automatic differentiation.

This is deliberately a small library: it covers exactly the operations the
object-graph backbone and the GRU head need (dense matmul, a handful of
pointwise functions, concatenation, reductions, row gather/scatter, and a
fused softmax cross-entropy), nothing more.

The graph is define-by-run. Operations executed while a :class:`Tape` is
active are recorded in execution order, which for a define-by-run graph is
already a topological order, so ``Tape.backward`` is a single reverse sweep
that visits each record exactly once. Without an active tape the same
functions compute values eagerly and record nothing, which is the inference
path.

Tapes are thread-confined: the active-tape stack is thread local, so
concurrent forward/backward passes need one tape per thread. Parameter
value arrays may be shared read-only across threads.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense n-dimensional array plus a same-shape gradient accumulator.

    ``grad`` materializes lazily: it reads as zeros until backward routes a
    contribution here, and ``zero_grad`` drops it back to the lazy state.
    Repeated backward passes accumulate into it.
    """

    __slots__ = ("values", "_grad")

    def __init__(self, values, dtype=None):
        self.values = np.asarray(values, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(self.values.dtype, np.floating):
            self.values = self.values.astype(np.float64)
        self._grad = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += g

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # Sugar so model code reads like the math it implements.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Ordered record of operations for one forward pass.

    Each record is ``(output, inputs, grad_fn)`` where ``grad_fn`` maps the
    output gradient to one gradient per input (or None for inputs that do
    not need one). Records are appended in execution order; ``backward``
    replays them once, in reverse.
    """

    def __init__(self):
        self._records = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted (interleaved tapes?)"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple, grad_fn) -> None:
        self._records.append((output, inputs, grad_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` of every tensor on the path to ``loss``.

        ``loss`` must be a scalar. Tensors not on the path keep a zero
        gradient; repeated calls without ``zero_grad`` accumulate. The
        sweep works on pass-local gradients and only adds them into the
        persistent accumulators at the end, so each call contributes
        exactly one d(loss)/d(tensor) regardless of earlier calls.
        """
        if loss.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {loss.shape}")
        local: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for output, inputs, grad_fn in reversed(self._records):
            g = local.get(id(output))
            if g is None:
                continue
            for tensor, part in zip(inputs, grad_fn(g)):
                if part is None:
                    continue
                key = id(tensor)
                if key in local:
                    local[key] = local[key] + part
                else:
                    local[key] = part
                    holders[key] = tensor
        for key, tensor in holders.items():
            tensor.accumulate_grad(local[key])


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Uses the innermost active tape when none is given, so it can be called
    inside the ``with Tape()`` block that built the graph.
    """
    if tape is None:
        tape = _active_tape()
    if tape is None:
        raise ValueError("backward needs a tape (none active, none given)")
    tape.backward(loss)


def _emit(values: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
    out = Tensor(values)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, grad_fn)
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not chain: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def grad_fn(g):
        return g @ bv.T, av.T @ g

    return _emit(av @ bv, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a rank-1 bias broadcast over leading axes."""
    if a.shape == b.shape:
        return _emit(a.values + b.values, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        lead = tuple(range(a.ndim - 1))
        return _emit(a.values + b.values, (a, b), lambda g: (g, g.sum(axis=lead)))
    raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes incompatible: {a.shape} - {b.shape}")
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product (same shapes only)."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes incompatible: {a.shape} * {b.shape}")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, s: float) -> Tensor:
    return _emit(a.values * s, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    av = a.values
    return _emit(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0),))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay overflow-free for large |x|.
    av = a.values
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def concat(parts: list, axis: int) -> Tensor:
    """Concatenate tensors along ``axis``; backward slices the gradient back."""
    if not parts:
        raise ValueError("concat of an empty list")
    ndim = parts[0].ndim
    if not 0 <= axis < ndim:
        raise ValueError(f"concat axis {axis} out of range for rank {ndim}")
    for p in parts[1:]:
        if p.ndim != ndim or any(
            i != axis and p.shape[i] != parts[0].shape[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat extents differ off axis {axis}: "
                f"{[p.shape for p in parts]}"
            )
    extents = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + extents)

    def grad_fn(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _emit(
        np.concatenate([p.values for p in parts], axis=axis), tuple(parts), grad_fn
    )


def sum_axis(a: Tensor, axis: int) -> Tensor:
    """Reduce one axis by summation; backward broadcasts along it."""
    if not 0 <= axis < a.ndim:
        raise ValueError(f"sum_axis axis {axis} out of range for rank {a.ndim}")
    extent = a.shape[axis]

    def grad_fn(g):
        return (np.repeat(np.expand_dims(g, axis), extent, axis=axis),)

    return _emit(a.values.sum(axis=axis), (a,), grad_fn)


def total_sum(a: Tensor) -> Tensor:
    """Scalar sum over all elements (composition of reshape and sum_axis)."""
    return sum_axis(reshape(a, (a.size,)), 0)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _emit(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = np.argsort(axes)
    return _emit(
        np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Copy row(s) ``index`` out of a 2-d table.

    ``index`` may be a single id or an integer array; backward accumulates
    only into the selected rows, so all other rows keep exactly zero grad.
    """
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be rank 2, got {table.shape}")
    idx = np.asarray(index)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"embedding index out of range [0, {rows}): {index}")

    def grad_fn(g):
        dt = np.zeros_like(table.values)
        np.add.at(dt, idx, g)
        return (dt,)

    return _emit(table.values[idx], (table,), grad_fn)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given per-row ids.

    Buckets no row maps to come out all-zero. This is the scatter dual of
    ``embedding_lookup``: backward just gathers the output gradient back by
    id.
    """
    ids = np.asarray(segment_ids)
    if x.ndim < 1 or ids.shape != (x.shape[0],):
        raise ShapeError(
            f"segment_sum needs one id per row: x {x.shape}, ids {ids.shape}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(f"segment id out of range [0, {num_segments})")
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, ids, x.values)
    return _emit(out, (x,), lambda g: (g[ids],))


def softmax_cross_entropy(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against integer class targets.

    Accepts a single logit vector with one class id, or a batch of rows with
    one id per row (reduced by ``mean`` or ``sum``). Computed as
    logsumexp(logits) - logits[target] with max subtraction for stability;
    the gradient is softmax(logits) - onehot(target).
    """
    if not np.all(np.isfinite(logits.values)):
        raise ValueError("softmax_cross_entropy: non-finite logit")
    single = logits.ndim == 1
    lv = logits.values[None, :] if single else logits.values
    if lv.ndim != 2:
        raise ShapeError(f"logits must be rank 1 or 2, got {logits.shape}")
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape != (lv.shape[0],):
        raise ShapeError(f"targets {tgt.shape} do not match logits rows {lv.shape[0]}")
    k = lv.shape[1]
    if tgt.size and (tgt.min() < 0 or tgt.max() >= k):
        raise IndexError(f"target class out of range [0, {k})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    m = lv.max(axis=1, keepdims=True)
    shifted = lv - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    per_row = lse[:, 0] - lv[np.arange(lv.shape[0]), tgt]
    n = lv.shape[0]
    loss = per_row.sum() / n if reduction == "mean" else per_row.sum()

    def grad_fn(g):
        soft = np.exp(lv - lse)
        soft[np.arange(n), tgt] -= 1.0
        if reduction == "mean":
            soft /= n
        d = soft * g
        return (d[0] if single else d,)

    return _emit(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn)
