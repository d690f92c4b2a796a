"""Dense float64 tensors with reverse-mode automatic differentiation.

A single module-level tape records every differentiable operation in
execution order (which is already a topological order).  ``backward`` seeds
the root gradient and replays the tape in reverse, accumulating gradients by
summation so that multiple uses of one tensor add their contributions.
``reset_tape`` must be called between training steps; nothing is freed
implicitly.

Everything is double precision.  Shapes are 0-d (scalars), 1-d (vectors) or
2-d (matrices); there is no broadcasting beyond row-wise affine maps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

Array = np.ndarray


class Tensor:
    """A dense array with an attached gradient slot.

    ``values`` is always a float64 ndarray.  ``grad`` is lazily allocated by
    the backward pass and has the same shape as ``values``.
    """

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; the module-level functions do the real work.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


class Tape:
    """Ordered record of executed operations.

    Each record is ``(output, inputs, rule)`` where ``rule`` maps the
    output gradient to one gradient (or ``None``) per input.  Records are
    appended in execution order, so the list is topologically sorted and a
    reverse replay visits every node exactly once.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def reset(self) -> None:
        self.records.clear()

    def run_backward(self, root: Tensor) -> None:
        root.grad = np.ones_like(root.values)
        for out, inputs, rule in reversed(self.records):
            if out.grad is None:
                continue
            grads = rule(out.grad)
            for tensor, grad in zip(inputs, grads):
                if grad is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.values)
                tensor.grad += grad


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.reset()


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> None:
    if out.requires_grad:
        _TAPE.records.append((out, inputs, rule))


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable tensor's grad slot.

    ``root`` must be a scalar.  Intended to run once per tape; call
    ``reset_tape`` before building the next graph.
    """
    if root.values.shape != ():
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    _TAPE.run_backward(root)


def assert_finite(values: Array, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# elementwise and affine operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.values + b.values, _needs_grad(a, b))
    _record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.values - b.values, _needs_grad(a, b))
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.values * b.values, _needs_grad(a, b))
    _record(out, (a, b), lambda g: (g * b.values, g * a.values))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values * c, a.requires_grad)
    _record(out, (a,), lambda g: (g * c,))
    return out


def add_rowwise(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m-by-n matrix."""
    if m.values.ndim != 2 or v.values.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowwise: shapes {m.shape} and {v.shape}")
    out = Tensor(m.values + v.values, _needs_grad(m, v))
    _record(out, (m, v), lambda g: (g, g.sum(axis=0)))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0), a.requires_grad)
    mask = a.values > 0
    _record(out, (a,), lambda g: (g * mask,))
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a caller-supplied generator (seeded upstream)."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.values * mask, a.requires_grad)
    _record(out, (a,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# matrix operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.values @ b.values, _needs_grad(a, b))
    _record(out, (a, b), lambda g: (g @ b.values.T, a.values.T @ g))
    return out


def vecmat(v: Tensor, w: Tensor) -> Tensor:
    """(d,) row vector times (d, k) matrix -> (k,)."""
    if v.values.ndim != 1 or w.values.ndim != 2 or v.shape[0] != w.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {v.shape} x {w.shape}")
    out = Tensor(v.values @ w.values, _needs_grad(v, w))
    _record(out, (v, w), lambda g: (w.values @ g, np.outer(v.values, g)))
    return out


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.values.T, a.requires_grad)
    _record(out, (a,), lambda g: (g.T,))
    return out


# ---------------------------------------------------------------------------
# softmax / log-sum-exp family (all max-shifted for stability)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of an m-by-n matrix; each output row sums to 1."""
    if a.values.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects a nonempty matrix, got {a.shape}")
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, a.requires_grad)

    def rule(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    _record(out, (a,), rule)
    return out


def logsumexp(a: Tensor) -> Tensor:
    """log(sum(exp(entries))) over all entries of ``a``, as a scalar."""
    if a.values.size == 0:
        raise ContractError("logsumexp of an empty tensor")
    m = a.values.max()
    e = np.exp(a.values - m)
    total = e.sum()
    out = Tensor(m + np.log(total), a.requires_grad)
    _record(out, (a,), lambda g: (g * e / total,))
    return out


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of an m-by-n matrix -> vector of length m."""
    if a.values.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"logsumexp_rows expects a nonempty matrix, got {a.shape}")
    m = a.values.max(axis=1, keepdims=True)
    e = np.exp(a.values - m)
    total = e.sum(axis=1, keepdims=True)
    out = Tensor((m + np.log(total)).reshape(-1), a.requires_grad)
    softmax = e / total
    _record(out, (a,), lambda g: (softmax * g[:, None],))
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    if x.values.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: shapes {x.shape}, {gain.shape}, {bias.shape}")
    mu = x.values.mean(axis=1, keepdims=True)
    var = x.values.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    out = Tensor(xhat * gain.values + bias.values, _needs_grad(x, gain, bias))

    def rule(g):
        dgain = (g * xhat).sum(axis=0)
        dbias = g.sum(axis=0)
        dxhat = g * gain.values
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, dgain, dbias

    _record(out, (x, gain, bias), rule)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.values.sum(), a.requires_grad)
    _record(out, (a,), lambda g: (np.full_like(a.values, float(g)),))
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    out = Tensor(a.values.mean(), a.requires_grad)
    _record(out, (a,), lambda g: (np.full_like(a.values, float(g) / n),))
    return out


def mean0(a: Tensor) -> Tensor:
    """Column means of an m-by-n matrix -> vector of length n."""
    if a.values.ndim != 2 or a.shape[0] < 1:
        raise ShapeError(f"mean0 expects a nonempty matrix, got {a.shape}")
    m = a.shape[0]
    out = Tensor(a.values.mean(axis=0), a.requires_grad)
    _record(out, (a,), lambda g: (np.tile(g / m, (m, 1)),))
    return out


# ---------------------------------------------------------------------------
# indexing, slicing, concatenation


def rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows by index (repeats allowed; gradients sum per row)."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.values[idx], a.requires_grad)

    def rule(g):
        da = np.zeros_like(a.values)
        np.add.at(da, idx, g)
        return (da,)

    _record(out, (a,), rule)
    return out


def row1d(a: Tensor, i: int) -> Tensor:
    """Extract row i of a matrix as a vector."""
    out = Tensor(a.values[i], a.requires_grad)

    def rule(g):
        da = np.zeros_like(a.values)
        da[i] = g
        return (da,)

    _record(out, (a,), rule)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ContractError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    out = Tensor(a.values[start:stop].copy(), a.requires_grad)

    def rule(g):
        da = np.zeros_like(a.values)
        da[start:stop] = g
        return (da,)

    _record(out, (a,), rule)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ContractError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    out = Tensor(a.values[:, start:stop].copy(), a.requires_grad)

    def rule(g):
        da = np.zeros_like(a.values)
        da[:, start:stop] = g
        return (da,)

    _record(out, (a,), rule)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols of an empty sequence")
    out = Tensor(np.concatenate([p.values for p in parts], axis=1), _needs_grad(*parts))
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    _record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=1)))
    return out


def concat1d(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat1d of an empty sequence")
    out = Tensor(np.concatenate([p.values for p in parts]), _needs_grad(*parts))
    lengths = [p.shape[0] for p in parts]
    splits = np.cumsum(lengths)[:-1]
    _record(out, tuple(parts), lambda g: tuple(np.split(g, splits)))
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack k vectors of length n into a k-by-n matrix."""
    if not parts:
        raise ContractError("stack_rows of an empty sequence")
    out = Tensor(np.stack([p.values for p in parts]), _needs_grad(*parts))
    _record(out, tuple(parts), lambda g: tuple(g[i] for i in range(len(parts))))
    return out


def take1d(v: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(v.values[idx], v.requires_grad)

    def rule(g):
        dv = np.zeros_like(v.values)
        np.add.at(dv, idx, g)
        return (dv,)

    _record(out, (v,), rule)
    return out


def take2d(a: Tensor, row_idx: Sequence[int], col_idx: Sequence[int]) -> Tensor:
    """Gather a[r, c] pairs -> vector (repeats allowed)."""
    ri = np.asarray(row_idx, dtype=np.intp)
    ci = np.asarray(col_idx, dtype=np.intp)
    out = Tensor(a.values[ri, ci], a.requires_grad)

    def rule(g):
        da = np.zeros_like(a.values)
        np.add.at(da, (ri, ci), g)
        return (da,)

    _record(out, (a,), rule)
    return out


def prefix_sums0(a: Tensor) -> Tensor:
    """Exclusive cumulative row sums: out[t] = sum of rows before t.

    Output has one more row than the input (row 0 is zero), so row ranges
    pool as out[stop] - out[start].
    """
    if a.values.ndim != 2:
        raise ShapeError(f"prefix_sums0 expects a matrix, got {a.shape}")
    body = np.cumsum(a.values, axis=0)
    out_values = np.vstack([np.zeros((1, a.shape[1])), body])
    out = Tensor(out_values, a.requires_grad)

    def rule(g):
        # d out[t] / d a[r] = 1 for t > r, so grad is a suffix sum of g[1:]
        return (np.cumsum(g[:0:-1], axis=0)[::-1],)

    _record(out, (a,), rule)
    return out


def scale_rows(a: Tensor, factors: Array) -> Tensor:
    """Multiply row i by the constant factors[i] (factors carry no grad)."""
    f = np.asarray(factors, dtype=np.float64)
    if a.values.ndim != 2 or f.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: shapes {a.shape} and {f.shape}")
    out = Tensor(a.values * f[:, None], a.requires_grad)
    _record(out, (a,), lambda g: (g * f[:, None],))
    return out


def mean_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy of an m-by-k logit matrix against targets."""
    m = logits.shape[0]
    if len(targets) != m:
        raise ShapeError(f"{len(targets)} targets for {m} logit rows")
    ce = sub(logsumexp_rows(logits), take2d(logits, range(m), targets))
    return mean_all(ce)


# ---------------------------------------------------------------------------
# gradient validation


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Tensor | Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Compare autodiff gradients of ``f`` against central differences.

    ``f`` must rebuild its graph on every call and return a scalar tensor;
    it is evaluated 2 times per parameter coordinate, so keep instances
    small.  Returns the max over coordinates of
    ``|fd - ad| / max(1, |fd|, |ad|)``.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_check step must be positive, got {h}")
    tensors = [params] if isinstance(params, Tensor) else list(params)

    def evaluate() -> float:
        reset_tape()
        out = f()
        value = float(out.values)
        if not np.isfinite(value):
            raise NumericError("finite_diff_check: f evaluated to a non-finite value")
        return value

    reset_tape()
    for t in tensors:
        t.zero_grad()
    root = f()
    if not np.isfinite(float(root.values)):
        raise NumericError("finite_diff_check: f evaluated to a non-finite value")
    if root.requires_grad:
        backward(root)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.values) for t in tensors
    ]
    reset_tape()

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat_values = t.values.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat_values.size):
            original = flat_values[i]
            flat_values[i] = original + h
            upper = evaluate()
            flat_values[i] = original - h
            lower = evaluate()
            flat_values[i] = original
            fd = (upper - lower) / (2.0 * h)
            ad = flat_grad[i]
            err = abs(fd - ad) / max(1.0, abs(fd), abs(ad))
            if err > worst:
                worst = err
    for t, grad in zip(tensors, analytic):
        t.grad = grad
    return worst
