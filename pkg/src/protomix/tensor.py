"""Dense float64 tensors with reverse-mode differentiation.

Forward operations run on plain numpy arrays. When a :class:`GradientTape`
is active (entered as a context manager), every primitive records itself so
the tape can later replay the computation in reverse and accumulate exact
gradients. Without an active tape the same functions are pure numpy forward
passes, which is how evaluation-mode code runs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

__all__ = [
    "Tensor",
    "GradientTape",
    "Parameter",
    "backward",
    "gradient_of",
    "finite_difference_check",
    "sgd_momentum_step",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "reshape",
    "scale",
    "add_const",
    "affine",
    "relu",
    "sigmoid",
    "dropout",
    "softmax_from_scores",
    "squared_euclidean",
    "euclidean",
    "pairwise_distance",
    "rowwise_distance",
    "mean_rows",
    "sum_all",
    "row",
    "repeat_row",
    "concat_cols",
    "stack_cols",
    "cross_entropy_mean",
    "glorot_uniform",
]


class Tensor:
    """Immutable dense array of float64 values."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal: adopt a freshly computed array without copying.
        t = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(t, "data", arr)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


_TapeRecord = tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], tuple]]

_TAPE_STACK = threading.local()


def _active_tape() -> "GradientTape | None":
    stack = getattr(_TAPE_STACK, "stack", None)
    return stack[-1] if stack else None


class GradientTape:
    """Ordered record of primitive operations for one forward pass.

    Tapes nest per thread; primitives record on the innermost active tape.
    Replaying the records in reverse yields exactly one gradient contribution
    per recorded use of each input tensor.
    """

    def __init__(self):
        self._records: list[_TapeRecord] = []

    def __enter__(self) -> "GradientTape":
        stack = getattr(_TAPE_STACK, "stack", None)
        if stack is None:
            stack = _TAPE_STACK.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.stack.pop()

    def record(
        self,
        output: Tensor,
        inputs: tuple[Tensor, ...],
        backward_fn: Callable[[np.ndarray], tuple],
    ) -> None:
        self._records.append((output, inputs, backward_fn))

    def gradients(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulated gradient of ``loss`` for every tensor the tape saw.

        Tensors that do not influence the loss are simply absent from the
        result; read through :func:`gradient_of` to get exact zeros for them.
        """
        if loss.shape != ():
            raise UsageError(f"loss must be a scalar tensor, got shape {loss.shape}")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones(())}
        for output, inputs, backward_fn in reversed(self._records):
            g = grads.get(output)
            if g is None:
                continue
            for tensor, contribution in zip(inputs, backward_fn(g)):
                if contribution is None:
                    continue
                seen = grads.get(tensor)
                grads[tensor] = contribution if seen is None else seen + contribution
        return grads


def backward(loss: Tensor, tape: GradientTape) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar loss with respect to everything on the tape."""
    return tape.gradients(loss)


def gradient_of(grads: dict[Tensor, np.ndarray], tensor: Tensor) -> np.ndarray:
    """Gradient for one tensor; exact zeros if it never influenced the loss."""
    g = grads.get(tensor)
    return np.zeros(tensor.shape) if g is None else np.asarray(g)


def _record(output: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape.record(output, inputs, backward_fn)
    return output


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a [m,n] + [n] bias broadcast."""
    if a.shape == b.shape:
        out = Tensor._wrap(a.data + b.data)

        def back(g):
            return g, g

    elif a.data.ndim == 2 and b.shape == (a.shape[1],):
        out = Tensor._wrap(a.data + b.data)

        def back(g):
            return g, g.sum(axis=0)

    else:
        raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _record(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes incompatible: {a.shape} - {b.shape}")
    out = Tensor._wrap(a.data - b.data)

    def back(g):
        return g, -g

    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; also broadcasts scalar*tensor and [m,1]*[m,n]."""
    if a.shape == b.shape:
        out = Tensor._wrap(a.data * b.data)

        def back(g):
            return g * b.data, g * a.data

    elif a.shape == ():
        out = Tensor._wrap(a.data * b.data)

        def back(g):
            return (g * b.data).sum(), g * a.data

    elif b.shape == ():
        out = Tensor._wrap(a.data * b.data)

        def back(g):
            return g * b.data, (g * a.data).sum()

    elif a.data.ndim == 2 and b.data.ndim == 2 and a.shape == (b.shape[0], 1):
        out = Tensor._wrap(a.data * b.data)

        def back(g):
            return (g * b.data).sum(axis=1, keepdims=True), g * a.data

    else:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}")
    return _record(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    out = Tensor._wrap(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor._wrap(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data + c)
    return _record(out, (a,), lambda g: (g,))


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise x @ weight + bias for a [batch, in] input."""
    if (
        x.data.ndim != 2
        or weight.data.ndim != 2
        or x.shape[1] != weight.shape[0]
        or bias.shape != (weight.shape[1],)
    ):
        raise DimensionError(
            f"affine shapes incompatible: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    return add(matmul(x, weight), bias)


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.data, 0.0))

    def back(g):
        # Subgradient at exactly 0 is defined as 0.
        return (g * (a.data > 0.0),)

    return _record(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic function, elementwise."""
    x = a.data.ravel()
    out_flat = np.empty_like(x)
    pos = x >= 0
    out_flat[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_flat[~pos] = ex / (1.0 + ex)
    # Keep the output strictly inside (0, 1) even where float64 saturates.
    np.clip(out_flat, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=out_flat)
    out = Tensor._wrap(out_flat.reshape(a.shape))

    def back(g):
        s = out.data
        return (g * s * (1.0 - s),)

    return _record(out, (a,), back)


def dropout(
    x: Tensor,
    keep_probability: float,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Inverted dropout: zero with probability 1-keep, scale survivors by 1/keep.

    Evaluation mode (or keep_probability == 1) is the identity, bit for bit.
    """
    if not 0.0 < keep_probability <= 1.0:
        raise ConfigurationError(f"keep_probability must be in (0, 1], got {keep_probability}")
    if not training or keep_probability == 1.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout with keep_probability < 1 requires an rng")
    mask = (rng.random(x.shape) < keep_probability) / keep_probability
    out = Tensor._wrap(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


def softmax_from_scores(scores: Tensor) -> Tensor:
    """Probabilities proportional to exp(score), max-subtracted for stability."""
    if scores.data.ndim != 1 or scores.data.size < 1:
        raise DimensionError(f"softmax_from_scores needs a non-empty vector, got {scores.shape}")
    z = scores.data - scores.data.max()
    e = np.exp(z)
    p = e / e.sum()
    out = Tensor._wrap(p)

    def back(g):
        return (p * (g - np.dot(g, p)),)

    return _record(out, (scores,), back)


def _check_vector_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"{op} needs equal-length vectors, got {a.shape} and {b.shape}")


def squared_euclidean(a: Tensor, b: Tensor) -> Tensor:
    _check_vector_pair(a, b, "squared_euclidean")
    diff = a.data - b.data
    out = Tensor._wrap(np.sum(diff * diff))

    def back(g):
        return 2.0 * g * diff, -2.0 * g * diff

    return _record(out, (a, b), back)


def euclidean(a: Tensor, b: Tensor) -> Tensor:
    _check_vector_pair(a, b, "euclidean")
    diff = a.data - b.data
    d = np.sqrt(np.sum(diff * diff))
    out = Tensor._wrap(d)

    def back(g):
        if d == 0.0:  # subgradient at coincident points
            z = np.zeros_like(diff)
            return z, z
        return g * diff / d, -g * diff / d

    return _record(out, (a, b), back)


def pairwise_distance(q: Tensor, p: Tensor, squared: bool = True) -> Tensor:
    """Distance matrix D[i, j] between rows of q [m,d] and rows of p [n,d]."""
    if q.data.ndim != 2 or p.data.ndim != 2 or q.shape[1] != p.shape[1]:
        raise DimensionError(f"pairwise_distance shapes incompatible: {q.shape} vs {p.shape}")
    diff = q.data[:, None, :] - p.data[None, :, :]
    dsq = np.einsum("ijk,ijk->ij", diff, diff)
    if squared:
        out = Tensor._wrap(dsq)

        def back(g):
            w = 2.0 * g[:, :, None] * diff
            return w.sum(axis=1), -w.sum(axis=0)

    else:
        d = np.sqrt(dsq)
        out = Tensor._wrap(d)

        def back(g):
            safe = np.where(d > 0.0, d, 1.0)
            coeff = np.where(d > 0.0, g / safe, 0.0)
            w = coeff[:, :, None] * diff
            return w.sum(axis=1), -w.sum(axis=0)

    return _record(out, (q, p), back)


def rowwise_distance(a: Tensor, b: Tensor, squared: bool = True) -> Tensor:
    """Per-row distance between matching rows of two [m,d] matrices."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise DimensionError(f"rowwise_distance shapes incompatible: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    dsq = np.einsum("ij,ij->i", diff, diff)
    if squared:
        out = Tensor._wrap(dsq)

        def back(g):
            w = 2.0 * g[:, None] * diff
            return w, -w

    else:
        d = np.sqrt(dsq)
        out = Tensor._wrap(d)

        def back(g):
            coeff = np.where(d > 0.0, g / np.where(d > 0.0, d, 1.0), 0.0)
            w = coeff[:, None] * diff
            return w, -w

    return _record(out, (a, b), back)


def mean_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise UsageError(f"mean_rows needs a non-empty matrix, got shape {x.shape}")
    m = x.shape[0]
    out = Tensor._wrap(x.data.mean(axis=0))
    return _record(out, (x,), lambda g: (np.tile(g / m, (m, 1)),))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._wrap(x.data.sum())
    return _record(out, (x,), lambda g: (np.full(x.shape, g),))


def row(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"row needs a matrix, got shape {x.shape}")
    out = Tensor._wrap(x.data[i].copy())

    def back(g):
        full = np.zeros(x.shape)
        full[i] = g
        return (full,)

    return _record(out, (x,), back)


def repeat_row(v: Tensor, m: int) -> Tensor:
    if v.data.ndim != 1:
        raise DimensionError(f"repeat_row needs a vector, got shape {v.shape}")
    out = Tensor._wrap(np.tile(v.data, (m, 1)))
    return _record(out, (v,), lambda g: (g.sum(axis=0),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols shapes incompatible: {a.shape} and {b.shape}")
    out = Tensor._wrap(np.hstack([a.data, b.data]))
    k = a.shape[1]
    return _record(out, (a, b), lambda g: (g[:, :k], g[:, k:]))


def stack_cols(columns: Sequence[Tensor]) -> Tensor:
    if not columns or any(c.data.ndim != 1 for c in columns):
        raise DimensionError("stack_cols needs one or more vectors")
    out = Tensor._wrap(np.stack([c.data for c in columns], axis=1))

    def back(g):
        return tuple(g[:, j] for j in range(len(columns)))

    return _record(out, tuple(columns), back)


def cross_entropy_mean(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax-probability of the labelled class per row."""
    if scores.data.ndim != 2:
        raise DimensionError(f"cross_entropy_mean needs a score matrix, got {scores.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    m, n = scores.shape
    if labels.shape != (m,):
        raise UsageError(f"labels must have shape ({m},), got {labels.shape}")
    if m and (labels.min() < 0 or labels.max() >= n):
        raise UsageError(f"labels must index the {n} score columns")
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + scores.data.max(axis=1)
    picked = scores.data[np.arange(m), labels]
    out = Tensor._wrap(np.mean(lse - picked))

    def back(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        d = p * (g / m)
        d[np.arange(m), labels] -= g / m
        return (d,)

    return _record(out, (scores,), back)


# ---------------------------------------------------------------------------
# parameters and optimisation


@dataclass
class Parameter:
    """A trainable tensor paired with its momentum buffer."""

    value: Tensor
    velocity: Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = Tensor._wrap(np.zeros(self.value.shape))
        elif self.velocity.shape != self.value.shape:
            raise DimensionError(
                f"velocity shape {self.velocity.shape} != value shape {self.value.shape}"
            )


def sgd_momentum_step(
    params: Iterable[Parameter],
    grads: dict[Tensor, np.ndarray],
    learning_rate: float,
    momentum: float,
) -> None:
    """v <- momentum*v + g; p <- p - learning_rate*v, for each parameter."""
    if learning_rate <= 0.0:
        raise ConfigurationError(f"learning_rate must be positive, got {learning_rate}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
    for p in params:
        g = gradient_of(grads, p.value)
        v = momentum * p.velocity.data + g
        p.value = Tensor._wrap(p.value.data - learning_rate * v)
        p.velocity = Tensor._wrap(v)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-limit, limit) weights with limit = sqrt(6/(fan_in+fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def finite_difference_check(
    fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5
) -> float:
    """Max relative error between central differences of fn and its tape gradient.

    Per coordinate i the error is |fd_i - analytic_i| / (|analytic_i| + 1e-8);
    the returned value is the maximum over coordinates.
    """
    if step <= 0.0:
        raise ConfigurationError(f"step must be positive, got {step}")
    with GradientTape() as tape:
        out = fn(x)
    if out.shape != ():
        raise UsageError(f"fn must return a scalar tensor, got shape {out.shape}")
    analytic = gradient_of(tape.gradients(out), x)
    base = x.data
    fd = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped.flat[i] += step
        f_plus = fn(Tensor._wrap(bumped)).item()
        bumped = base.copy()
        bumped.flat[i] -= step
        f_minus = fn(Tensor._wrap(bumped)).item()
        fd.flat[i] = (f_plus - f_minus) / (2.0 * step)
    rel = np.abs(fd - analytic) / (np.abs(analytic) + 1e-8)
    return float(rel.max()) if rel.size else 0.0
