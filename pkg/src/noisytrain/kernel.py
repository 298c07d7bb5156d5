"""Dense 2-D float64 arrays with reverse-mode gradients and SGD.

Every quantity the training code differentiates flows through the
operations in this module.  A ``GradientTape`` records each primitive
applied to a watched parameter (or to anything derived from one) and
replays the records in exact reverse order on ``backward``.

Reductions rely on numpy's fixed reduction order, so identical inputs
produce bit-identical outputs across runs.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Matrix",
    "GradientTape",
    "OptimizerState",
    "ShapeMismatchError",
    "DegenerateEmbeddingError",
    "TapeUsageError",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "relu",
    "log",
    "exp",
    "sum_all",
    "sum_rows",
    "concat_rows",
    "diag_part",
    "softmax_rows",
    "log_softmax_rows",
    "lse_offdiag_rows",
    "l2_normalize_rows",
    "backward",
    "sgd_step",
]


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateEmbeddingError(ValueError):
    """A row with zero norm cannot be normalized (collapsed projection)."""


class TapeUsageError(RuntimeError):
    """The gradient tape was used outside its single forward/backward cycle."""


class Matrix:
    """A rows x cols matrix of finite float64 values, stored row-major.

    Value semantics: operations return new matrices and never alias the
    inputs.  Hashing/equality are by identity so matrices can key the
    gradient dictionaries returned by :func:`backward`.
    """

    __slots__ = ("data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"expected 1-D or 2-D input, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix values must be finite")
        self.data = arr

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return _wrap(np.zeros((rows, cols)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def copy(self) -> "Matrix":
        return _wrap(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def _wrap(arr: np.ndarray) -> Matrix:
    """Build a Matrix around an array we already own (no copy, no checks)."""
    m = Matrix.__new__(Matrix)
    m.data = np.ascontiguousarray(arr, dtype=np.float64)
    return m


class GradientTape:
    """Ordered record of primitive operations plus gradient accumulators.

    Single-writer: one forward recording followed by one backward replay.
    The tape holds strong references to every tracked matrix, so identity
    keys stay valid for its whole lifetime.
    """

    def __init__(self):
        self._records: list[tuple[Matrix, Callable[[np.ndarray], Iterable[tuple[Matrix, np.ndarray]]]]] = []
        self._tracked: dict[int, Matrix] = {}
        self._watched: list[Matrix] = []
        self._consumed = False

    def watch(self, m: Matrix) -> None:
        if self._consumed:
            raise TapeUsageError("cannot watch parameters on a consumed tape")
        if id(m) not in self._tracked:
            self._tracked[id(m)] = m
            self._watched.append(m)

    def tracks(self, m: Matrix) -> bool:
        return id(m) in self._tracked

    def _record(self, out: Matrix, backward_fn) -> None:
        self._tracked[id(out)] = out
        self._records.append((out, backward_fn))

    @property
    def num_records(self) -> int:
        return len(self._records)


def _maybe_record(tape: GradientTape | None, inputs: tuple[Matrix, ...], out: Matrix, backward_fn) -> Matrix:
    if tape is not None and any(tape.tracks(x) for x in inputs):
        tape._record(out, backward_fn)
    return out


def backward(tape: GradientTape, loss: Matrix) -> dict[Matrix, Matrix]:
    """Replay the tape in reverse and return gradients for watched parameters.

    ``loss`` must be the tracked 1x1 result of the recorded forward pass.
    The tape is consumed: a second backward raises ``TapeUsageError``.
    """
    if tape._consumed:
        raise TapeUsageError("tape already consumed by a previous backward")
    if not tape._records:
        raise TapeUsageError("backward on an empty tape: no operations were recorded")
    if loss.shape != (1, 1):
        raise ShapeMismatchError(f"loss must be 1x1, got {loss.shape}")
    if not tape.tracks(loss):
        raise TapeUsageError("loss was not produced by operations recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for out, backward_fn in reversed(tape._records):
        g = grads.get(id(out))
        if g is None:
            continue
        for inp, contrib in backward_fn(g):
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = contrib.copy()
            else:
                acc += contrib
    tape._consumed = True

    out_grads: dict[Matrix, Matrix] = {}
    for p in tape._watched:
        g = grads.get(id(p))
        out_grads[p] = _wrap(g) if g is not None else Matrix.zeros(p.rows, p.cols)
    return out_grads


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Matrix, b: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Standard matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeMismatchError(f"matmul shapes do not align: {a.shape} @ {b.shape}")
    out = _wrap(a.data @ b.data)

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g @ b.data.T))
        if tape.tracks(b):
            contribs.append((b, a.data.T @ g))
        return contribs

    return _maybe_record(tape, (a, b), out, bwd)


def transpose(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    out = _wrap(a.data.T.copy())

    def bwd(g):
        return [(a, g.T)]

    return _maybe_record(tape, (a,), out, bwd)


def _same_shape(a: Matrix, b: Matrix, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op} shapes differ: {a.shape} vs {b.shape}")


def add(a: Matrix, b: Matrix, tape: GradientTape | None = None) -> Matrix:
    _same_shape(a, b, "add")
    out = _wrap(a.data + b.data)

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g))
        if tape.tracks(b):
            contribs.append((b, g))
        return contribs

    return _maybe_record(tape, (a, b), out, bwd)


def sub(a: Matrix, b: Matrix, tape: GradientTape | None = None) -> Matrix:
    _same_shape(a, b, "sub")
    out = _wrap(a.data - b.data)

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g))
        if tape.tracks(b):
            contribs.append((b, -g))
        return contribs

    return _maybe_record(tape, (a, b), out, bwd)


def mul(a: Matrix, b: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Elementwise product."""
    _same_shape(a, b, "mul")
    out = _wrap(a.data * b.data)

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g * b.data))
        if tape.tracks(b):
            contribs.append((b, g * a.data))
        return contribs

    return _maybe_record(tape, (a, b), out, bwd)


def scale(a: Matrix, c: float, tape: GradientTape | None = None) -> Matrix:
    out = _wrap(a.data * c)

    def bwd(g):
        return [(a, g * c)]

    return _maybe_record(tape, (a,), out, bwd)


def add_row(a: Matrix, bias: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Add a 1 x cols bias row to every row of ``a``."""
    if bias.rows != 1 or bias.cols != a.cols:
        raise ShapeMismatchError(f"add_row needs a 1x{a.cols} bias, got {bias.shape}")
    out = _wrap(a.data + bias.data)

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g))
        if tape.tracks(bias):
            contribs.append((bias, g.sum(axis=0, keepdims=True)))
        return contribs

    return _maybe_record(tape, (a, bias), out, bwd)


def relu(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    out = _wrap(np.maximum(a.data, 0.0))
    mask = a.data > 0.0

    def bwd(g):
        return [(a, g * mask)]

    return _maybe_record(tape, (a,), out, bwd)


def log(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Natural log.  Base-2 values are obtained by scaling with 1/ln 2."""
    out = _wrap(np.log(a.data))

    def bwd(g):
        return [(a, g / a.data)]

    return _maybe_record(tape, (a,), out, bwd)


def exp(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    out = _wrap(np.exp(a.data))

    def bwd(g):
        return [(a, g * out.data)]

    return _maybe_record(tape, (a,), out, bwd)


def sum_all(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    out = _wrap(np.array([[a.data.sum()]]))

    def bwd(g):
        return [(a, np.full(a.shape, g[0, 0]))]

    return _maybe_record(tape, (a,), out, bwd)


def sum_rows(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Sum over columns, producing a rows x 1 matrix."""
    out = _wrap(a.data.sum(axis=1, keepdims=True))

    def bwd(g):
        return [(a, np.broadcast_to(g, a.shape).copy())]

    return _maybe_record(tape, (a,), out, bwd)


def concat_rows(a: Matrix, b: Matrix, tape: GradientTape | None = None) -> Matrix:
    if a.cols != b.cols:
        raise ShapeMismatchError(f"concat_rows column counts differ: {a.shape} vs {b.shape}")
    out = _wrap(np.vstack([a.data, b.data]))
    na = a.rows

    def bwd(g):
        contribs = []
        if tape.tracks(a):
            contribs.append((a, g[:na]))
        if tape.tracks(b):
            contribs.append((b, g[na:]))
        return contribs

    return _maybe_record(tape, (a, b), out, bwd)


def diag_part(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Main diagonal of a square matrix as an n x 1 column."""
    if a.rows != a.cols:
        raise ShapeMismatchError(f"diag_part needs a square matrix, got {a.shape}")
    out = _wrap(np.diag(a.data).reshape(-1, 1).copy())

    def bwd(g):
        full = np.zeros(a.shape)
        np.fill_diagonal(full, g[:, 0])
        return [(a, full)]

    return _maybe_record(tape, (a,), out, bwd)


def softmax_rows(m: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Row-wise softmax with max-subtraction; each row sums to 1."""
    if m.cols < 1:
        raise ShapeMismatchError("softmax_rows needs at least one column")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = _wrap(e / e.sum(axis=1, keepdims=True))

    def bwd(g):
        s = out.data
        dot = (g * s).sum(axis=1, keepdims=True)
        return [(m, s * (g - dot))]

    return _maybe_record(tape, (m,), out, bwd)


def log_softmax_rows(m: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Row-wise log softmax, numerically stable."""
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = _wrap(shifted - lse)

    def bwd(g):
        s = np.exp(out.data)
        return [(m, g - s * g.sum(axis=1, keepdims=True))]

    return _maybe_record(tape, (m,), out, bwd)


def lse_offdiag_rows(a: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Row-wise log-sum-exp over the off-diagonal entries of a square matrix.

    Max-subtraction keeps the reduction stable and makes the single-term
    case (a 2x2 input) exact.  Used for pairwise-similarity denominators.
    """
    if a.rows != a.cols:
        raise ShapeMismatchError(f"lse_offdiag_rows needs a square matrix, got {a.shape}")
    if a.rows < 2:
        raise ShapeMismatchError("lse_offdiag_rows needs at least 2 rows")
    masked = a.data.copy()
    np.fill_diagonal(masked, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - m)
    np.fill_diagonal(e, 0.0)
    out = _wrap(m + np.log(e.sum(axis=1, keepdims=True)))

    def bwd(g):
        w = np.exp(masked - out.data)
        np.fill_diagonal(w, 0.0)
        return [(a, g * w)]

    return _maybe_record(tape, (a,), out, bwd)


def l2_normalize_rows(m: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Rescale every row to unit Euclidean norm.

    Raises ``DegenerateEmbeddingError`` on a zero-norm row, which signals
    a collapsed projection rather than a recoverable condition.
    """
    norms = np.sqrt((m.data * m.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise DegenerateEmbeddingError(f"row {bad} has zero norm and cannot be normalized")
    out = _wrap(m.data / norms)

    def bwd(g):
        y = out.data
        dot = (g * y).sum(axis=1, keepdims=True)
        return [(m, (g - y * dot) / norms)]

    return _maybe_record(tape, (m,), out, bwd)


# ---------------------------------------------------------------------------
# optimizer


class OptimizerState:
    """SGD with momentum and coupled weight decay.

    The update is the classical form: weight decay is added to the raw
    gradient before the momentum accumulation,

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    Switching to decoupled decay would mean moving the decay term out of
    the velocity update and into the parameter step.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity: dict[str, np.ndarray] = {}


def sgd_step(state: OptimizerState, params: dict[str, Matrix], grads: dict[str, Matrix]) -> dict[str, Matrix]:
    """One SGD-with-momentum step; returns the updated parameter dict."""
    updated: dict[str, Matrix] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros(p.shape)
        v = state.momentum * v + g.data + state.weight_decay * p.data
        state.velocity[name] = v
        updated[name] = _wrap(p.data - state.learning_rate * v)
    return updated
