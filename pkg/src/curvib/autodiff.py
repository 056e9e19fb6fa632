"""Dense 2-D tensors with reverse-mode differentiation on an explicit tape.

Everything is float64 and strictly two-dimensional (scalars are 1x1). Each
op appends the result tensor to its tape; backward walks the tape in
reverse, which is a valid reverse topological order because inputs always
precede results. Any op whose output contains NaN/Inf raises immediately
rather than letting the poison propagate.
"""

from __future__ import annotations

import struct
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced (or was fed) NaN or Inf."""


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


class Parameter:
    """A named trainable value with an accumulated gradient of equal shape."""

    def __init__(self, name: str, value) -> None:
        self.name = name
        self.value = _as_2d(value).copy()
        self.gradient = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.gradient[:] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tensor:
    """A 2-D value recorded on a tape."""

    __slots__ = ("data", "tape", "requires_grad", "_grad", "_backward", "_op")

    def __init__(self, data: np.ndarray, tape: "Tape", requires_grad: bool,
                 backward: Callable[[np.ndarray], None] | None = None, op: str = "leaf"):
        self.data = data
        self.tape = tape
        self.requires_grad = requires_grad
        self._grad: np.ndarray | None = None
        self._backward = backward
        self._op = op
        tape._nodes.append(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a 1x1 tensor")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r})"

    # -- operator sugar -------------------------------------------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return subtract(self, self._lift(other))

    def __rsub__(self, other):
        return subtract(self._lift(other), self)

    def __mul__(self, other):
        return elementwise_multiply(self, self._lift(other))

    def __rmul__(self, other):
        return elementwise_multiply(self._lift(other), self)

    def __truediv__(self, other):
        return divide(self, self._lift(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._watched: dict[int, tuple[Parameter, Tensor]] = {}

    def constant(self, data) -> Tensor:
        arr = _as_2d(data)
        _check_finite(arr, "constant")
        return Tensor(arr, self, requires_grad=False, op="const")

    def watch(self, param: Parameter) -> Tensor:
        """Leaf tensor tracking `param`; gradients flow back into it."""
        key = id(param)
        if key in self._watched:
            return self._watched[key][1]
        leaf = Tensor(param.value, self, requires_grad=True, op=f"param:{param.name}")
        self._watched[key] = (param, leaf)
        return leaf

    def backward(self, loss: Tensor) -> None:
        """Populate Parameter.gradient with d(loss)/d(param) for every
        watched parameter; parameters not reachable from `loss` keep their
        current (typically zero) gradient."""
        if loss.tape is not self:
            raise ValueError("loss recorded on a different tape")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be scalar (1x1), got {loss.shape}")
        loss._grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node._grad is None or node._backward is None:
                continue
            node._backward(node._grad)
        for param, leaf in self._watched.values():
            if leaf._grad is not None:
                param.gradient += leaf._grad


def _binary(op: str, a: Tensor, b: Tensor, out_data: np.ndarray,
            da: Callable[[np.ndarray], np.ndarray] | None,
            db: Callable[[np.ndarray], np.ndarray] | None) -> Tensor:
    if a.tape is not b.tape:
        raise ValueError(f"{op}: operands on different tapes")
    _check_finite(out_data, op)
    req = a.requires_grad or b.requires_grad

    def backward(g: np.ndarray) -> None:
        if a.requires_grad and da is not None:
            a._accum(_unbroadcast(da(g), a.shape))
        if b.requires_grad and db is not None:
            b._accum(_unbroadcast(db(g), b.shape))

    return Tensor(out_data, a.tape, req, backward if req else None, op)


def _unary(op: str, a: Tensor, out_data: np.ndarray,
           da: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    _check_finite(out_data, op)
    req = a.requires_grad

    def backward(g: np.ndarray) -> None:
        a._accum(da(g))

    return Tensor(out_data, a.tape, req, backward if req else None, op)


def _broadcastable(sa: tuple[int, int], sb: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def _require_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if not _broadcastable(a.shape, b.shape):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- primitives ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return _binary("matmul", a, b, out,
                   lambda g: g @ b.data.T,
                   lambda g: a.data.T @ g)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_broadcast("add", a, b)
    return _binary("add", a, b, a.data + b.data, lambda g: g, lambda g: g)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _require_broadcast("subtract", a, b)
    return _binary("subtract", a, b, a.data - b.data, lambda g: g, lambda g: -g)


def elementwise_multiply(a: Tensor, b: Tensor) -> Tensor:
    _require_broadcast("multiply", a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data
    return _binary("multiply", a, b, out,
                   lambda g: g * b.data,
                   lambda g: g * a.data)


def divide(a: Tensor, b: Tensor) -> Tensor:
    _require_broadcast("divide", a, b)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("divide: zero denominator")
    return _binary("divide", a, b, a.data / b.data,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _unary("scale", a, a.data * c, lambda g: g * c)


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _unary("add_scalar", a, a.data + c, lambda g: g)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _unary("relu", a, np.where(mask, a.data, 0.0), lambda g: g * mask)


def sigmoid(a: Tensor) -> Tensor:
    # branch form: finite for |x| up to ~7e2 without overflow warnings
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _unary("sigmoid", a, out, lambda g: g * out * (1.0 - out))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return _unary("softplus", a, out, lambda g: g * sig)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _unary("exp", a, out, lambda g: g * out)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: non-positive input")
    return _unary("log", a, np.log(a.data), lambda g: g / a.data)


def absolute_value(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    return _unary("abs", a, np.abs(a.data), lambda g: g * np.sign(a.data))


def square(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = a.data * a.data
    return _unary("square", a, out, lambda g: g * 2.0 * a.data)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("sqrt: non-positive input")
    out = np.sqrt(a.data)
    return _unary("sqrt", a, out, lambda g: g * 0.5 / out)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _unary("clamp", a, np.clip(a.data, lo, hi), lambda g: g * mask)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data >= lo
    return _unary("clamp_min", a, np.maximum(a.data, lo), lambda g: g * mask)


def row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def da(g: np.ndarray) -> np.ndarray:
        return out * (g - (g * out).sum(axis=1, keepdims=True))

    return _unary("row_softmax", a, out, da)


def log_row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def da(g: np.ndarray) -> np.ndarray:
        return g - soft * g.sum(axis=1, keepdims=True)

    return _unary("log_row_softmax", a, out, da)


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows: index out of range")
    out = a.data[idx]

    def da(g: np.ndarray) -> np.ndarray:
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return buf

    return _unary("gather_rows", a, out, da)


def scatter_add_rows(a: Tensor, index, out_rows: int) -> Tensor:
    """Rows of `a` accumulated into a fresh (out_rows, cols) tensor."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise ValueError("scatter_add_rows: need one index per input row")
    if idx.size and (idx.min() < 0 or idx.max() >= out_rows):
        raise IndexError("scatter_add_rows: index out of range")
    out = np.zeros((out_rows, a.shape[1]))
    np.add.at(out, idx, a.data)
    return _unary("scatter_add", a, out, lambda g: g[idx])


def row_sum(a: Tensor) -> Tensor:
    out = a.data.sum(axis=1, keepdims=True)
    return _unary("row_sum", a, out, lambda g: np.broadcast_to(g, a.shape).copy())


def sum_all(a: Tensor) -> Tensor:
    out = np.array([[a.data.sum()]])
    return _unary("sum_all", a, out, lambda g: np.full(a.shape, g[0, 0]))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array([[a.data.mean()]])
    return _unary("mean_all", a, out, lambda g: np.full(a.shape, g[0, 0] / n))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _unary("dropout", a, a.data * mask, lambda g: g * mask)


def masked_mean(a: Tensor, index) -> Tensor:
    """Mean of the rows selected by `index`; a must be a column vector."""
    if a.shape[1] != 1:
        raise ValueError("masked_mean expects an (n, 1) tensor")
    return mean_all(gather_rows(a, index))


def sparse_matmul(mass, x: Tensor) -> Tensor:
    """Product of a constant sparse row-stochastic matrix with x.

    `mass` is a graph.MassMatrix (COO arrays row/col/val); gradients flow
    into x through the transpose action.
    """
    if mass.node_count != x.shape[0]:
        raise ValueError("sparse_matmul: node count mismatch")
    out = np.zeros((mass.node_count, x.shape[1]))
    np.add.at(out, mass.row, mass.val[:, None] * x.data[mass.col])

    def dx(g: np.ndarray) -> np.ndarray:
        buf = np.zeros_like(x.data)
        np.add.at(buf, mass.col, mass.val[:, None] * g[mass.row])
        return buf

    return _unary("sparse_matmul", x, out, dx)


# -- gradient checking ----------------------------------------------------


def grad_check(build: Callable[[Tape], Tensor], params: Sequence[Parameter],
               step: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    `build` must construct the scalar loss on the tape it is given,
    watching the parameters it uses; it must be deterministic so the two
    perturbed evaluations differ only through the perturbed entry.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = build(tape)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: non-finite loss")
    tape.backward(loss)
    analytic = [p.gradient.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = build(Tape()).item()
            flat[k] = orig - step
            down = build(Tape()).item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            a = grad.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# -- parameter checkpoint format ------------------------------------------
# header: magic "CVPK", version u16, count u32
# per entry: name_len u16, name utf-8, rows u32, cols u32
# then all values in entry order, row-major float64 little-endian

_MAGIC = b"CVPK"
_VERSION = 1


def save_parameters(params: Sequence[Parameter], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(params)))
        for p in params:
            raw = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", p.shape[0], p.shape[1]))
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def read_parameter_file(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            entries.append((name, rows, cols))
        out = {}
        for name, rows, cols in entries:
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise ValueError(f"{path}: truncated checkpoint at {name}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()
    return out


def load_parameters(params: Sequence[Parameter], path) -> None:
    """Load values into existing parameters, matched by name; exact round-trip."""
    stored = read_parameter_file(path)
    for p in params:
        if p.name not in stored:
            raise KeyError(f"checkpoint missing parameter {p.name!r}")
        value = stored[p.name]
        if value.shape != p.shape:
            raise ValueError(f"shape mismatch for {p.name!r}: "
                             f"{value.shape} vs {p.shape}")
        p.value[:] = value
