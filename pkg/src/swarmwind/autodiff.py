"""Minimal reverse-mode autodiff over dense f64 arrays.

Forward passes record primitive operations onto an explicit tape; the
backward walk replays them in reverse, accumulating vector-Jacobian
products.  One tape per forward build, confined to a single thread.
Includes bias-corrected Adam, global-norm gradient clipping, a
reduce-on-plateau learning-rate schedule, and a two-file checkpoint
format (JSON manifest plus raw little-endian f64 blob).
"""

import json
import threading
from pathlib import Path

import numpy as np


class AutodiffError(ValueError):
    pass


_TLS = threading.local()


def _stack():
    if not hasattr(_TLS, "stack"):
        _TLS.stack = []
    return _TLS.stack


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _as_tensor(-1.0)))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, _as_tensor(-1.0)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Recorded forward pass: reverse iteration drives backpropagation."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        if popped is not self:
            raise AutodiffError("tape stack corrupted")
        return False


def _record(out: Tensor, pulls) -> Tensor:
    """pulls: list of (input tensor, vjp callable) pairs."""
    stack = _stack()
    if stack and any(t.requires_grad for t, _ in pulls):
        out.requires_grad = True
        tape = stack[-1]
        tape.nodes.append((out, pulls))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from loss."""
    if loss.data.size != 1:
        raise AutodiffError("backward needs a scalar loss")
    tape = loss._tape
    if tape is None:
        raise AutodiffError("loss was not recorded on a tape")
    flowing = {id(loss): np.ones_like(loss.data)}
    for out, pulls in reversed(tape.nodes):
        g = flowing.pop(id(out), None)
        if g is None:
            continue
        for inp, vjp in pulls:
            if not inp.requires_grad:
                continue
            contrib = vjp(g)
            if inp._tape is tape:
                key = id(inp)
                flowing[key] = flowing[key] + contrib if key in flowing else contrib
            else:
                inp.grad = contrib if inp.grad is None else inp.grad + contrib


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise AutodiffError("matmul inner dimensions disagree")
    out = Tensor(a.data @ b.data)
    return _record(out, [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)])


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, [(x, lambda g: g * (1.0 - y * y))])


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.maximum(x.data, 0.0))  # maximum keeps nan visible
    return _record(out, [(x, lambda g: g * mask)])


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)
    return _record(out, [(x, lambda g: g * y * (1.0 - y))])


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    pulls = []
    start = 0
    for p in parts:
        width = p.data.shape[axis]
        key = [slice(None)] * out.data.ndim
        key[axis] = slice(start, start + width)
        key = tuple(key)
        pulls.append((p, lambda g, key=key: g[key]))
        start += width
    return _record(out, pulls)


def slice_(x: Tensor, key) -> Tensor:
    out = Tensor(x.data[key])

    def vjp(g, key=key, shape=x.data.shape):
        z = np.zeros(shape)
        z[key] = g
        return z

    return _record(out, [(x, vjp)])


def sum_(x: Tensor, axis=None) -> Tensor:
    out = Tensor(x.data.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return np.full(x.data.shape, g)
        return np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy()

    return _record(out, [(x, vjp)])


def mean_(x: Tensor, axis=None) -> Tensor:
    out = Tensor(x.data.mean(axis=axis))
    count = x.data.size if axis is None else x.data.shape[axis]

    def vjp(g):
        if axis is None:
            return np.full(x.data.shape, g / count)
        return np.broadcast_to(np.expand_dims(g, axis), x.data.shape) / count

    return _record(out, [(x, vjp)])


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)
    return _record(out, [(x, lambda g: g * 2.0 * x.data)])


def sin(x: Tensor) -> Tensor:
    out = Tensor(np.sin(x.data))
    return _record(out, [(x, lambda g: g * np.cos(x.data))])


def cos(x: Tensor) -> Tensor:
    out = Tensor(np.cos(x.data))
    return _record(out, [(x, lambda g: g * -np.sin(x.data))])


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    if not max_norm > 0:
        raise AutodiffError("max_norm must be positive")
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= scale
    return scale


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise AutodiffError("parameter missing gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class ReduceOnPlateau:
    """Halve the optimizer's learning rate after `patience` stale epochs."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5,
                 min_lr: float = 0.0):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def update(self, metric: float) -> bool:
        """Feed one validation metric; True if the rate was just reduced."""
        if metric < self.best:
            self.best = metric
            self.stale = 0
            return False
        self.stale += 1
        if self.stale > self.patience:
            self.optimizer.lr = max(self.min_lr, self.optimizer.lr * self.factor)
            self.stale = 0
            return True
        return False


def save_arrays(path, arrays: dict, meta: dict) -> None:
    """Checkpoint: JSON manifest at path, f64 little-endian blob alongside."""
    path = Path(path)
    blob_path = path.with_suffix(path.suffix + ".bin") if path.suffix != ".json" \
        else path.with_suffix(".bin")
    manifest = {"meta": meta, "blob": blob_path.name, "arrays": []}
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        manifest["arrays"].append(
            {"name": name, "shape": list(arr.shape), "offset": offset}
        )
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    path.write_text(json.dumps(manifest, indent=1))
    blob_path.write_bytes(b"".join(chunks))


def load_arrays(path):
    """Inverse of save_arrays: returns ({name: array}, meta)."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    blob = (path.parent / manifest["blob"]).read_bytes()
    total = sum(int(np.prod(e["shape"])) for e in manifest["arrays"])
    if len(blob) != total * 8:
        raise AutodiffError("checkpoint blob length does not match manifest")
    flat = np.frombuffer(blob, dtype="<f8")
    arrays = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"]))
        start = entry["offset"]
        arrays[entry["name"]] = (
            flat[start:start + size].reshape(entry["shape"]).astype(np.float64)
        )
    return arrays, manifest["meta"]
