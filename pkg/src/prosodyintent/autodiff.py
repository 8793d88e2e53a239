"""Reverse-mode automatic differentiation over dense numpy tensors.

Define-by-run: every operation records its inputs and a backward closure;
the graph is rebuilt on each forward pass, which keeps variable-length
sequences trivial. Storage is float32 by default (float64 is preserved
when given, which is what the gradient checker relies on); reductions
accumulate in float64 regardless.

Any op producing a NaN/Inf raises immediately instead of propagating.
"""

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording; forwards run plain and cannot backward."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(arr, origin):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {origin}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, name or "tensor creation")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        """Constant view of this tensor's value, cut out of the graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t.name = self.name
        t._parents = ()
        t._backward = None
        return t

    def _accumulate(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or g is self.data else g
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _make(data, parents, backward, origin):
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data)
    _check_finite(arr, origin)
    out.data = arr
    out.grad = None
    out.name = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))
    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))
    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))
    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)
    return _make(a.data * c, (a,), backward, "scale")


def add_n(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))
    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            a._accumulate(full)
    return _make(a.data[index], (a,), backward, "narrow")


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    split = a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.take(g, range(split), axis=axis))
        if b.requires_grad:
            b._accumulate(np.take(g, range(split, g.shape[axis]), axis=axis))
    return _make(np.concatenate([a.data, b.data], axis=axis), (a, b), backward, "concat")


def stack_rows(rows) -> Tensor:
    rows = list(rows)
    data = np.concatenate([r.data for r in rows], axis=0)

    def backward(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accumulate(g[i:i + 1])
    return _make(data, tuple(rows), backward, "stack_rows")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))
    return _make(y, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))
    return _make(y, (a,), backward, "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))."""
    x = a.data
    inner = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    y = 0.5 * x * (1.0 + inner)

    def backward(g):
        if a.requires_grad:
            d = 0.5 * (1.0 + inner) + 0.5 * x * (1.0 - inner**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
            a._accumulate(g * d)
    return _make(y.astype(x.dtype), (a,), backward, "gelu")


def softmax_over_time(a: Tensor, mask=None) -> Tensor:
    """Shift-stabilized softmax over a length-T vector.

    mask (optional, bool [T]) excludes frames entirely: their output is
    exactly 0 and the remaining weights sum to 1.
    """
    x = a.data.astype(np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"softmax_over_time expects a non-empty 1-D tensor, got {a.data.shape}")
    if mask is None:
        z = x - x.max()
        e = np.exp(z)
        y = e / e.sum()
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError("mask shape mismatch")
        if not mask.any():
            raise ValueError("softmax mask excludes every frame")
        y = np.zeros_like(x)
        za = x[mask] - x[mask].max()
        ea = np.exp(za)
        y[mask] = ea / ea.sum()

    def backward(g):
        if a.requires_grad:
            g64 = g.astype(np.float64)
            dot = float((y * g64).sum())
            a._accumulate((y * (g64 - dot)).astype(a.data.dtype))
    return _make(y.astype(a.data.dtype), (a,), backward, "softmax_over_time")


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], log-sum-exp stabilized; scalar output."""
    k = logits.data.shape[0]
    if logits.data.ndim != 1:
        raise ValueError(f"cross_entropy expects 1-D logits, got {logits.data.shape}")
    if not (0 <= label < k):
        raise ValueError(f"label {label} out of range for {k} classes")
    z = logits.data.astype(np.float64)
    z = z - z.max()
    lse = np.log(np.exp(z).sum())
    loss = np.asarray(lse - z[label], dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(z - lse)
            p[label] -= 1.0
            logits._accumulate(float(g) * p.astype(logits.data.dtype))
    return _make(loss, (logits,), backward, "cross_entropy")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared element difference; scalar output."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = d.size
    loss = np.asarray((d * d).sum() / n, dtype=a.data.dtype)

    def backward(g):
        coeff = 2.0 * float(g) / n
        if a.requires_grad:
            a._accumulate((coeff * d).astype(a.data.dtype))
        if b.requires_grad:
            b._accumulate((-coeff * d).astype(b.data.dtype))
    return _make(loss, (a, b), backward, "mse")


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """1-D convolution over [T, C_in] with 'same' zero padding.

    kernel is [K, C_in, C_out] with K odd; output is [ceil(T/stride), C_out].
    """
    k, c_in, c_out = kernel.data.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size {k} must be odd")
    if x.data.ndim != 2 or x.data.shape[1] != c_in:
        raise ValueError(f"conv input {x.data.shape} does not match kernel C_in={c_in}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    t = x.data.shape[0]
    pad = k // 2
    t_out = (t + stride - 1) // stride

    x_pad = np.zeros((t + 2 * pad, c_in), dtype=x.data.dtype)
    x_pad[pad:pad + t] = x.data
    idx = (stride * np.arange(t_out))[:, None] + np.arange(k)[None, :]
    cols = x_pad[idx].reshape(t_out, k * c_in)
    w2 = kernel.data.reshape(k * c_in, c_out)
    out = cols @ w2 + bias.data[None, :]

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if kernel.requires_grad:
            kernel._accumulate((cols.T @ g).reshape(k, c_in, c_out))
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(t_out, k, c_in)
            gx_pad = np.zeros_like(x_pad)
            np.add.at(gx_pad, idx, gcols)
            x._accumulate(gx_pad[pad:pad + t])
    return _make(out, (x, kernel, bias), backward, "conv1d_same")


def avg_pool_pairs(x: Tensor) -> Tensor:
    """Mean of consecutive row pairs (window 2, stride 2); odd tail dropped."""
    t = x.data.shape[0]
    t2 = t // 2
    data = 0.5 * (x.data[0:2 * t2:2] + x.data[1:2 * t2:2])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[0:2 * t2:2] = 0.5 * g
            gx[1:2 * t2:2] = 0.5 * g
            x._accumulate(gx)
    return _make(data, (x,), backward, "avg_pool_pairs")


def lstm_forward(x: Tensor, layer_params, hidden: int) -> Tensor:
    """Stacked LSTM over [T, C]; returns the top layer's full hidden sequence.

    Each layer is a dict with wx [C, 4H], wh [H, 4H], b [4H], gates ordered
    input/forget/cell/output. Initial state is zero.
    """
    h_dim = hidden
    seq = x
    for params in layer_params:
        wx, wh, b = params["wx"], params["wh"], params["b"]
        t_len = seq.data.shape[0]
        xw = matmul(seq, wx)
        h_prev = Tensor(np.zeros((1, h_dim), dtype=seq.data.dtype))
        c_prev = Tensor(np.zeros((1, h_dim), dtype=seq.data.dtype))
        rows = []
        for t in range(t_len):
            g = add(add(narrow(xw, 0, t, 1), matmul(h_prev, wh)), b)
            i_gate = sigmoid(narrow(g, 1, 0, h_dim))
            f_gate = sigmoid(narrow(g, 1, h_dim, h_dim))
            c_tilde = tanh(narrow(g, 1, 2 * h_dim, h_dim))
            o_gate = sigmoid(narrow(g, 1, 3 * h_dim, h_dim))
            c_prev = add(mul(f_gate, c_prev), mul(i_gate, c_tilde))
            h_prev = mul(o_gate, tanh(c_prev))
            rows.append(h_prev)
        seq = stack_rows(rows)
    return seq
