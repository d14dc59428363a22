"""Minimal reverse-mode autodiff on float64 numpy arrays.

Covers exactly the operator surface the GRU-TCN and DQN need: matmul,
elementwise arithmetic, gate nonlinearities, softmax/log-softmax, concat,
slicing, reductions and dilated 1-D convolution. No general broadcasting
beyond bias-add; shapes are checked eagerly so mismatches fail at the op,
not three layers later.
"""

from __future__ import annotations

import math

import numpy as np

# When True every op asserts its output is finite (slow; used by tests
# and the training divergence guard).
DEBUG_NAN = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def _result(data, parents, backward_fn) -> Tensor:
    if DEBUG_NAN and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by an op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss to every requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward called twice on the same graph; re-run forward")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._done = True


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out_data, (a, b), bwd)


def add(a: Tensor, b) -> Tensor:
    """Elementwise add; also supports bias-add (..., M) + (M,) and scalars."""
    if not isinstance(b, Tensor):
        bd = float(b)
        return _result(a.data + bd, (a,), lambda g: _accumulate(a, g))
    if a.data.shape != b.data.shape and b.data.shape != a.data.shape[-1:]:
        raise ValueError(f"add shape mismatch {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, g)
        if b.data.shape == a.data.shape:
            _accumulate(b, g)
        else:
            _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _result(out_data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch {a.shape} - {b.shape}")

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise multiply (same shape) or scale by a python scalar."""
    if not isinstance(b, Tensor):
        bd = float(b)
        return _result(a.data * bd, (a,), lambda g: _accumulate(a, g * bd))
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.shape} * {b.shape}")
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(out_data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return mul(a, -1.0)


def sigmoid(a: Tensor) -> Tensor:
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _result(y, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _result(y, (a,), lambda g: _accumulate(a, g * (a.data > 0)))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _result(y, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bwd(g):
        sm = np.exp(y)
        _accumulate(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _result(y, (a,), bwd)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _result(out_data, tuple(tensors), bwd)


def slice_(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _result(out_data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)
    return _result(out_data, (a,), lambda g: _accumulate(a, g.reshape(a.data.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out_data = a.data.transpose(axes)
    return _result(out_data, (a,), lambda g: _accumulate(a, g.transpose(inv)))


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def mean_over_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    out_data = a.data.mean(axis=axis)

    def bwd(g):
        _accumulate(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _result(out_data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,), lambda g: _accumulate(a, np.full_like(a.data, float(g))))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: _accumulate(a, np.full_like(a.data, float(g) / n)))


def dilated_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None,
                   dilation: int = 1, padding: str = "causal") -> Tensor:
    """Dilated 1-D convolution, y[t] = sum_i w_i * x[t - i*d] over taps.

    x: (batch, in_channels, T), w: (out_channels, in_channels, k).
    'causal' pads left only; 'same' centres the kernel (odd k) so the
    output index t aligns with input index t.
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv shape mismatch x={x.shape} w={w.shape}")
    n_batch, _, n_t = x.data.shape
    n_out, _, k = w.data.shape
    d = int(dilation)
    if padding == "causal":
        pad = ((k - 1) * d, 0)
    elif padding == "same":
        if k % 2 == 0:
            raise ValueError("'same' padding requires odd kernel size")
        half = (k - 1) // 2 * d
        pad = (half, half)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), pad))
    out_data = np.zeros((n_batch, n_out, n_t))
    for i in range(k):
        off = (k - 1 - i) * d
        out_data += np.einsum("oc,bct->bot", w.data[:, :, i], xp[:, :, off:off + n_t])
    if b is not None:
        out_data += b.data[None, :, None]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(k):
            off = (k - 1 - i) * d
            gw[:, :, i] = np.einsum("bot,bct->oc", g, xp[:, :, off:off + n_t])
            gxp[:, :, off:off + n_t] += np.einsum("oc,bot->bct", w.data[:, :, i], g)
        _accumulate(w, gw)
        hi = xp.shape[2] - pad[1]
        _accumulate(x, gxp[:, :, pad[0]:hi])
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _result(out_data, parents, bwd)


def softmax_cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy from logits (numerically stable)."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.data.shape[0]
    loss = -float((onehot * logp).sum()) / n

    def bwd(g):
        _accumulate(logits, float(g) * (np.exp(logp) - onehot) / n)

    return _result(np.asarray(loss), (logits,), bwd)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from logits (numerically stable)."""
    z = logits.data
    loss = float((np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))).mean())
    n = z.size

    def bwd(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ex = np.exp(z[~pos])
        p[~pos] = ex / (1.0 + ex)
        _accumulate(logits, float(g) * (p - targets) / n)

    return _result(np.asarray(loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


class AdamState:
    """Per-parameter Adam moments; weight decay is decoupled (AdamW-style)."""

    def __init__(self, param_shapes: dict[str, tuple], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 weight_decay: float = 1e-4, eps: float = 1e-8):
        self.step = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.m = {k: np.zeros(s) for k, s in param_shapes.items()}
        self.v = {k: np.zeros(s) for k, s in param_shapes.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place Adam update with bias correction and decoupled decay."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(build_loss, params: dict[str, np.ndarray], h: float = 1e-4,
               sample_per_param: int | None = None, seed: int = 0) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    build_loss maps {name: Tensor} to a scalar loss Tensor and must be
    deterministic. Returns per-parameter max error, measured as
    |ad - fd| / max(1, |ad|, |fd|). With sample_per_param set, only that
    many randomly chosen coordinates per parameter are probed.
    """
    rng = np.random.default_rng(seed)
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    loss = build_loss(tensors)
    backward(loss)
    analytic = {k: np.array(t.grad, dtype=np.float64) if t.grad is not None
                else np.zeros_like(t.data) for k, t in tensors.items()}

    def eval_loss(values):
        ts = {k: Tensor(v) for k, v in values.items()}
        return float(build_loss(ts).data)

    base = {k: v.copy() for k, v in params.items()}
    report = {}
    for name, p in base.items():
        flat_idx = np.arange(p.size)
        if sample_per_param is not None and sample_per_param < p.size:
            flat_idx = rng.choice(p.size, size=sample_per_param, replace=False)
        worst = 0.0
        for idx in flat_idx:
            orig = p.flat[idx]
            p.flat[idx] = orig + h
            up = eval_loss(base)
            p.flat[idx] = orig - h
            down = eval_loss(base)
            p.flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            ad = analytic[name].flat[idx]
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
        report[name] = worst
    return report
