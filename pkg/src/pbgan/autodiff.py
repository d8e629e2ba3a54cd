"""Tape-based reverse-mode differentiation over dense float64 tensors.

The op set is deliberately small: exactly what the generator, the patch
discriminator, the filter factorization, and the training losses need.
Tensors are immutable after creation (``data`` is marked read-only) and
every op validates finiteness, so a NaN/Inf surfaces at the op that
produced it rather than three layers later.

There is no batch axis: a batch is a list of samples, and gradients
accumulate across repeated ``backward`` calls on graphs sharing leaves.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(FloatingPointError):
    """A tensor contains NaN or Inf."""


def _asdata(values):
    arr = np.array(values, dtype=np.float64, order="C")  # always copy: tensors own their data
    if arr.ndim > 4:
        raise ShapeError(f"tensors have at most 4 axes, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains non-finite values")
    return arr


class Tensor:
    """A node in the computation graph.

    Leaves are built directly; interior nodes are built by the op
    functions below, which attach a backward closure mapping the upstream
    gradient to per-parent contributions.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _asdata(data)
        self.data.flags.writeable = False
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _make(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Reverse-mode sweep from a scalar loss; accumulates into leaf grads."""
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    loss._accum(np.ones(()))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# ops

def _coerce(other, like):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.broadcast_to(np.float64(other), like.shape).copy())


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} vs {b.data.shape}")


def add(a, b):
    b = _coerce(b, a)
    _check_same_shape(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    b = _coerce(b, a)
    _check_same_shape(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _check_same_shape(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(a, s):
    s = float(s)

    def bwd(g):
        a._accum(g * s)

    return _make(a.data * s, (a,), bwd)


def relu(a):
    mask = a.data > 0.0  # subgradient at 0 is 0

    def bwd(g):
        a._accum(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def leaky_relu(a, slope=0.2):
    mask = a.data > 0.0

    def bwd(g):
        a._accum(g * np.where(mask, 1.0, slope))

    return _make(np.where(mask, a.data, slope * a.data), (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def absolute(a):
    sign = np.sign(a.data)  # subgradient at 0 is 0

    def bwd(g):
        a._accum(g * sign)

    return _make(np.abs(a.data), (a,), bwd)


def square(a):
    def bwd(g):
        a._accum(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bwd)


def tsum(a):
    def bwd(g):
        a._accum(np.full(a.data.shape, float(g)))

    return _make(a.data.sum(), (a,), bwd)


def mean(a):
    n = a.data.size

    def bwd(g):
        a._accum(np.full(a.data.shape, float(g) / n))

    return _make(a.data.mean(), (a,), bwd)


def reshape(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: size {a.data.size} to shape {shape}")

    def bwd(g):
        a._accum(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def concat_last_axis(parts):
    if not parts:
        raise ShapeError("concat_last_axis: empty list")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead or p.data.ndim != parts[0].data.ndim:
            raise ShapeError("concat_last_axis: incompatible shapes")
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accum(g[..., lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), bwd)


def _conv_shapes(x, f, bias, stride, pad, kind):
    if x.data.ndim != 3 or f.data.ndim != 4:
        raise ShapeError(f"{kind}: input must be (h,w,c), filters (kw,kh,cin,cout)")
    if stride < 1 or pad < 0:
        raise ShapeError(f"{kind}: stride >= 1 and pad >= 0 required")
    kw, kh, cin, cout = f.data.shape
    if bias.data.shape != (cout,):
        raise ShapeError(f"{kind}: bias shape {bias.data.shape} != ({cout},)")
    return kw, kh, cin, cout


def conv2d(x, f, bias, stride=1, pad=0):
    """Cross-correlation plus per-output-channel bias."""
    kw, kh, cin, cout = _conv_shapes(x, f, bias, stride, pad, "conv2d")
    h, w, xc = x.data.shape
    if xc != cin:
        raise ShapeError(f"conv2d: input channels {xc} != filter c_in {cin}")
    if (h + 2 * pad - kw) % stride or (w + 2 * pad - kh) % stride:
        raise ShapeError("conv2d: non-integral output extent")
    y = kernels.conv2d_forward(x.data, f.data, stride, pad) + bias.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accum(kernels.conv2d_grad_input(g, f.data, stride, pad, h, w))
        if f.requires_grad:
            f._accum(kernels.conv2d_grad_filters(x.data, g, stride, pad, kw, kh))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1)))

    return _make(y, (x, f, bias), bwd)


def deconv2d(x, f, bias, stride=1, pad=0):
    """Transposed convolution; the last filter axis is the output channels."""
    kw, kh, cin, cout = _conv_shapes(x, f, bias, stride, pad, "deconv2d")
    h, w, xc = x.data.shape
    if xc != cin:
        raise ShapeError(f"deconv2d: input channels {xc} != filter c_in {cin}")
    oh = (h - 1) * stride - 2 * pad + kw
    ow = (w - 1) * stride - 2 * pad + kh
    if oh <= 0 or ow <= 0:
        raise ShapeError("deconv2d: non-positive output extent")
    fswap = np.ascontiguousarray(f.data.transpose(0, 1, 3, 2))
    y = kernels.conv2d_grad_input(np.ascontiguousarray(x.data), fswap, stride, pad, oh, ow) + bias.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accum(kernels.conv2d_forward(g, fswap, stride, pad))
        if f.requires_grad:
            gf = kernels.conv2d_grad_filters(g, np.ascontiguousarray(x.data), stride, pad, kw, kh)
            f._accum(np.ascontiguousarray(gf.transpose(0, 1, 3, 2)))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1)))

    return _make(y, (x, f, bias), bwd)


def instance_norm(x, eps=1e-5):
    """Per-channel normalization over the spatial axes, no learned affine."""
    if x.data.ndim != 3:
        raise ShapeError("instance_norm: input must be (h,w,c)")
    mu = x.data.mean(axis=(0, 1), keepdims=True)
    var = x.data.var(axis=(0, 1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    n = x.data.shape[0] * x.data.shape[1]

    def bwd(g):
        gsum = g.sum(axis=(0, 1), keepdims=True)
        gysum = (g * y).sum(axis=(0, 1), keepdims=True)
        x._accum(inv / n * (n * g - gsum - y * gysum))

    return _make(y, (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus a shared step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; pure function of its inputs."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param {p.shape} for {name}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)
