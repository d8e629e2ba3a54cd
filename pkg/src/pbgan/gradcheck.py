"""Central finite-difference verification of every differentiable op.

Each check wraps an op into the scalar loss mean(op_output^2), computes
analytic leaf gradients by backpropagation, and compares against central
differences with h = 1e-5.  The squared-mean head feeds the op's
backward a generic upstream gradient.  Inputs for kinked ops (relu,
leaky_relu, abs) are sampled away from 0.
"""

import numpy as np

from . import autodiff as ad
from .piggyback import FilterBank, compose_filters_node
from .rng import rng_stream

H = 1e-5
REL_TOL = 1e-6
ABS_TOL = 1e-8


def numerical_grad(fn, arrays, which, h=H):
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[which])
    flat = grad.reshape(-1)
    target = base[which].reshape(-1)
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + h
        hi = float(fn(*base).data)
        target[i] = orig - h
        lo = float(fn(*base).data)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def worst_error(analytic, numerical):
    a = analytic.reshape(-1)
    n = numerical.reshape(-1)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok_abs = diff <= ABS_TOL
    rel = np.where(ok_abs, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max()) if rel.size else 0.0


def check_op(fn, arrays):
    """Worst relative error across all differentiable inputs of one op call."""
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*leaves)
    ad.backward(loss)
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        num = numerical_grad(lambda *raw: fn(*[ad.Tensor(r) for r in raw]), arrays, i)
        worst = max(worst, worst_error(analytic, num))
    return worst


def _head(out):
    return ad.mean(ad.square(out))


def _away_from_zero(rng, shape, margin=0.15):
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _instances(seed):
    """(name, loss_fn, arrays) triples; one randomized instance per call."""
    rng = rng_stream(seed, "probe")
    insts = []

    for stride, pad, h in ((1, 0, 5), (1, 1, 5), (2, 1, 5)):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(0, 1, (h, h, cin))
        f = rng.normal(0, 1, (3, 3, cin, cout))
        b = rng.normal(0, 1, cout)
        insts.append((
            f"conv2d(s={stride},p={pad})",
            lambda xt, ft, bt, s=stride, p=pad: _head(ad.conv2d(xt, ft, bt, s, p)),
            [x, f, b],
        ))

    for stride, pad in ((1, 0), (2, 1), (2, 0)):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(0, 1, (3, 3, cin))
        f = rng.normal(0, 1, (3, 3, cin, cout))
        b = rng.normal(0, 1, cout)
        insts.append((
            f"deconv2d(s={stride},p={pad})",
            lambda xt, ft, bt, s=stride, p=pad: _head(ad.deconv2d(xt, ft, bt, s, p)),
            [x, f, b],
        ))

    a = rng.normal(0, 1, (4, 3))
    b2 = rng.normal(0, 1, (3, 5))
    insts.append(("matmul", lambda at, bt: _head(ad.matmul(at, bt)), [a, b2]))

    x = _away_from_zero(rng, (4, 4, 2))
    y = _away_from_zero(rng, (4, 4, 2))
    insts += [
        ("relu", lambda t: _head(ad.relu(t)), [x]),
        ("leaky_relu", lambda t: _head(ad.leaky_relu(t)), [x]),
        ("tanh", lambda t: _head(ad.tanh(t)), [x]),
        ("abs", lambda t: ad.mean(ad.absolute(t)), [x]),
        ("add", lambda s, t: _head(ad.add(s, t)), [x, y]),
        ("sub", lambda s, t: _head(ad.sub(s, t)), [x, y]),
        ("mul", lambda s, t: _head(ad.mul(s, t)), [x, y]),
        ("sum", lambda t: ad.scale(ad.tsum(ad.square(t)), 0.25), [x]),
        ("instance_norm",
         lambda t: _head(ad.instance_norm(t)),
         [rng.normal(0, 1, (4, 4, 3))]),
        ("concat_last_axis",
         lambda s, t: _head(ad.concat_last_axis([s, t])),
         [rng.normal(0, 1, (3, 3, 2, 2)), rng.normal(0, 1, (3, 3, 2, 3))]),
    ]

    bank = FilterBank(0, [rng.normal(0, 1, (3, 3, 2, 4))], [1])
    insts.append((
        "compose_filters",
        lambda unc, W: _head(compose_filters_node(bank, unc, W, 4)),
        [rng.normal(0, 1, (3, 3, 2, 2)), rng.normal(0, 1, (4, 2))],
    ))
    return insts


def run_suite(n_instances=20, base_seed=123):
    """Worst relative error per op over randomized instances."""
    worst = {}
    for k in range(n_instances):
        for name, fn, arrays in _instances(base_seed + k):
            err = check_op(fn, arrays)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
