"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    probes: int = 20,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative error between backprop and central differences.

    ``f(*inputs)`` must return a scalar tensor. Up to ``probes`` coordinates
    are sampled from each input that requires grad (all of them if the input
    is smaller). The per-coordinate error is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in inputs:
        t.grad = None
    loss = f(*inputs)
    loss.backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).copy()
        flat = t.data.reshape(-1)
        if t.size <= probes:
            coords = np.arange(t.size)
        else:
            coords = rng.choice(t.size, size=probes, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f(*inputs).item()
            flat[i] = orig - h
            down = f(*inputs).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Suite over every differentiable op plus the end-to-end objective
# ---------------------------------------------------------------------------


def _leaf(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _case(build):
    """Wrap ``build(rng) -> (f, inputs)`` into a check returning the max error."""

    def check(rng: np.random.Generator, h: float = 1e-5, probes: int = 20) -> float:
        f, inputs = build(rng)
        return grad_check(f, inputs, h=h, probes=probes, rng=rng)

    check.__name__ = build.__name__
    return check


def _suite():
    from . import tensor as T
    from .attention import FusionParams, attention_loss, fuse_attention
    from .backbone import BackboneConfig
    from .head import BlendWeights, LossWeights, apply_attention, blend, total_loss
    from .model import MGANet

    def unary(op, shape=(3, 4, 5)):
        def build(rng):
            x = _leaf(rng, *shape)
            # fixed random weights contract the output to a scalar
            w = Tensor(rng.normal(size=op(x).shape))
            return (lambda x: T.sum_all(T.mul(op(x), w))), [x]

        return build

    def binary(op):
        def build(rng):
            a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
            w = Tensor(rng.normal(size=(3, 4)))
            return (lambda a, b: T.sum_all(T.mul(op(a, b), w))), [a, b]

        return build

    def conv(k, stride, padding, batch):
        def build(rng):
            shape = (2, 3, 7, 7) if batch else (3, 7, 7)
            x, wt, b = _leaf(rng, *shape), _leaf(rng, 4, 3, k, k), _leaf(rng, 4)
            probe = Tensor(rng.normal(size=T.conv2d(x, wt, b, stride, padding).shape))
            return (lambda x, wt, b: T.sum_all(T.mul(T.conv2d(x, wt, b, stride, padding), probe))), [x, wt, b]

        return build

    def linear(rng):
        x, wt, b = _leaf(rng, 2, 6), _leaf(rng, 5, 6), _leaf(rng, 5)
        probe = Tensor(rng.normal(size=(2, 5)))
        return (lambda x, wt, b: T.sum_all(T.mul(T.linear(x, wt, b), probe))), [x, wt, b]

    def batch_norm(rng):
        x, g, b = _leaf(rng, 3, 4, 5, 5), _leaf(rng, 4, low=0.5, high=1.5), _leaf(rng, 4)
        probe = Tensor(rng.normal(size=x.shape))
        rm, rv = np.zeros(4), np.ones(4)
        return (lambda x, g, b: T.sum_all(T.mul(T.batch_norm(x, g, b, rm, rv, True), probe))), [x, g, b]

    def stack(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        probe = Tensor(rng.normal(size=(3, 2, 4)))
        return (lambda a, b: T.sum_all(T.mul(T.stack([a, b], axis=1), probe))), [a, b]

    def softmax_cross_entropy(rng):
        z = _leaf(rng, 4, 6, low=-3, high=3)
        labels = rng.integers(0, 6, 4)
        return (lambda z: T.softmax_cross_entropy(z, labels)), [z]

    def mse(rng):
        a, b = _leaf(rng, 2, 4, 4), _leaf(rng, 2, 4, 4)
        return T.mse, [a, b]

    def apply_attention_case(rng):
        f, am = _leaf(rng, 2, 4, 3, 3), _leaf(rng, 2, 3, 3, low=0.05, high=0.95)
        probe = Tensor(rng.normal(size=f.shape))
        return (lambda f, am: T.sum_all(T.mul(apply_attention(f, am), probe))), [f, am]

    def fuse_attention_case(rng):
        mn, mx = _leaf(rng, 2, 4, 4), _leaf(rng, 2, 4, 4)
        fp = FusionParams.create(*rng.uniform(-1, 1, 3))
        probe = Tensor(rng.normal(size=(2, 4, 4)))
        return (
            lambda mn, mx, w, b: T.sum_all(T.mul(fuse_attention(mn, mx, FusionParams(w, b)), probe)),
            [mn, mx, fp.weight, fp.bias],
        )

    def blend_case(rng):
        a, b = _leaf(rng, 3, 4, 4), _leaf(rng, 3, 4, 4)
        probe = Tensor(rng.normal(size=a.shape))
        return (lambda a, b: T.sum_all(T.mul(blend(a, b, BlendWeights(0.3, 0.7)), probe))), [a, b]

    def end_to_end(rng):
        model = MGANet.build(BackboneConfig(stage_channels=[4, 6, 8]), 2, "mga", seed=int(rng.integers(1 << 31)))
        images = rng.uniform(0, 1, (2, 3, 16, 16))
        targets = rng.uniform(0, 1, (2, 2, 2))
        labels = np.array([0, 1])
        params = model.trainable_parameters()

        def f(*_):
            out = model(images, training=True)
            return total_loss(out.logits, labels, attention_loss(targets, out.attention), LossWeights(0.1))

        return f, params

    return {
        "add": _case(binary(T.add)),
        "sub": _case(binary(T.sub)),
        "mul": _case(binary(T.mul)),
        "scalar_mul": _case(unary(lambda x: T.scalar_mul(x, -1.7))),
        "sigmoid": _case(unary(T.sigmoid)),
        "relu": _case(unary(T.relu)),
        "reshape": _case(unary(lambda x: T.reshape(x, (12, 5)))),
        "stack": _case(stack),
        "linear": _case(linear),
        "conv2d": _case(conv(3, 1, 1, False)),
        "conv2d_batched_strided": _case(conv(3, 2, 1, True)),
        "conv2d_1x1": _case(conv(1, 1, 0, True)),
        "global_avg_pool": _case(unary(T.global_avg_pool)),
        "avg_pool2d": _case(unary(lambda x: T.avg_pool2d(x, 2), shape=(3, 4, 6))),
        "channel_mean": _case(unary(T.channel_mean)),
        "channel_max": _case(unary(T.channel_max)),
        "batch_norm": _case(batch_norm),
        "softmax_cross_entropy": _case(softmax_cross_entropy),
        "mse": _case(mse),
        "apply_attention": _case(apply_attention_case),
        "fuse_attention": _case(fuse_attention_case),
        "blend": _case(blend_case),
        "end_to_end": _case(end_to_end),
    }


def run_suite(ops=None, seed: int = 0, h: float = 1e-5, probes: int = 20) -> dict:
    """Max relative error per named check; ``ops`` restricts to a subset."""
    suite = _suite()
    names = list(suite) if not ops else list(ops)
    unknown = [n for n in names if n not in suite]
    if unknown:
        raise KeyError(f"unknown gradient checks {unknown}; available: {', '.join(suite)}")
    results = {}
    for i, name in enumerate(names):
        results[name] = suite[name](np.random.default_rng([seed, i]), h=h, probes=probes)
    return results


def check_names():
    return list(_suite())
