"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op records a node holding its parents, the name of its
backward rule and whatever the rule needs from the forward pass. Backward rules
live in :data:`BACKWARD_RULES` so they can be looked up (and swapped out in
tests) by name.

Spatial ops accept either a single sample ``C x H x W`` or a batch
``N x C x H x W``; batch dimensions simply ride along.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]

_counter = itertools.count()


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_rule", "_ctx", "_seq")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._rule: Optional[str] = None
        self._ctx: dict = {}
        self._seq = next(_counter)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], rule: str, **ctx) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._rule = rule if out.requires_grad else None
        out._ctx = ctx if out.requires_grad else {}
        out._seq = next(_counter)
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _raise_nonscalar(t: Tensor) -> float:
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Backward machinery
# ---------------------------------------------------------------------------

BackwardRule = Callable[[Tensor, np.ndarray], Tuple[Optional[np.ndarray], ...]]
BACKWARD_RULES: Dict[str, BackwardRule] = {}


def backward_rule(name: str):
    def register(fn: BackwardRule) -> BackwardRule:
        BACKWARD_RULES[name] = fn
        return fn

    return register


def _tape(loss: Tensor) -> List[Tensor]:
    """Nodes reachable from ``loss`` that carry a backward rule, newest first."""
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._rule is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Gradients accumulate into existing buffers, so a tensor used twice (or a
    second call without zeroing) receives the sum.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    upstream: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss._rule is None:
        loss.grad = upstream[id(loss)] if loss.grad is None else loss.grad + 1.0
        return
    for node in _tape(loss):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        grads = BACKWARD_RULES[node._rule](node, g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._rule is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                upstream[key] = pg if key not in upstream else upstream[key] + pg


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum()) if shape else np.array(g.sum())


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), "add")


@backward_rule("add")
def _add_backward(node, g):
    a, b = node._parents
    return _reduce_to(g, a.shape), _reduce_to(g, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), "sub")


@backward_rule("sub")
def _sub_backward(node, g):
    a, b = node._parents
    return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return Tensor._from_op(a.data * b.data, (a, b), "mul")


@backward_rule("mul")
def _mul_backward(node, g):
    a, b = node._parents
    return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor._from_op(a.data * s, (a,), "scalar_mul", s=s)


@backward_rule("scalar_mul")
def _scalar_mul_backward(node, g):
    return (g * node._ctx["s"],)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep strictly inside (0, 1) even where float64 saturates
    return np.clip(out, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


def sigmoid(a: Tensor) -> Tensor:
    return Tensor._from_op(_stable_sigmoid(a.data), (a,), "sigmoid")


@backward_rule("sigmoid")
def _sigmoid_backward(node, g):
    s = node.data
    return (g * s * (1.0 - s),)


def relu(a: Tensor) -> Tensor:
    return Tensor._from_op(np.maximum(a.data, 0.0), (a,), "relu")


@backward_rule("relu")
def _relu_backward(node, g):
    (a,) = node._parents
    return (g * (a.data > 0),)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scalar_mul": scalar_mul, "sigmoid": sigmoid, "relu": relu}


def elementwise(op_kind: str, *operands) -> Tensor:
    """Dispatch to one of the pointwise ops by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    if op_kind == "scalar_mul":
        return fn(_wrap(operands[0]), operands[1])
    return fn(*(_wrap(o) for o in operands))


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    return Tensor._from_op(np.array(a.data.sum()), (a,), "sum_all")


@backward_rule("sum_all")
def _sum_all_backward(node, g):
    (a,) = node._parents
    return (np.broadcast_to(g, a.shape).copy(),)


def mean_all(a: Tensor) -> Tensor:
    return Tensor._from_op(np.array(a.data.mean()), (a,), "mean_all")


@backward_rule("mean_all")
def _mean_all_backward(node, g):
    (a,) = node._parents
    return (np.full(a.shape, np.asarray(g).item() / a.size),)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Tensor._from_op(a.data.reshape(shape), (a,), "reshape")


@backward_rule("reshape")
def _reshape_backward(node, g):
    (a,) = node._parents
    return (g.reshape(a.shape),)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack: shape mismatch {sorted(shapes)}")
    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", axis=axis)


@backward_rule("stack")
def _stack_backward(node, g):
    axis = node._ctx["axis"]
    return tuple(np.take(g, i, axis=axis) for i in range(len(node._parents)))


def _spatial_batch(x: np.ndarray, op: str) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"{op}: expected C x H x W or N x C x H x W input, got shape {x.shape}")


def global_avg_pool(a: Tensor) -> Tensor:
    """Per-channel spatial mean: ``C x H x W -> C`` (or batched)."""
    _spatial_batch(a.data, "global_avg_pool")
    return Tensor._from_op(a.data.mean(axis=(-2, -1)), (a,), "global_avg_pool")


@backward_rule("global_avg_pool")
def _gap_backward(node, g):
    (a,) = node._parents
    h, w = a.shape[-2:]
    return (np.broadcast_to(g[..., None, None] / (h * w), a.shape).copy(),)


def avg_pool2d(a: Tensor, k: int) -> Tensor:
    """Non-overlapping ``k x k`` average pooling."""
    x, _ = _spatial_batch(a.data, "avg_pool2d")
    h, w = x.shape[-2:]
    if k < 1 or h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial size {h}x{w} is not divisible by {k}")
    out = a.data.reshape(a.shape[:-2] + (h // k, k, w // k, k)).mean(axis=(-3, -1))
    return Tensor._from_op(out, (a,), "avg_pool2d", k=k)


@backward_rule("avg_pool2d")
def _avg_pool_backward(node, g):
    k = node._ctx["k"]
    up = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1)
    return (up / (k * k),)


def channel_mean(a: Tensor) -> Tensor:
    """Mean over the channel axis: ``C x H x W -> H x W``."""
    _spatial_batch(a.data, "channel_mean")
    return Tensor._from_op(a.data.mean(axis=-3), (a,), "channel_mean")


@backward_rule("channel_mean")
def _channel_mean_backward(node, g):
    (a,) = node._parents
    c = a.shape[-3]
    return (np.broadcast_to(np.expand_dims(g, -3) / c, a.shape).copy(),)


def channel_max(a: Tensor) -> Tensor:
    """Max over channels; the gradient goes to the first maximising channel."""
    _spatial_batch(a.data, "channel_max")
    idx = np.argmax(a.data, axis=-3)
    out = np.take_along_axis(a.data, np.expand_dims(idx, -3), axis=-3).squeeze(-3)
    return Tensor._from_op(out, (a,), "channel_max", idx=idx)


@backward_rule("channel_max")
def _channel_max_backward(node, g):
    (a,) = node._parents
    gi = np.zeros(a.shape)
    np.put_along_axis(gi, np.expand_dims(node._ctx["idx"], -3), np.expand_dims(g, -3), axis=-3)
    return (gi,)


# ---------------------------------------------------------------------------
# Linear algebra ops
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``W x + b`` for an ``N`` vector or a ``B x N`` batch."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: weight {weight.shape} and bias {bias.shape} disagree")
    if x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data
    return Tensor._from_op(out, (x, weight, bias), "linear")


@backward_rule("linear")
def _linear_backward(node, g):
    x, w, _ = node._parents
    g2 = g.reshape(-1, w.shape[0])
    x2 = x.data.reshape(-1, w.shape[1])
    return (g @ w.data, g2.T @ x2, g2.sum(axis=0))


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """``N x C x Hp x Wp`` -> ``(N*Ho*Wo) x (k*k*C)`` patch matrix, columns ordered (ki, kj, c)."""
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    n, c = x.shape[:2]
    return win.transpose(0, 2, 3, 4, 5, 1).reshape(n * ho * wo, k * k * c)


def _kernel_matrix(weight: np.ndarray) -> np.ndarray:
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) plus per-channel bias."""
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv2d: weight must be C_out x C_in x k x k, got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    xb, single = _spatial_batch(x.data, "conv2d")
    n, c, h, w = xb.shape
    if c != c_in:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: {k}x{k} kernel does not fit padded {h}x{w} input (output would be empty)")
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols @ _kernel_matrix(weight.data).T + bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    if single:
        out = out[0]
    return Tensor._from_op(
        out, (x, weight, bias), "conv2d", cols=cols, stride=stride, padding=padding, padded=xp.shape
    )


@backward_rule("conv2d")
def _conv2d_backward(node, g):
    x, weight, _ = node._parents
    c_out, c_in, k, _ = weight.shape
    stride, padding = node._ctx["stride"], node._ctx["padding"]
    gb = g[None] if g.ndim == 3 else g
    n, _, ho, wo = gb.shape
    gmat = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
    gw = (gmat.T @ node._ctx["cols"]).reshape(c_out, k, k, c_in).transpose(0, 3, 1, 2)
    gbias = gmat.sum(axis=0)
    gx = None
    if x.requires_grad:
        gcols = (gmat @ _kernel_matrix(weight.data)).reshape(n, ho, wo, k, k, c_in)
        pn, pc, ph, pw = node._ctx["padded"]
        gxp = np.zeros((pn, ph, pw, pc))
        for di in range(k):
            for dj in range(k):
                gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += gcols[:, :, :, di, dj]
        gxp = gxp.transpose(0, 3, 1, 2)
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        gx = np.ascontiguousarray(gxp[0] if x.ndim == 3 else gxp)
    return gx, gw, gbias


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over batch and spatial axes.

    In training mode the batch statistics are used and the running buffers
    are updated in place; otherwise the running buffers are used.
    """
    xb, _ = _spatial_batch(x.data, "batch_norm")
    c = xb.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: affine params must have shape ({c},)")
    axes = (0, 2, 3) if x.ndim == 4 else (1, 2)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean, var = running_mean, running_var
    shape = (1, c, 1, 1) if x.ndim == 4 else (c, 1, 1)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    return Tensor._from_op(
        out, (x, gamma, beta), "batch_norm", xhat=xhat, inv_std=inv_std, axes=axes, shape=shape, training=training
    )


@backward_rule("batch_norm")
def _batch_norm_backward(node, g):
    x, gamma, _ = node._parents
    xhat, inv_std, axes, shape = (node._ctx[k] for k in ("xhat", "inv_std", "axes", "shape"))
    ggamma = (g * xhat).sum(axis=axes)
    gbeta = g.sum(axis=axes)
    gxhat = g * gamma.data.reshape(shape)
    if node._ctx["training"]:
        gx = (
            gxhat - gxhat.mean(axis=axes).reshape(shape) - xhat * (gxhat * xhat).mean(axis=axes).reshape(shape)
        ) * inv_std.reshape(shape)
    else:
        gx = gxhat * inv_std.reshape(shape)
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Fused, max-shifted ``-log softmax(logits)[label]``.

    For ``B x K`` logits and ``B`` labels the per-sample losses are averaged.
    """
    z = logits.data
    if z.ndim not in (1, 2):
        raise ValueError(f"softmax_cross_entropy: logits must be K or B x K, got {z.shape}")
    zb = z[None] if z.ndim == 1 else z
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape != (zb.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"softmax_cross_entropy: need {zb.shape[0]} integer label(s), got {label!r}")
    k = zb.shape[1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {k})")
    shifted = zb - zb.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(zb.shape[0])
    losses = log_z - shifted[rows, labels]
    probs = np.exp(shifted - log_z[:, None])
    return Tensor._from_op(np.array(losses.mean()), (logits,), "softmax_cross_entropy", probs=probs, labels=labels)


@backward_rule("softmax_cross_entropy")
def _sce_backward(node, g):
    (logits,) = node._parents
    probs, labels = node._ctx["probs"], node._ctx["labels"]
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    d *= np.asarray(g).item() / len(labels)
    return (d.reshape(logits.shape),)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    return Tensor._from_op(np.array(np.mean(diff * diff)), (a, b), "mse", diff=diff)


@backward_rule("mse")
def _mse_backward(node, g):
    diff = node._ctx["diff"]
    ga = 2.0 * np.asarray(g).item() * diff / diff.size
    return ga, -ga

