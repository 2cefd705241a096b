"""Minimal float64 tensor library with tape-based reverse-mode autodiff.

Only the operators the auto-encoders need are provided: 3x3 'same'
convolution (cross-correlation, no kernel flip), 2x2 max pooling,
nearest-neighbour upsampling, ReLU, tanh, batch normalization and MSE.

Each op returns a new :class:`Tensor` whose backward rule maps the output
gradient to one gradient per input. Leaves created with
``requires_grad=True`` are parameters; their ``.grad`` accumulates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _conv
from .errors import GraphError, NumericError, ShapeError

BN_EPSILON = 1e-8
BN_MOMENTUM = 0.9

_ACTIVE_TAPES = []


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, tape=None):
        return backward(self, tape)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        for tape in _ACTIVE_TAPES:
            tape.record(out)
    else:
        out._parents = ()
        out._backward = None
    return out


class Tape:
    """Records ops in execution order while active (``with Tape() as tape:``).

    Recording is optional: :func:`backward` without a tape derives the
    order from the graph itself.
    """

    def __init__(self):
        self.nodes = []
        self._index = {}

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node):
        self._index[id(node)] = len(self.nodes)
        self.nodes.append(node)

    def index(self, node):
        try:
            return self._index[id(node)]
        except KeyError:
            raise GraphError(f"node {node!r} was not recorded on this tape") from None

    def order(self, loss):
        """Ops up to and including ``loss``, validated to be topologically sorted."""
        stop = self.index(loss)
        nodes = self.nodes[: stop + 1]
        for i, node in enumerate(nodes):
            for parent in node._parents:
                if parent.is_leaf:
                    continue
                j = self._index.get(id(parent))
                if j is None or j >= i:
                    raise GraphError(f"op {node.op} at position {i} consumes a node recorded after it")
        return nodes

    def backward(self, loss):
        return backward(loss, self)


def _topological(loss):
    order = []
    state = {}
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError("cycle detected in autodiff graph")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            if parent.is_leaf:
                continue
            pmark = state.get(id(parent))
            if pmark == 1:
                raise GraphError("cycle detected in autodiff graph")
            if pmark is None:
                stack.append((parent, False))
    return order


def backward(loss, tape=None):
    """Propagate d(loss)/d(leaf) into every reachable leaf with ``requires_grad``.

    Returns a dict mapping each touched parameter to its accumulated gradient.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("loss must be a Tensor")
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return {loss: loss.grad}
        return {}
    order = tape.order(loss) if tape is not None else _topological(loss)

    pending = {id(loss): np.ones_like(loss.data)}
    touched = {}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                touched[parent] = parent.grad
            else:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
    return touched


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    a = as_tensor(a)
    if np.isscalar(b):
        s = float(b)
        return _make(a.data * s, (a,), lambda g: (g * s,), "scale")
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def total(x):
    """Sum of all entries as a scalar tensor."""
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def concat_channels(a, b):
    """Stack two rank-4 tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _make(out, (a, b), lambda g: (g[:, :split], g[:, split:]), "concat")


def channel_slice(x, start, stop):
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[:, start:stop])

    def _backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (x,), _backward, "channel_slice")


# ---------------------------------------------------------------------------
# layers


def _check4(x, op):
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a rank-4 (n, c, h, w) tensor, got shape {x.shape}")


def conv2d(x, weight, bias=None):
    """3x3 'same' convolution with zero padding (cross-correlation convention).

    ``out[n,o,y,x] = bias[o] + sum_{i,dy,dx} x[n,i,y+dy-1,x+dx-1] * weight[o,i,dy,dx]``
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check4(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: kernel must be (c_out, c_in, 3, 3), got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but kernel expects {weight.shape[1]}"
        )
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d: input contains NaN or Inf")
    out, xp = _conv.corr3x3(x.data, weight.data)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias must have shape ({weight.shape[0]},), got {bias.shape}")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def _backward(g):
        gx = _conv.corr3x3_input_grad(g, weight.data) if x.requires_grad else None
        gw = _conv.corr3x3_weight_grad(xp, g) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, _backward, "conv2d")


def maxpool2(x):
    """2x2 max pooling, stride 2. Ties resolve to the first element in row-major order."""
    x = as_tensor(x)
    _check4(x, "maxpool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def _backward(g):
        g4 = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(g4, idx, g[..., None], axis=-1)
        return (g4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _make(out, (x,), _backward, "maxpool2")


def upsample2(x):
    """Nearest-neighbour 2x upsampling."""
    x = as_tensor(x)
    _check4(x, "upsample2")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _make(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample2")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh_out(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def mse(prediction, target):
    """Mean squared error over all entries."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"mse: prediction {prediction.shape} vs target {target.shape}")
    diff = prediction.data - target.data
    scale = 2.0 / diff.size

    def _backward(g):
        d = g * scale * diff
        return d, -d

    return _make(np.array(np.mean(diff * diff)), (prediction, target), _backward, "mse")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics of a real BN layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    @classmethod
    def create(cls, channels, name="bn"):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta"),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


def batch_norm(x, state, mode="train", stats_grad=True):
    """Per-channel batch normalization.

    In train mode the backward pass runs through the batch mean and
    variance by default. With ``stats_grad=False`` they are treated as
    constants and the input gradient is ``g * gamma / sqrt(var + eps)``;
    infer mode always uses the running statistics as constants.
    """
    x = as_tensor(x)
    _check4(x, "batch_norm")
    if x.shape[1] != state.channels:
        raise ShapeError(f"batch_norm: {x.shape[1]} channels but state has {state.channels}")
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError("batch_norm: need at least two elements per channel in train mode")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var
    elif mode == "infer":
        mean, var = state.running_mean, state.running_var
        stats_grad = False
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    gamma, beta = state.gamma, state.beta
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def _backward(g):
        axes = (0, 2, 3)
        gx = g * (gamma.data * inv)[None, :, None, None]
        if stats_grad:
            # d xhat / d x including the batch mean and variance
            gm = gx.mean(axis=axes, keepdims=True)
            gxm = (gx * xhat).mean(axis=axes, keepdims=True)
            gx = gx - gm - xhat * gxm
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gamma, beta), _backward, "batch_norm")


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(shape, fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv2dParams:
    """Weights and bias of one real 3x3 convolution."""

    weight: Tensor
    bias: Tensor = field(default=None)

    @classmethod
    def create(cls, c_in, c_out, rng, name="conv"):
        w = glorot_uniform((c_out, c_in, 3, 3), c_in * 9, c_out * 9, rng)
        return cls(
            Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias"),
        )
