"""Complex-valued convolution and whitening batch normalization.

A :class:`ComplexTensor` keeps its real and imaginary feature maps in one
``(n, 2c, h, w)`` tensor, real maps first. Max pooling, upsampling and the
split ReLU/tanh activations act on each real map independently, so they
apply to the stacked tensor unchanged.
"""

from dataclasses import dataclass

import numpy as np

from . import _conv
from .errors import ConditioningError, ShapeError
from .tensor import (
    BN_EPSILON,
    BN_MOMENTUM,
    Tensor,
    _make,
    as_tensor,
    channel_slice,
    concat_channels,
    glorot_uniform,
)


class ComplexTensor:
    """Complex activations M = M_re + i M_im over ``c`` complex channels."""

    __slots__ = ("stacked",)

    def __init__(self, re, im):
        re, im = as_tensor(re), as_tensor(im)
        if re.shape != im.shape:
            raise ShapeError(f"real part {re.shape} and imaginary part {im.shape} differ")
        if re.ndim != 4:
            raise ShapeError(f"expected rank-4 (n, c, h, w) parts, got {re.shape}")
        self.stacked = concat_channels(re, im)

    @classmethod
    def from_stacked(cls, stacked):
        stacked = as_tensor(stacked)
        if stacked.ndim != 4 or stacked.shape[1] % 2:
            raise ShapeError(f"stacked complex tensor needs an even channel count, got {stacked.shape}")
        obj = cls.__new__(cls)
        obj.stacked = stacked
        return obj

    @classmethod
    def from_complex(cls, array, requires_grad=False):
        array = np.asarray(array)
        return cls.from_stacked(
            Tensor(np.concatenate([array.real, array.imag], axis=1), requires_grad=requires_grad)
        )

    @property
    def channels(self):
        return self.stacked.shape[1] // 2

    @property
    def shape(self):
        n, c2, h, w = self.stacked.shape
        return (n, c2 // 2, h, w)

    @property
    def re(self):
        return channel_slice(self.stacked, 0, self.channels)

    @property
    def im(self):
        return channel_slice(self.stacked, self.channels, 2 * self.channels)

    def to_complex(self):
        c = self.channels
        return self.stacked.data[:, :c] + 1j * self.stacked.data[:, c:]

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"


@dataclass
class ComplexKernel:
    """K = K_re + i K_im with per-output complex bias."""

    k_re: Tensor
    k_im: Tensor
    bias_re: Tensor
    bias_im: Tensor

    def __post_init__(self):
        if self.k_re.shape != self.k_im.shape:
            raise ShapeError(f"k_re {self.k_re.shape} and k_im {self.k_im.shape} differ")
        c_out = self.k_re.shape[0]
        if self.bias_re.shape != (c_out,) or self.bias_im.shape != (c_out,):
            raise ShapeError(f"complex bias must have shape ({c_out},)")

    @classmethod
    def create(cls, c_in, c_out, rng, name="conv"):
        """Glorot-uniform real and imaginary kernels, fan counts on complex channels."""
        shape = (c_out, c_in, 3, 3)
        k_re = glorot_uniform(shape, c_in * 9, c_out * 9, rng)
        k_im = glorot_uniform(shape, c_in * 9, c_out * 9, rng)
        return cls(
            Tensor(k_re, requires_grad=True, name=f"{name}.weight_re"),
            Tensor(k_im, requires_grad=True, name=f"{name}.weight_im"),
            Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias_re"),
            Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias_im"),
        )

    @property
    def c_in(self):
        return self.k_re.shape[1]

    @property
    def c_out(self):
        return self.k_re.shape[0]

    def block_matrix(self):
        """Real kernel [[K_re, -K_im], [K_im, K_re]] acting on stacked [M_re; M_im]."""
        kr, ki = self.k_re.data, self.k_im.data
        top = np.concatenate([kr, -ki], axis=1)
        bottom = np.concatenate([ki, kr], axis=1)
        return np.concatenate([top, bottom], axis=0)


def complex_conv2d(m, k):
    """Complex 3x3 'same' convolution.

    re' = M_re*K_re - M_im*K_im + b_re and im' = M_re*K_im + M_im*K_re + b_im.
    The four real convolutions are evaluated together as one correlation with
    the block kernel from :meth:`ComplexKernel.block_matrix`; gradients are
    split back onto K_re and K_im.
    """
    if not isinstance(m, ComplexTensor):
        raise TypeError("complex_conv2d expects a ComplexTensor input")
    if m.channels != k.c_in:
        raise ShapeError(f"complex_conv2d: input has {m.channels} complex channels, kernel expects {k.c_in}")
    x = m.stacked
    o, c = k.c_out, k.c_in
    block = k.block_matrix()
    out, xp = _conv.corr3x3(x.data, block)
    out[:, :o] += k.bias_re.data[None, :, None, None]
    out[:, o:] += k.bias_im.data[None, :, None, None]

    def _backward(g):
        gx = _conv.corr3x3_input_grad(g, block) if x.requires_grad else None
        gw = _conv.corr3x3_weight_grad(xp, g)
        g_re = gw[:o, :c] + gw[o:, c:]
        g_im = gw[o:, :c] - gw[:o, c:]
        return gx, g_re, g_im, g[:, :o].sum(axis=(0, 2, 3)), g[:, o:].sum(axis=(0, 2, 3))

    out_t = _make(out, (x, k.k_re, k.k_im, k.bias_re, k.bias_im), _backward, "complex_conv2d")
    return ComplexTensor.from_stacked(out_t)


def inv_sqrt_2x2(v):
    """Inverse square root of symmetric positive-definite 2x2 matrices.

    Accepts a single (2, 2) matrix or a stack (..., 2, 2). Uses the closed
    form sqrt(V) = (V + s I) / t with s = sqrt(det V), t = sqrt(tr V + 2 s).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-2:] != (2, 2):
        raise ShapeError(f"inv_sqrt_2x2 expects (..., 2, 2), got {v.shape}")
    a, b, b2, d = v[..., 0, 0], v[..., 0, 1], v[..., 1, 0], v[..., 1, 1]
    if not np.allclose(b, b2, rtol=1e-12, atol=0.0):
        raise ConditioningError("inv_sqrt_2x2: matrix is not symmetric")
    det = a * d - b * b
    if not (np.all(np.isfinite(v)) and np.all(a > 0) and np.all(det > 0)):
        raise ConditioningError("inv_sqrt_2x2: matrix is not positive definite")
    s = np.sqrt(det)
    t = np.sqrt(a + d + 2.0 * s)
    scale = 1.0 / (s * t)
    w = np.empty_like(v)
    w[..., 0, 0] = (d + s) * scale
    w[..., 0, 1] = w[..., 1, 0] = -b * scale
    w[..., 1, 1] = (a + s) * scale
    return w


@dataclass
class ComplexBNState:
    """Affine parameters and running statistics of a complex whitening BN layer.

    ``gamma`` rows are (rr, ri, ii) of a symmetric 2x2 matrix; ``running_cov``
    uses the same packing. ``beta`` and ``running_mean`` rows are (re, im).
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_cov: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def create(cls, channels, name="bn"):
        gamma = np.zeros((channels, 3))
        gamma[:, 0] = gamma[:, 2] = 1.0 / np.sqrt(2.0)
        cov = np.zeros((channels, 3))
        cov[:, 0] = cov[:, 2] = 0.5
        return cls(
            gamma=Tensor(gamma, requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros((channels, 2)), requires_grad=True, name=f"{name}.beta"),
            running_mean=np.zeros((channels, 2)),
            running_cov=cov,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


def _unpack(packed):
    v = np.empty(packed.shape[:-1] + (2, 2))
    v[..., 0, 0] = packed[..., 0]
    v[..., 0, 1] = v[..., 1, 0] = packed[..., 1]
    v[..., 1, 1] = packed[..., 2]
    return v


def _bcast(vec):
    return vec[None, :, None, None]


def batch_statistics(re, im):
    """Per-channel mean (c, 2) and packed covariance (c, 3) over (n, h, w)."""
    mr = re.mean(axis=(0, 2, 3))
    mi = im.mean(axis=(0, 2, 3))
    cr = re - _bcast(mr)
    ci = im - _bcast(mi)
    cov = np.stack(
        [(cr * cr).mean(axis=(0, 2, 3)), (cr * ci).mean(axis=(0, 2, 3)), (ci * ci).mean(axis=(0, 2, 3))],
        axis=-1,
    )
    return np.stack([mr, mi], axis=-1), cov


def _whitening(mean, cov, epsilon):
    v = _unpack(cov)
    v[..., 0, 0] += epsilon
    v[..., 1, 1] += epsilon
    return mean, inv_sqrt_2x2(v)


def whiten(x, state=None, mode="train"):
    """Whitened (pre-affine) real and imaginary maps as numpy arrays.

    Uses batch statistics in train mode and running statistics in infer
    mode; does not update ``state``.
    """
    epsilon = BN_EPSILON if state is None else state.epsilon
    c = x.channels
    re, im = x.stacked.data[:, :c], x.stacked.data[:, c:]
    if mode == "train":
        mean, cov = batch_statistics(re, im)
    else:
        mean, cov = state.running_mean, state.running_cov
    mean, w = _whitening(mean, cov, epsilon)
    cr = re - _bcast(mean[:, 0])
    ci = im - _bcast(mean[:, 1])
    return (
        _bcast(w[:, 0, 0]) * cr + _bcast(w[:, 0, 1]) * ci,
        _bcast(w[:, 1, 0]) * cr + _bcast(w[:, 1, 1]) * ci,
    )


def _sylvester_sym(s_half, rhs):
    """Solve S X + X S = rhs for symmetric positive-definite 2x2 S (batched)."""
    lam, q = np.linalg.eigh(s_half)
    qt = np.swapaxes(q, -1, -2)
    inner = qt @ rhs @ q / (lam[..., :, None] + lam[..., None, :])
    return q @ inner @ qt


def _whitening_stats_grad(gw, cr, ci, w):
    """Input-gradient contribution from the dependence of V^{-1/2} on the batch.

    ``gw`` is dL/dW per channel (c, 2, 2) for x_hat = W (x - mean), with
    W = V^{-1/2} and V = cov + eps*I. Returns the extra gradient on the
    centred maps (before the mean-removal projection).
    """
    # dW = -W dS W with S = V^{1/2}, and S dS + dS S = dV
    g_s = -w @ gw @ w
    g_s = 0.5 * (g_s + np.swapaxes(g_s, -1, -2))
    s_half = np.linalg.inv(w)
    s_half = 0.5 * (s_half + np.swapaxes(s_half, -1, -2))
    g_v = _sylvester_sym(s_half, g_s)
    g_v = g_v + np.swapaxes(g_v, -1, -2)
    count = cr.shape[0] * cr.shape[2] * cr.shape[3]
    dcr = (_bcast(g_v[:, 0, 0]) * cr + _bcast(g_v[:, 0, 1]) * ci) / count
    dci = (_bcast(g_v[:, 1, 0]) * cr + _bcast(g_v[:, 1, 1]) * ci) / count
    return dcr, dci


def complex_batch_norm(x, state, mode="train", stats_grad=True):
    """Complex batch normalization by 2x2 covariance whitening.

    ``out = gamma @ V^{-1/2} (x - E[x]) + beta`` per complex channel, with
    V + eps*I in place of V. Train mode uses batch statistics and updates
    the running estimates; infer mode uses the running estimates. In train
    mode the backward pass differentiates through the batch mean and
    covariance unless ``stats_grad=False``, which freezes them.
    """
    if not isinstance(x, ComplexTensor):
        raise TypeError("complex_batch_norm expects a ComplexTensor")
    c = x.channels
    if c != state.channels:
        raise ShapeError(f"complex_batch_norm: {c} channels but state has {state.channels}")
    data = x.stacked.data
    re, im = data[:, :c], data[:, c:]
    if mode == "train":
        n, _, h, w_ = re.shape
        if n * h * w_ < 2:
            raise ShapeError("complex_batch_norm: degenerate batch with a single element per channel")
        mean, cov = batch_statistics(re, im)
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean
        state.running_cov = state.momentum * state.running_cov + (1 - state.momentum) * cov
    elif mode == "infer":
        mean, cov = state.running_mean, state.running_cov
        stats_grad = False
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    mean, w = _whitening(mean, cov, state.epsilon)
    wrr, wri, wii = _bcast(w[:, 0, 0]), _bcast(w[:, 0, 1]), _bcast(w[:, 1, 1])
    cr = re - _bcast(mean[:, 0])
    ci = im - _bcast(mean[:, 1])
    xr = wrr * cr + wri * ci
    xi = wri * cr + wii * ci

    gamma, beta = state.gamma, state.beta
    grr, gri, gii = (_bcast(gamma.data[:, j]) for j in range(3))
    out = np.empty_like(data)
    out[:, :c] = grr * xr + gri * xi + _bcast(beta.data[:, 0])
    out[:, c:] = gri * xr + gii * xi + _bcast(beta.data[:, 1])

    def _backward(g):
        g_r, g_i = g[:, :c], g[:, c:]
        dxr = grr * g_r + gri * g_i
        dxi = gri * g_r + gii * g_i
        gx = np.empty_like(g)
        gx[:, :c] = wrr * dxr + wri * dxi
        gx[:, c:] = wri * dxr + wii * dxi
        axes = (0, 2, 3)
        if stats_grad:
            gw = np.stack(
                [
                    np.stack([(dxr * cr).sum(axis=axes), (dxr * ci).sum(axis=axes)], axis=-1),
                    np.stack([(dxi * cr).sum(axis=axes), (dxi * ci).sum(axis=axes)], axis=-1),
                ],
                axis=-2,
            )
            er, ei = _whitening_stats_grad(gw, cr, ci, w)
            gx[:, :c] += er
            gx[:, c:] += ei
            gx[:, :c] -= gx[:, :c].mean(axis=axes, keepdims=True)
            gx[:, c:] -= gx[:, c:].mean(axis=axes, keepdims=True)
        dgamma = np.stack(
            [(g_r * xr).sum(axis=axes), (g_r * xi + g_i * xr).sum(axis=axes), (g_i * xi).sum(axis=axes)],
            axis=-1,
        )
        dbeta = np.stack([g_r.sum(axis=axes), g_i.sum(axis=axes)], axis=-1)
        return gx, dgamma, dbeta

    out_t = _make(out, (x.stacked, gamma, beta), _backward, "complex_batch_norm")
    return ComplexTensor.from_stacked(out_t)


def count_complex_params(spec):
    """(trainable, total_on_graph) for a complex architecture spec.

    Each complex conv holds 2*c_in*c_out*9 weights and 2*c_out biases. Each
    complex BN channel has 5 trainable values (3 gamma, 2 beta) and 5
    running values (2 mean, 3 covariance).
    """
    if spec.domain != "complex":
        raise ValueError(f"{spec.name} is not a complex architecture")
    trainable = running = 0
    c_in = spec.input_channels
    for layer in spec.layers:
        trainable += 2 * c_in * layer.filters * 9 + 2 * layer.filters
        if layer.batch_norm:
            trainable += 5 * layer.filters
            running += 5 * layer.filters
        c_in = layer.filters
    return trainable, trainable + running
