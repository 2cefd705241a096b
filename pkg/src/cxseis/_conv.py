"""3x3 'same' cross-correlation kernels on NCHW float64 arrays.

The padded input is stored channels-last and flattened over the padded
spatial grid, so each of the nine kernel taps becomes one contiguous
(rows, c) @ (c, o) matrix product at a fixed offset. Output positions that
fall in the padding columns are computed and then discarded.
"""

import numpy as np


def pad_flat(x):
    """Zero-pad (n, c, h, w) by one pixel and flatten to (n, (h+2)*(w+2)+2, c)."""
    n, c, h, w = x.shape
    rows, cols = h + 2, w + 2
    # two trailing zeros keep the bottom-right tap in bounds
    xp = np.zeros((n, rows * cols + 2, c))
    xp[:, : rows * cols].reshape(n, rows, cols, c)[:, 1:-1, 1:-1] = x.transpose(0, 2, 3, 1)
    return xp


def _correlate_flat(xp, taps, h, w):
    # taps: (3, 3, c, o), C-contiguous; matmul on strided taps is far slower
    n = xp.shape[0]
    cols = w + 2
    length = h * cols
    out = np.zeros((n, length, taps.shape[-1]))
    for dy in range(3):
        for dx in range(3):
            off = dy * cols + dx
            out += xp[:, off : off + length] @ taps[dy, dx]
    return np.ascontiguousarray(out.reshape(n, h, cols, -1)[:, :, :w].transpose(0, 3, 1, 2))


def corr3x3(x, weight):
    """Forward pass. Returns (output, padded_input) so backward can reuse the padding."""
    n, c, h, w = x.shape
    xp = pad_flat(x)
    taps = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))
    return _correlate_flat(xp, taps, h, w), xp


def corr3x3_input_grad(gout, weight):
    """Gradient w.r.t. the input: correlation with the flipped, channel-swapped kernel."""
    n, o, h, w = gout.shape
    taps = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(2, 3, 0, 1))
    return _correlate_flat(pad_flat(gout), taps, h, w)


def corr3x3_weight_grad(xp, gout):
    """Gradient w.r.t. the (o, c, 3, 3) kernel given the padded forward input."""
    n, o, h, w = gout.shape
    c = xp.shape[-1]
    cols = w + 2
    length = h * cols
    gf = np.zeros((n, h, cols, o))
    gf[:, :, :w] = gout.transpose(0, 2, 3, 1)
    gf = gf.reshape(n, length, o)
    dw = np.empty((3, 3, c, o))
    for dy in range(3):
        for dx in range(3):
            off = dy * cols + dx
            dw[dy, dx] = (xp[:, off : off + length].transpose(0, 2, 1) @ gf).sum(axis=0)
    return np.ascontiguousarray(dw.transpose(3, 2, 0, 1))
