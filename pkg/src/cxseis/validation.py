"""Input checks shared by the estimator wrappers.

sklearn's ``check_array`` rejects complex data, so patches and sections are
validated here instead.
"""

import numpy as np

from .errors import ShapeError


def check_finite(x, what="input"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains NaN or infinity")
    return x


def check_patches(X, allow_complex=True, multiple_of=1):
    """Coerce a stack of 2D patches to a (n, 1, h, w) float or complex array.

    Accepts (h, w), (n, h, w) or (n, 1, h, w). Both spatial sizes must be
    multiples of ``multiple_of``.
    """
    X = np.asarray(X)
    if X.dtype == object or not (np.issubdtype(X.dtype, np.number) or X.dtype == bool):
        raise TypeError(f"expected numeric patches, got dtype {X.dtype}")
    if np.iscomplexobj(X):
        if not allow_complex:
            raise TypeError("complex input is not accepted here")
        X = X.astype(np.complex128)
    else:
        X = X.astype(np.float64)
    if X.ndim == 2:
        X = X[None, None]
    elif X.ndim == 3:
        X = X[:, None]
    elif X.ndim != 4 or X.shape[1] != 1:
        raise ShapeError(f"expected (h, w), (n, h, w) or (n, 1, h, w) patches, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ShapeError("no patches given")
    h, w = X.shape[2:]
    if h % multiple_of or w % multiple_of:
        raise ShapeError(f"patch size {h}x{w} is not divisible by {multiple_of}")
    return check_finite(X, "patches")


def restore_layout(out, like):
    """Give ``out`` (n, 1, h, w) the layout of the original input ``like``."""
    like = np.asarray(like)
    if like.ndim == 2:
        return out[0, 0]
    if like.ndim == 3:
        return out[:, 0]
    return out
