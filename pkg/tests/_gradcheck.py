"""Central finite-difference gradient harness used across the test suite."""

import numpy as np

from cxseis.tensor import Tape, Tensor, backward, mul, total

STEP = 1e-5


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-10)


def gradcheck(fn, arrays, probes=20, seed=0, skip=None, step=STEP):
    """Largest relative error between tape gradients and central differences.

    ``fn`` maps tensors to an output tensor; the scalar under test is
    sum(out * w) for a fixed random ``w``. ``skip(k, index, arrays)`` marks
    probes next to kinks (ReLU at zero, pooling ties) to exclude.
    Returns ``(max_rel_err, probes_used)``.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
        w = Tensor(rng.normal(size=out.shape))
        loss = total(mul(out, w))
    grads = backward(loss, tape)

    def objective(values):
        return float(np.sum(fn(*[Tensor(v) for v in values]).data * w.data))

    worst, used, attempts = 0.0, 0, 0
    while used < probes:
        attempts += 1
        if attempts > 50 * probes:
            raise RuntimeError("could not find enough probes away from kinks")
        k = int(rng.integers(len(arrays)))
        index = tuple(int(rng.integers(s)) for s in arrays[k].shape)
        if skip is not None and skip(k, index, arrays):
            continue
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[k][index] += step
        minus[k][index] -= step
        fd = (objective(plus) - objective(minus)) / (2 * step)
        g = grads.get(leaves[k])
        analytic = 0.0 if g is None else g[index]
        worst = max(worst, rel_err(fd, analytic))
        used += 1
    return worst, used
