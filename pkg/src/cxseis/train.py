"""Adam training loop, run logs and multi-seed aggregation."""

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .complex_ops import ComplexTensor
from .errors import DivergenceError, NumericError, ShapeError
from .model import build, save_weights
from .tensor import Tensor, backward, mse

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4, 5, 6)
DIVERGENCE_LIMIT = 1e3


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seeds: tuple = DEFAULT_SEEDS
    loss: str = "mse"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be an integer >= 1, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be an integer >= 1, got {self.batch_size}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.loss != "mse":
            raise ValueError(f"only the 'mse' loss is supported, got {self.loss!r}")


@dataclass
class AdamState:
    """First/second moments per parameter name and the step counter."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def create(cls, params):
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``cfg`` is anything with learning_rate, beta1, beta2 and eps attributes.
    ``grads`` maps parameter names to arrays; a missing or ``None`` entry
    counts as a zero gradient. Every gradient is checked before anything is
    modified, so a rejected step leaves parameters and moments untouched.
    """
    checked = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} does not match parameter {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}; Adam step rejected")
        if name not in state.m:
            raise KeyError(f"no Adam moments for parameter {name}")
        checked[name] = g

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in checked.items():
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        step = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        params[name].data = params[name].data - step
    return params, state


# ---------------------------------------------------------------------------
# run logs


@dataclass
class EpochRecord:
    epoch: int
    seed: int
    train_loss: float
    val_loss: float
    # timing varies run to run, so it is left out of equality
    wall_seconds: float = field(default=0.0, compare=False)


@dataclass
class RunLog:
    seed: int
    records: list = field(default_factory=list)
    best_epoch: int = 0
    aborted: bool = False

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        if not (math.isfinite(record.train_loss) and math.isfinite(record.val_loss)):
            raise NumericError(f"epoch {record.epoch}: non-finite loss")
        self.records.append(record)

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]

    @property
    def best_val(self):
        return min(self.val_losses) if self.records else math.nan

    @property
    def final_val(self):
        return self.records[-1].val_loss if self.records else math.nan

    def to_csv(self, path):
        write_loss_csv([self], path)


def write_loss_csv(logs, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "seed", "train_loss", "val_loss", "wall_seconds"])
        for run in logs:
            for r in run.records:
                writer.writerow([r.epoch, r.seed, repr(r.train_loss), repr(r.val_loss), f"{r.wall_seconds:.3f}"])


def read_loss_csv(path):
    logs = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            seed = int(row["seed"])
            run = logs.setdefault(seed, RunLog(seed))
            run.append(
                EpochRecord(
                    int(row["epoch"]), seed, float(row["train_loss"]), float(row["val_loss"]), float(row["wall_seconds"])
                )
            )
    return [logs[s] for s in sorted(logs)]


# ---------------------------------------------------------------------------
# training


def _as_input(model, batch):
    if model.is_complex:
        return ComplexTensor.from_stacked(Tensor(batch))
    return Tensor(batch)


def _output(model, out):
    return out.stacked if model.is_complex else out


def _patch_array(model, patches):
    """Network input/target array for a patch set: (n, 2, h, w) complex or (n, 1, h, w) real."""
    if patches is None or len(patches) == 0:
        raise ValueError("training needs non-empty train and validation patch sets")
    if model.is_complex and not patches.is_complex:
        raise ValueError(f"{model.spec.name} is complex; extract patches with analytic=True")
    data = patches.stacked() if model.is_complex else patches.re
    factor = 2**model.spec.n_pools
    if data.shape[2] % factor or data.shape[3] % factor:
        raise ShapeError(f"patch size {data.shape[2:]} is not divisible by {factor}")
    return np.ascontiguousarray(data, dtype=np.float64)


def evaluate_loss(model, data, batch_size=64):
    """Inference-mode mse averaged over all samples of ``data``."""
    total = 0.0
    for start in range(0, len(data), batch_size):
        batch = data[start : start + batch_size]
        out = _output(model, model.forward(_as_input(model, batch), mode="infer"))
        total += float(np.sum((out.data - batch) ** 2))
    return total / data.size


def _snapshot(model):
    return {k: np.array(v, copy=True) for k, v in model.state_dict().items()}


def train(model, patchsets, cfg, seed=None, checkpoint=None):
    """Fit ``model`` with Adam on mse and return ``(model, RunLog)``.

    ``patchsets`` maps ``'train'`` and ``'val'`` to patch sets. Each epoch
    visits the training patches in an order drawn from ``(seed, epoch)``.
    The returned model holds the weights of the epoch with the lowest
    validation loss. A loss above 1e3 or a non-finite loss aborts with
    :class:`DivergenceError`, carrying the last good weights and the log.
    ``checkpoint(model, adam_state, epoch)`` is called whenever the best
    validation loss improves.
    """
    if seed is None:
        seed = cfg.seeds[0]
    x_train = _patch_array(model, patchsets.get("train"))
    x_val = _patch_array(model, patchsets.get("val"))
    params = model.parameters()
    adam = AdamState.create(params)
    run = RunLog(int(seed))
    best = _snapshot(model)
    best_val = math.inf
    n = len(x_train)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng([int(seed), epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = x_train[order[start : start + cfg.batch_size]]
            out = _output(model, model.forward(_as_input(model, batch), mode="train"))
            loss = mse(out, batch)
            value = loss.item()
            if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
                model.load_state_dict(best)
                run.aborted = True
                raise DivergenceError(
                    f"seed {seed}: loss {value} at epoch {epoch}, restored epoch {run.best_epoch} weights",
                    model=model,
                    log=run,
                )
            model.zero_grad()
            grads = backward(loss)
            try:
                adam_step(params, {k: grads.get(p) for k, p in params.items()}, adam, cfg)
            except NumericError as exc:
                model.load_state_dict(best)
                run.aborted = True
                raise DivergenceError(f"seed {seed}, epoch {epoch}: {exc}", model=model, log=run) from exc
            loss_sum += value * len(batch)
        val = evaluate_loss(model, x_val)
        if not math.isfinite(val) or val > DIVERGENCE_LIMIT:
            model.load_state_dict(best)
            run.aborted = True
            raise DivergenceError(f"seed {seed}: validation loss {val} at epoch {epoch}", model=model, log=run)
        run.append(EpochRecord(epoch, int(seed), loss_sum / n, val, time.perf_counter() - started))
        log.info("seed %d epoch %d train %.6g val %.6g", seed, epoch, loss_sum / n, val)
        if val < best_val:
            best_val = val
            best = _snapshot(model)
            run.best_epoch = epoch
            if checkpoint is not None:
                checkpoint(model, adam, epoch)

    model.load_state_dict(best)
    return model, run


# ---------------------------------------------------------------------------
# multi-seed runs


@dataclass
class MultiSeedResult:
    logs: list
    models: list
    mean: float
    std: float
    aborted: list = field(default_factory=list)

    def summary(self):
        return f"{self.mean:.3f} +/- {self.std:.3f}"


def aggregate(values):
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return math.nan, math.nan
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def worker_count():
    raw = os.environ.get("CXSEIS_WORKERS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"CXSEIS_WORKERS must be an integer, got {raw!r}") from None
    return max(n, 1)


def seed_dir(out_dir, seed):
    return os.path.join(out_dir, f"seed_{seed}")


def _run_one(spec, patchsets, cfg, seed, out_dir=None):
    model = build(spec, seed=seed)
    checkpoint = None
    if out_dir is not None:
        run_dir = seed_dir(out_dir, seed)
        os.makedirs(run_dir, exist_ok=True)
        weights = os.path.join(run_dir, "weights.cxae")

        def checkpoint(m, adam, epoch):
            save_weights(m, weights, optimizer=adam)

    try:
        model, run = train(model, patchsets, cfg, seed=seed, checkpoint=checkpoint)
    except DivergenceError as exc:
        if out_dir is not None:
            exc.log.to_csv(os.path.join(run_dir, "loss.csv"))
        return seed, None, exc.log, str(exc)
    if out_dir is not None:
        run.to_csv(os.path.join(run_dir, "loss.csv"))
    return seed, model, run, None


def multi_seed(spec, patchsets, cfg, workers=None, out_dir=None):
    """Train one model per seed in ``cfg.seeds`` and aggregate best validation losses.

    Runs are independent and may execute in worker processes (capped by
    ``CXSEIS_WORKERS``); results are merged in seed order. Aborted runs are
    reported with a warning and excluded from the aggregate. With
    ``out_dir`` each run writes ``seed_<k>/weights.cxae`` (best epoch, with
    Adam moments) and ``seed_<k>/loss.csv``.
    """
    workers = min(workers or worker_count(), len(cfg.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, spec, patchsets, cfg, s, out_dir) for s in cfg.seeds]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(spec, patchsets, cfg, s, out_dir) for s in cfg.seeds]

    logs, models, finals, aborted = [], [], [], []
    for seed, model, run, error in results:
        logs.append(run)
        if error is not None:
            log.warning("run with seed %d aborted and excluded from the aggregate: %s", seed, error)
            aborted.append(seed)
            continue
        models.append(model)
        finals.append(run.best_val)
    mean, std = aggregate(finals)
    return MultiSeedResult(logs, models, mean, std, aborted)
