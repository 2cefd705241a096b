import math
from types import SimpleNamespace

import numpy as np
import pytest

from cxseis.errors import DivergenceError, NumericError, ShapeError
from cxseis.io import PatchSet, SeismicVolume, extract_patches, normalize
from cxseis.model import ArchitectureSpec, LayerSpec, build
from cxseis.tensor import Tensor, backward, mse
from cxseis.train import (
    AdamState,
    EpochRecord,
    RunLog,
    TrainConfig,
    adam_step,
    aggregate,
    multi_seed,
    read_loss_csv,
    train,
    worker_count,
    write_loss_csv,
)

TINY = ArchitectureSpec(
    "tiny",
    (
        LayerSpec("conv", 4, True),
        LayerSpec("pool_conv", 4, True),
        LayerSpec("up_conv", 4, True),
        LayerSpec("conv", 1, False, activation="tanh"),
    ),
)
TINY_C = ArchitectureSpec(
    "tiny_c",
    tuple(LayerSpec(l.kind, l.filters, l.batch_norm, "complex", l.activation) for l in TINY.layers),
    "complex",
)


def tiny_sets(analytic=False):
    rng = np.random.default_rng(0)
    t = np.arange(64)
    base = np.sin(2 * np.pi * t / 9.0) * np.exp(-((t - 30) ** 2) / 400.0)
    data = np.stack([np.stack([np.roll(base, int(s)) for s in rng.integers(0, 20, size=16)]) for _ in range(4)])
    vol, _ = normalize(SeismicVolume(data + 0.05 * rng.normal(size=data.shape)))
    ps = extract_patches(vol, size=16, stride=16, axes=("inline",), analytic=analytic)
    idx = np.arange(len(ps))
    return {"train": ps.subset(idx[:12]), "val": ps.subset(idx[12:])}


def params_of(**arrays):
    return {k: Tensor(np.array(v, dtype=float), requires_grad=True) for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_parameters():
    p = params_of(w=[1.0, -2.0])
    state = AdamState.create(p)
    adam_step(p, {"w": np.zeros(2)}, state, TrainConfig())
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_is_minus_lr():
    p = params_of(w=0.5)
    cfg = TrainConfig(learning_rate=1e-3)
    adam_step(p, {"w": np.array(1.0)}, AdamState.create(p), cfg)
    assert p["w"].data == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_matches_hand_iteration():
    p = params_of(w=[0.3, -1.0])
    state = AdamState.create(p)
    cfg = TrainConfig(learning_rate=0.01)
    w, m, v = np.array([0.3, -1.0]), np.zeros(2), np.zeros(2)
    for t in range(1, 6):
        g = np.array([t, -2.0 * t])
        adam_step(p, {"w": g}, state, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"].data, w, rtol=1e-14)


def test_adam_descends_a_quadratic():
    p = params_of(w=[3.0, -2.0])
    state = AdamState.create(p)
    cfg = TrainConfig(learning_rate=0.05)
    for _ in range(500):
        adam_step(p, {"w": 2 * p["w"].data}, state, cfg)
    assert np.max(np.abs(p["w"].data)) < 0.05


def test_adam_with_zero_lr_is_bit_identical():
    p = params_of(w=np.random.default_rng(0).normal(size=5))
    before = p["w"].data.tobytes()
    cfg = SimpleNamespace(learning_rate=0.0, beta1=0.9, beta2=0.999, eps=1e-8)
    state = AdamState.create(p)
    for _ in range(3):
        adam_step(p, {"w": np.ones(5)}, state, cfg)
    assert p["w"].data.tobytes() == before


def test_adam_rejects_non_finite_gradient_untouched():
    p = params_of(a=[1.0], b=[2.0])
    state = AdamState.create(p)
    with pytest.raises(NumericError, match="b"):
        adam_step(p, {"a": np.ones(1), "b": np.array([np.inf])}, state, TrainConfig())
    assert state.t == 0
    np.testing.assert_array_equal(p["a"].data, [1.0])
    with pytest.raises(ShapeError):
        adam_step(p, {"a": np.ones(2)}, state, TrainConfig())


@pytest.mark.parametrize(
    "kwargs",
    [
        {"epochs": 0},
        {"epochs": 1.5},
        {"learning_rate": 0.0},
        {"learning_rate": -1e-3},
        {"beta1": 1.0},
        {"beta2": 0.0},
        {"batch_size": 0},
        {"seeds": ()},
        {"loss": "mae"},
    ],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_train_config_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.epochs, len(cfg.seeds)) == (1e-3, 100, 7)


# ---------------------------------------------------------------------------
# training loop


def test_training_lowers_loss_on_tiny_set():
    sets = tiny_sets()
    model, run = train(build(TINY, 0), sets, TrainConfig(epochs=15, batch_size=4, learning_rate=1e-2), seed=0)
    assert [r.epoch for r in run.records] == list(range(1, 16))
    assert run.train_losses[-1] < 0.5 * run.train_losses[0]
    assert run.best_val < run.val_losses[0]
    assert run.best_epoch == int(np.argmin(run.val_losses)) + 1


def test_each_step_uses_fresh_gradients():
    sets = tiny_sets()
    cfg = TrainConfig(epochs=1, batch_size=6, learning_rate=1e-2)
    trained, _ = train(build(TINY, 3), sets, cfg, seed=9)

    model = build(TINY, 3)
    params = model.parameters()
    adam = AdamState.create(params)
    x = sets["train"].re
    order = np.random.default_rng([9, 1]).permutation(len(x))
    for start in (0, 6):
        batch = x[order[start : start + 6]]
        model.zero_grad()
        grads = backward(mse(model.forward(Tensor(batch), "train"), batch))
        adam_step(params, {k: grads.get(p) for k, p in params.items()}, adam, cfg)
    for k, v in model.state_dict().items():
        assert trained.state_dict()[k].tobytes() == v.tobytes(), k


@pytest.mark.parametrize("spec, analytic", [(TINY, False), (TINY_C, True)])
def test_training_is_deterministic(spec, analytic):
    sets = tiny_sets(analytic)
    cfg = TrainConfig(epochs=2, batch_size=5)
    m1, r1 = train(build(spec, 1), sets, cfg, seed=4)
    m2, r2 = train(build(spec, 1), sets, cfg, seed=4)
    assert r1 == r2
    for k, v in m1.state_dict().items():
        assert v.tobytes() == m2.state_dict()[k].tobytes()
    _, r3 = train(build(spec, 1), sets, cfg, seed=5)
    assert r3.train_losses != r1.train_losses


def test_complex_model_needs_analytic_patches():
    with pytest.raises(ValueError, match="analytic"):
        train(build(TINY_C), tiny_sets(False), TrainConfig(epochs=1))


def test_training_needs_validation_set():
    sets = tiny_sets()
    with pytest.raises(ValueError):
        train(build(TINY), {"train": sets["train"]}, TrainConfig(epochs=1))


def test_divergence_aborts_with_log_and_model():
    sets = tiny_sets()
    big = sets["train"]
    big = PatchSet(big.re * 1e3, None, big.origins)
    with pytest.raises(DivergenceError) as info:
        train(build(TINY), {"train": big, "val": sets["val"]}, TrainConfig(epochs=2))
    assert info.value.log.aborted
    assert info.value.log.records == []
    assert info.value.model is not None


def test_checkpoint_called_on_improvement():
    calls = []
    train(
        build(TINY),
        tiny_sets(),
        TrainConfig(epochs=3, batch_size=4, learning_rate=1e-2),
        seed=0,
        checkpoint=lambda m, adam, epoch: calls.append((epoch, adam.t)),
    )
    assert calls and calls[0] == (1, 3)
    assert [c[0] for c in calls] == sorted(c[0] for c in calls)


# ---------------------------------------------------------------------------
# logs and aggregation


def test_run_log_rules():
    run = RunLog(0)
    run.append(EpochRecord(1, 0, 1.0, 2.0))
    with pytest.raises(ValueError):
        run.append(EpochRecord(1, 0, 1.0, 2.0))
    with pytest.raises(NumericError):
        run.append(EpochRecord(2, 0, math.nan, 2.0))
    assert EpochRecord(1, 0, 1.0, 2.0, 3.0) == EpochRecord(1, 0, 1.0, 2.0, 9.0)


def test_loss_csv_round_trip(tmp_path):
    logs = [RunLog(s, [EpochRecord(e, s, 1 / (e + s + 1), 0.1 * e + 1e-17, 1.5) for e in (1, 2, 3)]) for s in (0, 4)]
    path = tmp_path / "loss.csv"
    write_loss_csv(logs, path)
    again = read_loss_csv(path)
    assert [r.seed for r in again] == [0, 4]
    assert [r.records for r in again] == [r.records for r in logs]
    assert path.read_text().splitlines()[0] == "epoch,seed,train_loss,val_loss,wall_seconds"


def test_aggregate_arithmetic():
    assert aggregate([0.10, 0.12, 0.14]) == pytest.approx((0.12, 0.02))
    assert aggregate([0.3]) == (0.3, 0.0)
    assert all(math.isnan(v) for v in aggregate([]))


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CXSEIS_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CXSEIS_WORKERS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("CXSEIS_WORKERS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_multi_seed_single_and_repeated_seed(tmp_path):
    sets = tiny_sets()
    one = multi_seed(TINY, sets, TrainConfig(epochs=1, seeds=(2,)), workers=1)
    assert one.std == 0.0 and one.mean == one.logs[0].best_val
    same = multi_seed(TINY, sets, TrainConfig(epochs=1, seeds=(2, 2)), workers=1, out_dir=str(tmp_path))
    assert same.std == 0.0 and same.mean == one.mean
    assert (tmp_path / "seed_2" / "weights.cxae").exists()
    assert read_loss_csv(tmp_path / "seed_2" / "loss.csv")[0].records == one.logs[0].records


def test_multi_seed_workers_match_serial():
    sets = tiny_sets()
    cfg = TrainConfig(epochs=1, seeds=(0, 1))
    serial = multi_seed(TINY, sets, cfg, workers=1)
    pooled = multi_seed(TINY, sets, cfg, workers=2)
    assert [l.records for l in serial.logs] == [l.records for l in pooled.logs]
    assert (serial.mean, serial.std) == (pooled.mean, pooled.std)


def test_multi_seed_excludes_aborted_runs():
    sets = tiny_sets()
    big = {"train": PatchSet(sets["train"].re * 1e3, None, sets["train"].origins), "val": sets["val"]}
    res = multi_seed(TINY, big, TrainConfig(epochs=1, seeds=(0, 1)), workers=1)
    assert res.aborted == [0, 1] and res.models == []
    assert math.isnan(res.mean)
